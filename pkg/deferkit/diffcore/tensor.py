"""
Reverse-mode differentiation over dense float64 arrays.

Every operation returns a new ``Node`` that remembers its parents and a
closure that pushes the output adjoint back into them. Graphs are built
fresh on each forward call and discarded afterwards.
"""
import logging
from typing import Any, Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from deferkit.errors import ContractViolation

logger = logging.getLogger(__name__)

ArrayLike = Union[float, int, Sequence[float], np.ndarray]


class Node:
    """A value in the expression graph together with its adjoint."""

    __slots__ = ("value", "grad", "parents", "op", "tag", "requires_grad", "_backward")
    # numpy scalars and arrays on the left defer to the reflected Node operators
    __array_ufunc__ = None

    def __init__(self,
                 value: ArrayLike,
                 parents: Tuple["Node", ...] = (),
                 op: str = "leaf",
                 requires_grad: bool = False,
                 tag: Any = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.parents = parents
        self.op = op
        self.tag = tag
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._backward: Callable[[], None] = lambda: None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        return f"Node(op={self.op}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis: Optional[int] = None):
        return sum_(self, axis=axis)

    def mean(self):
        return mean(self)

    def detach(self) -> "Node":
        return constant(self.value.copy())


def constant(value: ArrayLike) -> Node:
    """Wrap a value that gradients never flow into."""
    return Node(value, op="const")


def variable(value: ArrayLike, tag: Any = None) -> Node:
    """Create a leaf that collects gradients."""
    return Node(value, op="leaf", requires_grad=True, tag=tag)


def lift(x: Union[Node, ArrayLike]) -> Node:
    return x if isinstance(x, Node) else constant(x)


def _accumulate(node: Node, grad: np.ndarray) -> None:
    if not node.requires_grad:
        return
    if node.grad is None:
        node.grad = np.zeros_like(node.value)
    node.grad = node.grad + _unbroadcast(grad, node.value.shape)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _result(value: np.ndarray, parents: Iterable[Node], op: str) -> Node:
    return Node(value, parents=tuple(parents), op=op)


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Node:
    a, b = lift(a), lift(b)
    out = _result(a.value + b.value, (a, b), "add")

    def _backward():
        _accumulate(a, out.grad)
        _accumulate(b, out.grad)
    out._backward = _backward
    return out


def sub(a, b) -> Node:
    a, b = lift(a), lift(b)
    out = _result(a.value - b.value, (a, b), "sub")

    def _backward():
        _accumulate(a, out.grad)
        _accumulate(b, -out.grad)
    out._backward = _backward
    return out


def mul(a, b) -> Node:
    a, b = lift(a), lift(b)
    out = _result(a.value * b.value, (a, b), "mul")

    def _backward():
        _accumulate(a, out.grad * b.value)
        _accumulate(b, out.grad * a.value)
    out._backward = _backward
    return out


def div(a, b) -> Node:
    a, b = lift(a), lift(b)
    out = _result(a.value / b.value, (a, b), "div")

    def _backward():
        _accumulate(a, out.grad / b.value)
        _accumulate(b, -out.grad * a.value / (b.value ** 2))
    out._backward = _backward
    return out


def neg(a) -> Node:
    a = lift(a)
    out = _result(-a.value, (a,), "neg")

    def _backward():
        _accumulate(a, -out.grad)
    out._backward = _backward
    return out


def power(a, exponent: float) -> Node:
    a = lift(a)
    out = _result(a.value ** exponent, (a,), f"pow{exponent}")

    def _backward():
        _accumulate(a, out.grad * exponent * a.value ** (exponent - 1))
    out._backward = _backward
    return out


# ---------------------------------------------------------------------------
# elementwise nonlinearities
# ---------------------------------------------------------------------------

def exp(a) -> Node:
    a = lift(a)
    out = _result(np.exp(a.value), (a,), "exp")

    def _backward():
        _accumulate(a, out.grad * out.value)
    out._backward = _backward
    return out


def expm1(a) -> Node:
    a = lift(a)
    out = _result(np.expm1(a.value), (a,), "expm1")

    def _backward():
        _accumulate(a, out.grad * (out.value + 1.0))
    out._backward = _backward
    return out


def log(a) -> Node:
    a = lift(a)
    out = _result(np.log(a.value), (a,), "log")

    def _backward():
        _accumulate(a, out.grad / a.value)
    out._backward = _backward
    return out


def log1p(a) -> Node:
    a = lift(a)
    out = _result(np.log1p(a.value), (a,), "log1p")

    def _backward():
        _accumulate(a, out.grad / (1.0 + a.value))
    out._backward = _backward
    return out


def relu(a) -> Node:
    a = lift(a)
    out = _result(np.maximum(a.value, 0.0), (a,), "relu")

    def _backward():
        _accumulate(a, out.grad * (a.value > 0))
    out._backward = _backward
    return out


def tanh(a) -> Node:
    a = lift(a)
    out = _result(np.tanh(a.value), (a,), "tanh")

    def _backward():
        _accumulate(a, out.grad * (1.0 - out.value ** 2))
    out._backward = _backward
    return out


def abs_(a) -> Node:
    a = lift(a)
    out = _result(np.abs(a.value), (a,), "abs")

    def _backward():
        _accumulate(a, out.grad * np.sign(a.value))
    out._backward = _backward
    return out


def clip(a, lo: float, hi: float) -> Node:
    """Clamp into [lo, hi]; the gradient is zero on the flat parts."""
    a = lift(a)
    out = _result(np.clip(a.value, lo, hi), (a,), "clip")

    def _backward():
        inside = (a.value > lo) & (a.value < hi)
        _accumulate(a, out.grad * inside)
    out._backward = _backward
    return out


# ---------------------------------------------------------------------------
# reductions and shape
# ---------------------------------------------------------------------------

def sum_(a, axis: Optional[int] = None) -> Node:
    a = lift(a)
    out = _result(np.sum(a.value, axis=axis), (a,), "sum")

    def _backward():
        grad = out.grad if axis is None else np.expand_dims(out.grad, axis)
        _accumulate(a, np.broadcast_to(grad, a.value.shape))
    out._backward = _backward
    return out


def mean(a) -> Node:
    a = lift(a)
    return sum_(a) / float(max(a.value.size, 1))


def logsumexp(a, axis: int = 1) -> Node:
    """Row-wise log-sum-exp with max-shift."""
    a = lift(a)
    shift = np.max(a.value, axis=axis, keepdims=True)
    shifted = np.exp(a.value - shift)
    total = np.sum(shifted, axis=axis, keepdims=True)
    value = np.squeeze(shift + np.log(total), axis=axis)
    out = _result(value, (a,), "logsumexp")

    def _backward():
        softmax = shifted / total
        _accumulate(a, np.expand_dims(out.grad, axis) * softmax)
    out._backward = _backward
    return out


def getitem(a, key) -> Node:
    """Numpy indexing; repeated indices accumulate in the backward pass."""
    a = lift(a)
    out = _result(a.value[key], (a,), "getitem")

    def _backward():
        grad = np.zeros_like(a.value)
        np.add.at(grad, key, out.grad)
        _accumulate(a, grad)
    out._backward = _backward
    return out


def pick(a, index: Sequence[int]) -> Node:
    """Select ``a[i, index[i]]`` for every row ``i``."""
    a = lift(a)
    index = np.asarray(index, dtype=int)
    return getitem(a, (np.arange(a.value.shape[0]), index))


def concat(nodes: List[Union[Node, ArrayLike]], axis: int = 0) -> Node:
    parts = [lift(n) for n in nodes]
    sizes = [p.value.shape[axis] for p in parts]
    out = _result(np.concatenate([p.value for p in parts], axis=axis), parts, "concat")

    def _backward():
        offsets = np.cumsum([0] + sizes)
        for part, start, stop in zip(parts, offsets[:-1], offsets[1:]):
            index = [slice(None)] * out.grad.ndim
            index[axis] = slice(start, stop)
            _accumulate(part, out.grad[tuple(index)])
    out._backward = _backward
    return out


def reshape(a, shape: Tuple[int, ...]) -> Node:
    a = lift(a)
    out = _result(a.value.reshape(shape), (a,), "reshape")

    def _backward():
        _accumulate(a, out.grad.reshape(a.value.shape))
    out._backward = _backward
    return out


def expand(a, axis: int) -> Node:
    a = lift(a)
    return reshape(a, np.expand_dims(a.value, axis).shape)


def matmul(a, b) -> Node:
    a, b = lift(a), lift(b)
    out = _result(a.value @ b.value, (a, b), "matmul")

    def _backward():
        _accumulate(a, out.grad @ b.value.T)
        _accumulate(b, a.value.T @ out.grad)
    out._backward = _backward
    return out


def affine(x, weight, bias) -> Node:
    """``x @ weight.T + bias`` for a batch ``x`` of shape (n, in)."""
    x, weight, bias = lift(x), lift(weight), lift(bias)
    out = _result(x.value @ weight.value.T + bias.value, (x, weight, bias), "affine")

    def _backward():
        _accumulate(x, out.grad @ weight.value)
        _accumulate(weight, out.grad.T @ x.value)
        _accumulate(bias, out.grad.sum(axis=0))
    out._backward = _backward
    return out


def row_norm(a) -> Node:
    """Euclidean norm of each row.

    A zero row takes the normalized all-ones subgradient so that ascent
    started exactly at the ball center still has a direction to follow.
    """
    a = lift(a)
    norms = np.sqrt(np.sum(a.value ** 2, axis=1))
    out = _result(norms, (a,), "row_norm")

    def _backward():
        width = a.value.shape[1]
        safe = np.where(norms > 0, norms, 1.0)[:, None]
        direction = np.where(norms[:, None] > 0, a.value / safe, 1.0 / np.sqrt(width))
        _accumulate(a, out.grad[:, None] * direction)
    out._backward = _backward
    return out


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def topological_order(root: Node) -> List[Node]:
    """Nodes reachable from ``root``, parents before children."""
    order: List[Node] = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(root: Node) -> List[Node]:
    """Fill ``grad`` on every node that depends on a variable.

    Grads are reset first, so calling this twice on the same graph gives
    the same adjoints. Forward values are never touched.
    """
    if root.value.size != 1:
        raise ContractViolation(f"backward needs a scalar loss, got shape {root.value.shape}")
    order = topological_order(root)
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node.grad is not None and node.requires_grad:
            node._backward()
    return order
