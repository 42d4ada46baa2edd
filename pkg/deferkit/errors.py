"""
Exception hierarchy shared by every deferkit package.

The CLI turns any DeferkitError into a JSON document on stderr, so each
error carries a ``details()`` mapping with whatever context it has.
"""
from typing import Any, Dict, List, Optional


class DeferkitError(Exception):
    """Base class for all deferkit errors."""

    def details(self) -> Dict[str, Any]:
        return {}


class ConfigurationError(DeferkitError, ValueError):
    """Invalid experiment configuration. Lists every violated field."""

    def __init__(self, message: str, errors: Optional[List[str]] = None):
        self.errors = list(errors or [])
        if self.errors:
            message = f"{message}: " + "; ".join(self.errors)
        super().__init__(message)

    def details(self) -> Dict[str, Any]:
        return {"errors": self.errors}


class ContractViolation(DeferkitError, ValueError):
    """A caller broke an operation's precondition (bad index, non-scalar loss)."""


class InputShapeError(ContractViolation):
    """Input dimension does not match the model or the ball center."""


class DomainError(DeferkitError, ValueError):
    """Argument outside a function's mathematical domain."""


class NonFiniteError(DeferkitError, FloatingPointError):
    """A value or gradient became NaN or infinite."""

    def __init__(self, message: str, coordinate: Optional[int] = None,
                 iteration: Optional[int] = None):
        self.coordinate = coordinate
        self.iteration = iteration
        extra = []
        if coordinate is not None:
            extra.append(f"coordinate={coordinate}")
        if iteration is not None:
            extra.append(f"iteration={iteration}")
        if extra:
            message = f"{message} ({', '.join(extra)})"
        super().__init__(message)

    def details(self) -> Dict[str, Any]:
        return {"coordinate": self.coordinate, "iteration": self.iteration}


class DataFormatError(DeferkitError, ValueError):
    """Malformed CSV input."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)

    def details(self) -> Dict[str, Any]:
        return {"line": self.line}


class UnsupportedDimensionError(DeferkitError, ValueError):
    """Exhaustive grid enumeration requested above two input dimensions."""


class CheckpointError(DeferkitError, ValueError):
    """Checkpoint file is unreadable or incompatible."""


class TrainingDivergedError(DeferkitError, RuntimeError):
    """Training objective became non-finite.

    ``models`` holds the parameters from the last finite step.
    """

    def __init__(self, message: str, models: Optional[Dict[str, Any]] = None,
                 epoch: Optional[int] = None):
        self.models = models or {}
        self.epoch = epoch
        super().__init__(message)

    def details(self) -> Dict[str, Any]:
        return {"epoch": self.epoch}
