"""
Outcome-specific perturbations and candidate-based sup estimates.

For every action j of a policy the search looks for a point of the ball
that drives the decision towards j (``reach``), that maximizes the margin
surrogate of j (``surrogate``) or that maximizes the deviation of j's
pairwise margins from their clean values (``penalty``). All outcomes of a
batch are searched together in one stacked problem.
"""
import logging
import os
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from deferkit.agents.costs import regression_loss, regression_loss_node
from deferkit.attacks.ball import AttackPlan, PerturbationBall, ball_candidates, project
from deferkit.attacks.pgd import pgd_ascend
from deferkit.diffcore import tensor as T
from deferkit.diffcore.model import ScoreModel, forward
from deferkit.errors import ContractViolation
from deferkit.surrogates.clean import margin_deviation_batch, phi_rho_u_batch, phi_u_batch
from deferkit.surrogates.params import SurrogateParams
from deferkit.surrogates.transforms import psi_rho, psi_u

logger = logging.getLogger(__name__)

DIRECTIONS = ("reach", "surrogate", "penalty")


class OutcomeProxySet:
    """Per-outcome perturbed inputs x'_j of one example and their objective values."""

    def __init__(self, proxies: Dict[int, np.ndarray], objective_values: Dict[int, float], direction: str):
        self.proxies = proxies
        self.objective_values = objective_values
        self.direction = direction

    def __len__(self) -> int:
        return len(self.proxies)

    def as_array(self) -> np.ndarray:
        return np.stack([self.proxies[j] for j in sorted(self.proxies)])


class ProxyCache:
    """Memo of proxy sets keyed by model fingerprint, example bytes and search settings."""

    def __init__(self):
        self._store: Dict[Tuple, OutcomeProxySet] = {}
        self.hits = 0

    def key(self, model: ScoreModel, x: np.ndarray, ball: PerturbationBall, plan: AttackPlan,
            params: SurrogateParams, direction: str) -> Tuple:
        return (model.fingerprint(), np.ascontiguousarray(x).tobytes(), ball.model_dump_json(),
                plan.model_dump_json(), params.model_dump_json(), direction)

    def get(self, key: Tuple) -> Optional[OutcomeProxySet]:
        found = self._store.get(key)
        if found is not None:
            self.hits += 1
        return found

    def put(self, key: Tuple, value: OutcomeProxySet) -> None:
        self._store[key] = value

    def __len__(self) -> int:
        return len(self._store)


def search_outcomes(model: ScoreModel,
                    X: np.ndarray,
                    ball: PerturbationBall,
                    plan: AttackPlan,
                    params: SurrogateParams,
                    direction: str = "reach",
                    counter=None,
                    track_best: bool = True,
                    phase: str = "pgd") -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """
    Search a proxy for every (example, outcome) pair.

    Args:
        model (ScoreModel): Policy whose outputs index the outcomes
        X (ndarray): Batch of centers (n, d)
        ball (PerturbationBall): Feasible set
        plan (AttackPlan): Search configuration
        params (SurrogateParams): u and rho of the objectives
        direction (str): "reach", "surrogate" or "penalty"
        counter: Optional pass counter
        track_best (bool): See ``pgd_ascend``
        phase (str): Counter label

    Returns:
        Tuple[ndarray, Optional[ndarray]]: Proxies (n, |A|, d) and values (n, |A|)
    """
    if direction not in DIRECTIONS:
        raise ContractViolation(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, d = X.shape
    A = model.output_dim
    centers = np.tile(X, (A, 1))
    targets = np.repeat(np.arange(A), n)

    if direction == "reach":
        def objective(z):
            return phi_u_batch(forward(model, z), targets, params.u)
        maximize = False
    elif direction == "surrogate":
        def objective(z):
            return phi_rho_u_batch(forward(model, z), targets, params.rho, params.u)
        maximize = True
    else:
        reference_rows = np.tile(np.arange(n), A)

        def objective(z):
            scores = forward(model, T.concat([T.constant(X), z], axis=0))
            return margin_deviation_batch(T.getitem(scores, slice(n, None)),
                                          T.getitem(scores, reference_rows), targets)
        maximize = True

    points, values = pgd_ascend(objective, centers, ball, plan, maximize=maximize,
                                track_best=track_best, counter=counter, phase=phase)
    proxies = points.reshape(A, n, d).transpose(1, 0, 2)
    return proxies, (None if values is None else values.reshape(A, n).T)


def outcome_proxies(model: ScoreModel,
                    x: np.ndarray,
                    ball: PerturbationBall,
                    plan: AttackPlan,
                    params: Optional[SurrogateParams] = None,
                    direction: str = "reach",
                    counter=None,
                    cache: Optional[ProxyCache] = None) -> OutcomeProxySet:
    """
    One proxy per outcome for a single example.

    ``reach`` descends Phi^u(., j) so the decision moves towards j;
    ``surrogate`` ascends Phi^{rho,u}(., j) for the sup terms of the margin
    loss; ``penalty`` ascends the margin deviation of the smooth loss.
    """
    params = params or SurrogateParams()
    x = np.asarray(x, dtype=np.float64)
    key = None
    if cache is not None:
        key = cache.key(model, x, ball, plan, params, direction)
        cached = cache.get(key)
        if cached is not None:
            return cached
    points, values = search_outcomes(model, x[None, :], ball, plan, params, direction, counter=counter)
    result = OutcomeProxySet(
        proxies={j: points[0, j] for j in range(model.output_dim)},
        objective_values={j: float(values[0, j]) for j in range(model.output_dim)},
        direction=direction,
    )
    if cache is not None:
        cache.put(key, result)
    return result


# ---------------------------------------------------------------------------
# candidate-based estimates
# ---------------------------------------------------------------------------

def candidate_points(X: np.ndarray, ball: PerturbationBall, plan: Optional[AttackPlan] = None,
                     extra_points: Optional[np.ndarray] = None,
                     searched: Optional[np.ndarray] = None) -> np.ndarray:
    """Candidate offsets, searched proxies and caller-supplied points, shape (n, P, d)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    parts = [ball_candidates(X, ball, plan)]
    if searched is not None:
        parts.append(np.asarray(searched, dtype=np.float64).reshape(X.shape[0], -1, X.shape[1]))
    if extra_points is not None:
        extra = np.asarray(extra_points, dtype=np.float64)
        if extra.ndim == 2:
            extra = np.broadcast_to(extra, (X.shape[0],) + extra.shape)
        parts.append(project(extra, X[:, None, :], ball))
    return np.concatenate(parts, axis=1)


def _scores_at(model: ScoreModel, points: np.ndarray) -> np.ndarray:
    n, p, d = points.shape
    return model.scores(points.reshape(n * p, d)).reshape(n, p, -1)


def margin_surrogate_table(scores: np.ndarray, rho: float, u: float) -> np.ndarray:
    """Phi^{rho,u}(s, j) for every j over the last axis."""
    A = scores.shape[-1]
    table = np.empty(scores.shape)
    for j in range(A):
        margins = scores[..., j:j + 1] - scores
        terms = psi_rho(margins, rho)
        terms[..., j] = 0.0
        table[..., j] = psi_u(terms.sum(axis=-1), u)
    return table


def margin_deviation_table(scores: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """|| Delta(x', j) - Delta(x, j) ||_2 for every j; ``reference`` broadcasts against ``scores``."""
    A = scores.shape[-1]
    table = np.empty(scores.shape)
    for j in range(A):
        diff = (scores[..., j:j + 1] - scores) - (reference[..., j:j + 1] - reference)
        table[..., j] = np.sqrt(np.sum(diff ** 2, axis=-1))
    return table


def reachable_outcomes(model: ScoreModel, X: np.ndarray, ball: PerturbationBall, plan: AttackPlan,
                       params: Optional[SurrogateParams] = None, extra_points: Optional[np.ndarray] = None,
                       search: bool = True, counter=None) -> np.ndarray:
    """
    Outcomes decided at some evaluated point of each ball, as a boolean (n, |A|) matrix.

    Probing under-approximates the true reachable set.
    """
    params = params or SurrogateParams()
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    searched = None
    if search and ball.gamma > 0:
        searched = search_outcomes(model, X, ball, plan, params, "reach", counter=counter)[0]
    points = candidate_points(X, ball, plan, extra_points, searched)
    decisions = np.argmax(_scores_at(model, points), axis=2)
    reach = np.zeros((X.shape[0], model.output_dim), dtype=bool)
    reach[np.repeat(np.arange(X.shape[0]), points.shape[1]), decisions.ravel()] = True
    return reach


def surrogate_sups(model: ScoreModel, X: np.ndarray, ball: PerturbationBall, plan: AttackPlan,
                   params: SurrogateParams, extra_points: Optional[np.ndarray] = None,
                   search: bool = True) -> np.ndarray:
    """Estimated sup of Phi^{rho,u}(model(x'), j) over each ball, shape (n, |A|)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    searched = None
    if search and ball.gamma > 0:
        searched = search_outcomes(model, X, ball, plan, params, "surrogate")[0]
    points = candidate_points(X, ball, plan, extra_points, searched)
    table = margin_surrogate_table(_scores_at(model, points), params.rho, params.u)
    return table.max(axis=1)


def penalty_sups(model: ScoreModel, X: np.ndarray, ball: PerturbationBall, plan: AttackPlan,
                 params: Optional[SurrogateParams] = None, extra_points: Optional[np.ndarray] = None,
                 search: bool = True) -> np.ndarray:
    """Estimated sup of the margin deviation of every outcome, shape (n, |A|)."""
    params = params or SurrogateParams()
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    searched = None
    if search and ball.gamma > 0:
        searched = search_outcomes(model, X, ball, plan, params, "penalty")[0]
    points = candidate_points(X, ball, plan, extra_points, searched)
    reference = model.scores(X)[:, None, :]
    return margin_deviation_table(_scores_at(model, points), reference).max(axis=1)


def predictor_ascent(f: ScoreModel, X: np.ndarray, targets: np.ndarray, ball: PerturbationBall,
                     plan: AttackPlan, base_loss: str = "squared", track_best: bool = True,
                     counter=None, phase: str = "predictor") -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Ascend L(f(x'), t) for every row."""
    targets = np.asarray(targets, dtype=np.float64).reshape(np.atleast_2d(X).shape[0], -1)

    def objective(z):
        return regression_loss_node(forward(f, z), targets, base_loss)
    return pgd_ascend(objective, np.atleast_2d(X), ball, plan, maximize=True,
                      track_best=track_best, counter=counter, phase=phase)


def predictor_worst_case(f: ScoreModel, X: np.ndarray, targets: np.ndarray, ball: PerturbationBall,
                         plan: AttackPlan, base_loss: str = "squared",
                         extra_points: Optional[np.ndarray] = None, search: bool = True) -> np.ndarray:
    """Estimated sup of L(f(x'), t) over each ball, shape (n,)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    targets = np.asarray(targets, dtype=np.float64).reshape(X.shape[0], -1)
    searched = None
    if search and ball.gamma > 0:
        searched = predictor_ascent(f, X, targets, ball, plan, base_loss)[0][:, None, :]
    points = candidate_points(X, ball, plan, extra_points, searched)
    predictions = _scores_at(f, points)
    return regression_loss(predictions, targets[:, None, :], base_loss).max(axis=1)


def dump_adversarial(rows: List[Dict], path: str, config_hash: str = "") -> str:
    """Write adversarial provenance rows (example_id, outcome, delta_norm, objective_value) as CSV."""
    frame = pd.DataFrame(rows, columns=["example_id", "outcome", "delta_norm", "objective_value"])
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w") as f:
        f.write(f"# config_hash={config_hash}\n")
        frame.to_csv(f, index=False)
    logger.info(f"Adversarial dump written to: {path} ({len(frame)} rows)")
    return path
