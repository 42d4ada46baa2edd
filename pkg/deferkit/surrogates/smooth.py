"""
Batched smooth adversarial objectives over precomputed proxy scores.

``clean_scores`` holds one row per example and ``proxy_scores`` one row per
(example, outcome) pair in the order i * |A| + j, so the proxy of outcome j
for example i sits at row i * |A| + j.
"""
import numpy as np

from deferkit.diffcore import tensor as T
from deferkit.surrogates.clean import comp_sum_matrix, margin_deviation_batch
from deferkit.surrogates.params import SurrogateParams


def smooth_terms_batch(clean_scores: T.Node, proxy_scores: T.Node, params: SurrogateParams) -> T.Node:
    """Phi^u(s/rho, j) + kappa * ||Delta(x'_j, j) - Delta(x, j)||_2 for every (i, j), shape (n, |A|)."""
    n, A = clean_scores.shape
    terms = comp_sum_matrix(clean_scores / params.rho, params.u)
    if params.kappa == 0:
        return terms
    reference = T.getitem(clean_scores, np.repeat(np.arange(n), A))
    deviation = margin_deviation_batch(proxy_scores, reference, np.tile(np.arange(A), n))
    return terms + T.reshape(deviation, (n, A)) * params.kappa


def smooth_class_batch(clean_scores: T.Node, proxy_scores: T.Node, mu: np.ndarray,
                       params: SurrogateParams) -> T.Node:
    """sum_j (sum_{i != j} mu_i) [smooth term of j] per example."""
    tau = mu.sum(axis=1, keepdims=True) - mu
    return T.sum_(T.mul(smooth_terms_batch(clean_scores, proxy_scores, params), tau), axis=1)


def smooth_reg_batch(clean_scores: T.Node, proxy_scores: T.Node, predictor_cost: T.Node,
                     expert_costs: np.ndarray, params: SurrogateParams) -> T.Node:
    """-(J-1) c~_0 + sum_j (sum_{i != j} c~_i) [smooth term of j], with c~_0 a graph node."""
    J = expert_costs.shape[1]
    costs = T.concat([T.expand(predictor_cost, 1), T.constant(expert_costs)], axis=1)
    tau = T.expand(T.sum_(costs, axis=1), 1) - costs
    weighted = T.sum_(T.mul(smooth_terms_batch(clean_scores, proxy_scores, params), tau), axis=1)
    return weighted - predictor_cost * float(J - 1)
