"""Solvability and manifold penalties on the signature matrix.

Two penalties act on rows of C.  The solvability penalty pulls each marker
row toward its cell type's coordinate axis,

    F1(C) = (lambda1/2) * sum_r sum_{i in S_r} d_eisen(C_i, e_r)^2,

and the manifold penalty makes rows that are neighbors in the expression
graph stay correlated,

    F2(C) = (lambda2/2) * sum_ij w_ij * d_eisen(C_i, C_j)^2.

Both are invariant to positive per-row rescaling of C, so their gradients
are orthogonal to the corresponding row of C.

Gradients here are derived from the definitions above and validated
against central finite differences.  A published matrix form of the F2
gradient circulates with half the diagonal-term weight; it is kept as
``f2_gradient_half_diag`` for comparison but fails finite-difference
checks and is not used anywhere.

For the solver's inner iteration the weight matrices W1..W4 are frozen at
the current outer iterate, which turns the penalty gradient into an affine
function of A; ``PenaltyWeights`` is that frozen snapshot and
``frozen_penalty_value`` / ``frozen_penalty_gradient`` evaluate the
matching quadratic surrogate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ParameterError
from .graph import MarkerAssignment, SimilarityGraph
from .matrices import SignatureMatrix


@dataclass(frozen=True)
class PenaltyConfig:
    lambda1: float = 0.0
    lambda2: float = 0.0
    epsilon_norm: float = 1e-12

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ParameterError("penalty strengths must be nonnegative")
        if self.epsilon_norm <= 0:
            raise ParameterError("epsilon_norm must be positive")

    @property
    def is_zero(self) -> bool:
        return self.lambda1 == 0.0 and self.lambda2 == 0.0


def _floored_rows(c: np.ndarray, eps: float):
    """Row norms with zero-row protection.

    Rows with norm below ``eps`` get inverse norm 0: they contribute a
    zero gradient row instead of a singular one.
    """
    norms = np.linalg.norm(c, axis=1)
    inv = np.where(norms > eps, 1.0 / np.maximum(norms, eps), 0.0)
    return norms, inv


def _marker_cosines(c: np.ndarray, markers: MarkerAssignment, inv: np.ndarray) -> np.ndarray:
    """cos(C_i, e_{g(i)}) for every row; 0 where g(i) = 0 or the row is zero."""
    n = c.shape[0]
    cos = np.zeros(n)
    rows = np.flatnonzero(markers.chi)
    cos[rows] = c[rows, markers.g[rows] - 1] * inv[rows]
    return cos


def _cosine_matrix(c: np.ndarray, inv: np.ndarray) -> np.ndarray:
    unit = c * inv[:, None]
    coc = unit @ unit.T
    coc = (coc + coc.T) / 2.0
    np.clip(coc, -1.0, 1.0, out=coc)
    np.fill_diagonal(coc, 1.0)
    return coc


def f1_value(c: SignatureMatrix, markers: MarkerAssignment, cfg: PenaltyConfig) -> float:
    """Solvability penalty (lambda1/2) sum over markers of d_eisen(C_i, e_r)^2."""
    if cfg.lambda1 == 0.0:
        return 0.0
    values = c.values
    _, inv = _floored_rows(values, cfg.epsilon_norm)
    cos = _marker_cosines(values, markers, inv)
    dist = (1.0 - cos)[markers.chi]
    return 0.5 * cfg.lambda1 * float(np.dot(dist, dist))


def f1_gradient(c: SignatureMatrix, markers: MarkerAssignment, cfg: PenaltyConfig) -> np.ndarray:
    """Gradient of f1_value, in matrix form lambda1 * W1 (W2 C - C_g).

    W1 = diag{(1 - cos_i) chi_i / |C_i|} and W2 = diag{cos_i / |C_i|};
    non-marker rows and zero rows give zero gradient rows.
    """
    values = c.values
    if cfg.lambda1 == 0.0:
        return np.zeros_like(values)
    _, inv = _floored_rows(values, cfg.epsilon_norm)
    cos = _marker_cosines(values, markers, inv)
    w1 = (1.0 - cos) * markers.chi * inv
    w2 = cos * inv
    return cfg.lambda1 * w1[:, None] * (w2[:, None] * values - markers.indicator)


def f2_value(c: SignatureMatrix, graph: SimilarityGraph, cfg: PenaltyConfig) -> float:
    """Manifold penalty (lambda2/2) sum_ij w_ij d_eisen(C_i, C_j)^2."""
    if cfg.lambda2 == 0.0:
        return 0.0
    values = c.values
    _, inv = _floored_rows(values, cfg.epsilon_norm)
    coc = _cosine_matrix(values, inv)
    dist = 1.0 - coc
    return 0.5 * cfg.lambda2 * float(np.sum(graph.adjacency * dist * dist))


def f2_gradient(c: SignatureMatrix, graph: SimilarityGraph, cfg: PenaltyConfig) -> np.ndarray:
    """Gradient of f2_value, derived from the definition.

    Row i:  2 lambda2 [sum_l w_il (1-s_il) s_il] C_i / |C_i|^2
          - 2 lambda2 sum_l w_il (1-s_il) C_l / (|C_i||C_l|),
    with s the row-cosine matrix.  Each gradient row is orthogonal to the
    matching row of C (row-scale invariance of the distance).
    """
    values = c.values
    if cfg.lambda2 == 0.0:
        return np.zeros_like(values)
    w = graph.adjacency
    _, inv = _floored_rows(values, cfg.epsilon_norm)
    coc = _cosine_matrix(values, inv)
    one_minus = 1.0 - coc
    w3 = w * one_minus * coc
    w4 = w * one_minus * np.outer(inv, inv)
    diag_term = (w3.sum(axis=1) * inv * inv)[:, None] * values
    return 2.0 * cfg.lambda2 * (diag_term - w4 @ values)


def f2_gradient_half_diag(
    c: SignatureMatrix, graph: SimilarityGraph, cfg: PenaltyConfig
) -> np.ndarray:
    """Variant of the F2 gradient with half weight on the diagonal term.

    Kept only as a diagnostic: it disagrees with central finite
    differences of f2_value by exactly the missing half of the
    diag(W3 1) term and its rows are not orthogonal to the rows of C.
    """
    values = c.values
    if cfg.lambda2 == 0.0:
        return np.zeros_like(values)
    w = graph.adjacency
    _, inv = _floored_rows(values, cfg.epsilon_norm)
    coc = _cosine_matrix(values, inv)
    one_minus = 1.0 - coc
    w3 = w * one_minus * coc
    w4 = w * one_minus * np.outer(inv, inv)
    diag_term = (w3.sum(axis=1) * inv * inv)[:, None] * values
    return cfg.lambda2 * diag_term - 2.0 * cfg.lambda2 * (w4 @ values)


class EuclideanTraceForms(NamedTuple):
    loop: float
    trace: float


def f2_euclidean_trace(
    c: SignatureMatrix, graph: SimilarityGraph, cfg: PenaltyConfig
) -> EuclideanTraceForms:
    """Euclidean-distance variant of F2, evaluated two ways.

    With the Eisen distance replaced by the Euclidean one the penalty
    collapses to the classical Laplacian form: the explicit pair loop
    (lambda2/2) sum_ij w_ij ||C_i - C_j||^2 must equal
    lambda2 * Tr(C^T L C) with the unnormalized Laplacian L = D - W.
    """
    values = c.values
    w = graph.adjacency
    n = values.shape[0]
    loop = 0.0
    for i in range(n):
        for j in range(n):
            diff = values[i] - values[j]
            loop += w[i, j] * float(np.dot(diff, diff))
    loop *= 0.5 * cfg.lambda2
    lap = np.diag(graph.degrees) - w
    trace = cfg.lambda2 * float(np.trace(values.T @ lap @ values))
    return EuclideanTraceForms(loop=loop, trace=trace)


@dataclass
class PenaltyWeights:
    """Penalty weight matrices frozen at one outer iterate of C.

    w1, w2 are the diagonal F1 weights (stored as vectors), w3, w4 the F2
    weight matrices, coc the row-cosine matrix of the freeze-point C.
    ``f1_at_freeze`` / ``f2_at_freeze`` are the true penalty values there,
    recorded for per-iteration diagnostics.
    """

    w1: np.ndarray
    w2: np.ndarray
    w3: np.ndarray
    w4: np.ndarray
    coc: np.ndarray
    row_norms: np.ndarray
    inv_norms: np.ndarray
    # Row sums of W3 scaled by |C_i|^-2; the diagonal of the frozen
    # manifold-gradient operator, cached for the inner loop.
    diag_manifold: np.ndarray
    # The graph adjacency the weights were built from; the inner line
    # search needs it to evaluate the true manifold penalty.
    adjacency: np.ndarray
    f1_at_freeze: float
    f2_at_freeze: float

    @classmethod
    def from_signature(
        cls,
        c: SignatureMatrix,
        graph: SimilarityGraph,
        markers: MarkerAssignment,
        cfg: PenaltyConfig,
    ) -> "PenaltyWeights":
        values = c.values
        w = graph.adjacency
        norms, inv = _floored_rows(values, cfg.epsilon_norm)
        cos = _marker_cosines(values, markers, inv)
        w1 = (1.0 - cos) * markers.chi * inv
        w2 = cos * inv
        coc = _cosine_matrix(values, inv)
        one_minus = 1.0 - coc
        w3 = w * one_minus * coc
        w4 = w * one_minus * np.outer(inv, inv)
        dist = (1.0 - cos)[markers.chi]
        f1 = 0.5 * cfg.lambda1 * float(np.dot(dist, dist))
        f2 = 0.5 * cfg.lambda2 * float(np.sum(w * one_minus * one_minus))
        return cls(
            w1=w1,
            w2=w2,
            w3=w3,
            w4=w4,
            coc=coc,
            row_norms=norms,
            inv_norms=inv,
            diag_manifold=w3.sum(axis=1) * inv * inv,
            adjacency=w,
            f1_at_freeze=f1,
            f2_at_freeze=f2,
        )


def penalty_value_arrays(
    a: np.ndarray,
    adjacency: np.ndarray,
    markers: MarkerAssignment,
    cfg: PenaltyConfig,
) -> float:
    """True F1(A) + F2(A) on a raw array (no domain-type wrapping).

    Used by the solver's inner line search, which freezes weights only in
    the gradient but measures actual descent of the penalties.
    """
    total = 0.0
    _, inv = _floored_rows(a, cfg.epsilon_norm)
    if cfg.lambda1 > 0.0:
        cos = _marker_cosines(a, markers, inv)
        dist = (1.0 - cos)[markers.chi]
        total += 0.5 * cfg.lambda1 * float(np.dot(dist, dist))
    if cfg.lambda2 > 0.0:
        coc = _cosine_matrix(a, inv)
        dist = 1.0 - coc
        total += 0.5 * cfg.lambda2 * float(np.sum(adjacency * dist * dist))
    return total


def frozen_penalty_gradient(
    a: np.ndarray,
    weights: PenaltyWeights,
    markers: MarkerAssignment,
    cfg: PenaltyConfig,
) -> np.ndarray:
    """Penalty gradient at A with all weights frozen (affine in A)."""
    grad = np.zeros_like(a)
    if cfg.lambda1 > 0.0:
        grad += cfg.lambda1 * weights.w1[:, None] * (
            weights.w2[:, None] * a - markers.indicator
        )
    if cfg.lambda2 > 0.0:
        grad += 2.0 * cfg.lambda2 * (
            weights.diag_manifold[:, None] * a - weights.w4 @ a
        )
    return grad


def frozen_penalty_value(
    a: np.ndarray,
    weights: PenaltyWeights,
    markers: MarkerAssignment,
    cfg: PenaltyConfig,
) -> float:
    """Quadratic surrogate whose gradient is frozen_penalty_gradient."""
    total = 0.0
    if cfg.lambda1 > 0.0:
        w12 = weights.w1 * weights.w2
        total += 0.5 * cfg.lambda1 * float(np.sum(w12[:, None] * a * a))
        total -= cfg.lambda1 * float(
            np.sum((weights.w1[:, None] * markers.indicator) * a)
        )
    if cfg.lambda2 > 0.0:
        total += cfg.lambda2 * float(np.sum(weights.diag_manifold[:, None] * a * a))
        total -= cfg.lambda2 * float(np.sum(a * (weights.w4 @ a)))
    return total
