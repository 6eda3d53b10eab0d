"""Scaled ADMM solver for the penalized factorization.

The objective

    (1/2) ||G - CP||_F^2 + F1(A) + F2(A)
    s.t. C >= 0, columns of P on the probability simplex, C = A, P = Q

is split over four blocks.  C and P have closed-form updates followed by a
row-wise active-set projection and a column-wise simplex projection
respectively; Q is an elementwise clamp; the A block carries the nonlinear
penalties and runs an inner gradient descent with the penalty weights
frozen at the current outer C.  Dual variables use the standard scaled
update with the just-computed primal iterates; the original listing's
previous-iterate variant is available behind ``literal_dual_updates``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError, NumericError, ParameterError
from .graph import MarkerAssignment, SimilarityGraph
from .matrices import (
    EPS_NORM,
    ExpressionMatrix,
    FactorPair,
    ProportionMatrix,
    SignatureMatrix,
    relative_residue_arrays,
)
from .penalties import PenaltyConfig, PenaltyWeights

logger = logging.getLogger(__name__)

_ACTIVE_SET_KKT_RTOL = 1e-10


@dataclass(frozen=True)
class InnerConfig:
    """Gradient-descent settings for the penalty subproblem."""

    tol: float = 1e-6
    max_steps: int = 50
    armijo: float = 1e-4
    shrink: float = 0.5
    max_halvings: int = 60

    def __post_init__(self):
        if self.tol <= 0 or self.max_steps < 1:
            raise ParameterError("inner tolerance must be > 0 and max_steps >= 1")
        if not 0 < self.armijo < 1 or not 0 < self.shrink < 1:
            raise ParameterError("need 0 < armijo < 1 and 0 < shrink < 1")


@dataclass(frozen=True)
class SolverConfig:
    rho: float = 1.6e3
    gamma: float = 1.5e4
    penalties: PenaltyConfig = field(default_factory=PenaltyConfig)
    tol_outer: float = 1e-5
    max_outer: int = 2000
    inner: InnerConfig = field(default_factory=InnerConfig)
    seed: int = 0
    literal_dual_updates: bool = False

    def __post_init__(self):
        if self.rho <= 0 or self.gamma <= 0:
            raise ParameterError("rho and gamma must be positive")
        if self.tol_outer <= 0 or self.max_outer < 1:
            raise ParameterError("tol_outer must be > 0 and max_outer >= 1")

    @classmethod
    def from_lambda_tilde(cls, lambda_tilde: float, **kwargs) -> "SolverConfig":
        """Build a config from the rescaled penalty strength lambda/rho."""
        if lambda_tilde < 0:
            raise ParameterError("lambda_tilde must be nonnegative")
        cfg = cls(**kwargs)
        lam = lambda_tilde * cfg.rho
        return replace(cfg, penalties=PenaltyConfig(lambda1=lam, lambda2=lam))

    @property
    def lambda_tilde(self) -> float:
        return self.penalties.lambda1 / self.rho


@dataclass
class IterationRecord:
    iteration: int
    residue: float
    f1: float
    f2: float
    primal_c: float
    primal_p: float
    delta_c: float
    delta_p: float


@dataclass
class SolverState:
    """Mutable iterates exposed to per-iteration callbacks."""

    c: np.ndarray
    p: np.ndarray
    a: np.ndarray
    q: np.ndarray
    a_dual: np.ndarray
    q_dual: np.ndarray
    iteration: int


@dataclass
class Solution:
    factors: FactorPair
    converged: bool
    iterations: int
    final_residue: float
    history: list[IterationRecord]


def project_simplex(v) -> np.ndarray:
    """Euclidean projection of a vector onto {x >= 0, sum x = 1}.

    Sort-and-threshold scheme: find the largest support size whose shared
    shift keeps all supported entries positive.
    """
    v = np.asarray(v, dtype=float).ravel()
    if not np.all(np.isfinite(v)):
        raise DataError("cannot project a non-finite vector")
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    j = np.arange(1, v.size + 1)
    support = np.flatnonzero(u + (1.0 - css) / j > 0)
    rho = int(support[-1])
    theta = (1.0 - css[rho]) / (rho + 1.0)
    return np.maximum(v + theta, 0.0)


def _project_columns_simplex(m: np.ndarray) -> np.ndarray:
    k, n = m.shape
    u = -np.sort(-m, axis=0)
    css = np.cumsum(u, axis=0)
    j = np.arange(1, k + 1)[:, None]
    cond = u + (1.0 - css) / j > 0
    rho = k - 1 - np.argmax(cond[::-1, :], axis=0)
    theta = (1.0 - css[rho, np.arange(n)]) / (rho + 1.0)
    return np.maximum(m + theta[None, :], 0.0)


def _active_set_row(m: np.ndarray, b: np.ndarray, scale: float) -> np.ndarray:
    """Minimize (1/2) x^T M x - b^T x subject to x >= 0 for SPD M.

    Clamps negative coordinates of the free-subproblem solution, re-solves,
    and releases clamped coordinates whose KKT multipliers are negative,
    one at a time, until the KKT conditions hold.
    """
    k = b.shape[0]
    free = np.ones(k, dtype=bool)
    tol = _ACTIVE_SET_KKT_RTOL * scale
    for _ in range(30 + 2**k):
        if free.any():
            idx = np.flatnonzero(free)
            try:
                x_free = np.linalg.solve(m[np.ix_(idx, idx)], b[idx])
            except np.linalg.LinAlgError as exc:
                raise NumericError(f"singular free subproblem in row update: {exc}") from exc
            neg = x_free < 0
            if neg.any():
                free[idx[neg]] = False
                continue
        x = np.zeros(k)
        if free.any():
            x[free] = x_free
        clamped = np.flatnonzero(~free)
        if clamped.size == 0:
            return x
        mult = m[clamped] @ x - b[clamped]
        if np.all(mult >= -tol):
            return x
        free[clamped[int(np.argmin(mult))]] = True
    raise NumericError("row-wise active set failed to settle on a KKT point")


def update_c(
    g: ExpressionMatrix,
    p: ProportionMatrix,
    a: np.ndarray,
    a_dual: np.ndarray,
    rho: float,
) -> SignatureMatrix:
    """Closed-form C update with row-wise nonnegativity.

    Each row solves min ||G_i - cP||^2 + rho ||c - (A - A~)_i||^2 over
    c >= 0; the shared unconstrained solution is
    [G P^T + rho (A - A~)] (P P^T + rho I)^{-1} and rows that come out
    negative are fixed up by the active-set routine.
    """
    if rho <= 0:
        raise ParameterError("rho must be positive")
    pv = p.values
    m = pv @ pv.T + rho * np.eye(pv.shape[0])
    b = g.values @ pv.T + rho * (a - a_dual)
    try:
        x = np.linalg.solve(m, b.T).T
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"C-update normal equations are singular: {exc}") from exc
    bad = np.flatnonzero(np.any(x < 0, axis=1))
    if bad.size:
        scale = max(1.0, float(np.max(np.abs(b[bad]))))
        for i in bad:
            x[i] = _active_set_row(m, b[i], scale)
    return SignatureMatrix(x)


def update_p(
    g: ExpressionMatrix,
    c: SignatureMatrix,
    q: np.ndarray,
    q_dual: np.ndarray,
    gamma: float,
) -> ProportionMatrix:
    """Closed-form P update followed by column-wise simplex projection."""
    if gamma <= 0:
        raise ParameterError("gamma must be positive")
    cv = c.values
    m = cv.T @ cv + gamma * np.eye(cv.shape[1])
    r = cv.T @ g.values + gamma * (q - q_dual)
    try:
        unprojected = np.linalg.solve(m, r)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"P-update normal equations are singular: {exc}") from exc
    return ProportionMatrix(_project_columns_simplex(unprojected))


def update_q(p: ProportionMatrix, q_dual: np.ndarray) -> np.ndarray:
    """Q update: elementwise clamp of P + Q~ at zero."""
    return np.maximum(p.values + q_dual, 0.0)


def inner_objective(
    a: np.ndarray,
    c: SignatureMatrix,
    a_dual: np.ndarray,
    weights: PenaltyWeights | None,
    markers: MarkerAssignment,
    cfg: SolverConfig,
) -> float:
    """True A-subproblem objective F(A) + (rho/2)||C - A + A~||_F^2."""
    from .penalties import penalty_value_arrays

    diff = c.values - a + a_dual
    total = 0.5 * cfg.rho * float(np.sum(diff * diff))
    if weights is not None and not cfg.penalties.is_zero:
        total += penalty_value_arrays(a, weights.adjacency, markers, cfg.penalties)
    return total


def inner_gradient(
    a: np.ndarray,
    c: SignatureMatrix,
    a_dual: np.ndarray,
    weights: PenaltyWeights | None,
    markers: MarkerAssignment,
    cfg: SolverConfig,
) -> np.ndarray:
    """Gradient of inner_objective at A."""
    from .penalties import frozen_penalty_gradient

    grad = cfg.rho * (a - c.values - a_dual)
    if weights is not None and not cfg.penalties.is_zero:
        grad += frozen_penalty_gradient(a, weights, markers, cfg.penalties)
    return grad


def update_a(
    c: SignatureMatrix,
    a_dual: np.ndarray,
    weights: PenaltyWeights | None,
    markers: MarkerAssignment,
    cfg: SolverConfig,
) -> tuple[np.ndarray, dict]:
    """Inner gradient descent on the A subproblem.

    Search directions come from the frozen-weight gradient (affine in A);
    the backtracking Armijo rule measures descent of the true objective
    F(A) + (rho/2)||C - A + A~||_F^2, which keeps the iteration stable
    even where the frozen operator has negative curvature.  Starts from
    the coupling minimum A = C + A~ and stops when ||grad||_F / ||A||_F
    drops below the inner tolerance or the step cap is reached.
    """
    from .penalties import frozen_penalty_gradient, penalty_value_arrays

    rho = cfg.rho
    pen = cfg.penalties
    inner = cfg.inner
    cv = c.values
    target = cv + a_dual
    a = target.copy()
    info = {
        "steps": 0,
        "converged": True,
        "line_search_failed": False,
        "grad_norm": 0.0,
        "objectives": [],
    }
    if weights is None or pen.is_zero:
        return a, info

    def objective(x: np.ndarray) -> float:
        diff = target - x
        return (
            penalty_value_arrays(x, weights.adjacency, markers, pen)
            + 0.5 * rho * float(np.vdot(diff, diff))
        )

    def gradient(x: np.ndarray) -> np.ndarray:
        return frozen_penalty_gradient(x, weights, markers, pen) + rho * (x - target)

    obj = objective(a)
    info["objectives"].append(obj)
    grad = gradient(a)

    converged = False
    t_start = 1.0 / rho
    for _ in range(inner.max_steps):
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= inner.tol * max(float(np.linalg.norm(a)), EPS_NORM):
            converged = True
            break
        dd = float(np.vdot(grad, grad))
        t = t_start
        accepted = False
        for _ in range(inner.max_halvings + 1):
            candidate = a - t * grad
            cand_obj = objective(candidate)
            # strict decrease required: a sufficient-decrease bound that
            # rounds to the current value means no measurable progress
            if cand_obj <= obj - inner.armijo * t * dd and cand_obj < obj:
                accepted = True
                break
            t *= inner.shrink
        if not accepted:
            info["line_search_failed"] = True
            logger.debug(
                "inner line search found no descent after %d halvings",
                inner.max_halvings,
            )
            break
        a = candidate
        obj = cand_obj
        info["objectives"].append(obj)
        info["steps"] += 1
        grad = gradient(a)
        # reuse the accepted step (with headroom) as the next trial; the
        # curvature along successive gradients varies little, so this
        # saves most of the backtracking halvings
        t_start = min(t / inner.shrink, 1.0 / rho)
    else:
        converged = float(np.linalg.norm(grad)) <= inner.tol * max(
            float(np.linalg.norm(a)), EPS_NORM
        )

    info["converged"] = converged
    info["grad_norm"] = float(np.linalg.norm(grad))
    return a, info


def _check_finite(it: int, last: IterationRecord | None, **arrays) -> None:
    for name, arr in arrays.items():
        if not np.all(np.isfinite(arr)):
            detail = f"; last good diagnostics: {last}" if last is not None else ""
            raise NumericError(f"non-finite values in {name} at iteration {it}{detail}")


def solve(
    g: ExpressionMatrix,
    markers: MarkerAssignment,
    graph: SimilarityGraph,
    cfg: SolverConfig,
    callback=None,
) -> Solution:
    """Run the full ADMM loop and return the factor pair with diagnostics.

    Stops when the relative changes of C and P both fall below
    ``cfg.tol_outer`` or after ``cfg.max_outer`` iterations.  ``callback``
    (if given) receives (SolverState, IterationRecord) after every outer
    iteration.
    """
    values = g.values
    n_genes, n_samples = values.shape
    k = markers.n_types
    if markers.g.shape[0] != n_genes:
        raise ParameterError("marker assignment does not match the gene count")
    if graph.n_vertices != n_genes:
        raise ParameterError("similarity graph does not match the gene count")
    if not 2 <= k <= n_samples:
        raise ParameterError(f"need 2 <= k <= n_samples, got k={k}")

    rng = np.random.default_rng(cfg.seed)
    p_vals = rng.uniform(size=(k, n_samples))
    p_vals /= p_vals.sum(axis=0)
    c_vals = rng.uniform(size=(n_genes, k))
    norm_g = float(np.linalg.norm(values))
    norm_cp = float(np.linalg.norm(c_vals @ p_vals))
    if norm_g > 0 and norm_cp > 0:
        c_vals *= norm_g / norm_cp

    c = SignatureMatrix(c_vals)
    p = ProportionMatrix(p_vals)
    a = c_vals.copy()
    q = p_vals.copy()
    a_dual = np.zeros_like(a)
    q_dual = np.zeros_like(q)

    pen = cfg.penalties
    history: list[IterationRecord] = []
    last_record: IterationRecord | None = None
    converged = False
    iteration = 0

    for iteration in range(1, cfg.max_outer + 1):
        c_start = c.values
        p_start = p.values
        a_start = a
        q_start = q

        c = update_c(g, p, a, a_dual, cfg.rho)
        p = update_p(g, c, q, q_dual, cfg.gamma)
        weights = (
            None
            if pen.is_zero
            else PenaltyWeights.from_signature(c, graph, markers, pen)
        )
        a, inner_info = update_a(c, a_dual, weights, markers, cfg)
        q = update_q(p, q_dual)

        if cfg.literal_dual_updates:
            a_dual = a_dual + (c_start - a_start)
            q_dual = q_dual + (p_start - q_start)
        else:
            a_dual = a_dual + (c.values - a)
            q_dual = q_dual + (p.values - q)

        _check_finite(
            iteration, last_record, c=c.values, p=p.values, a=a, q=q,
            a_dual=a_dual, q_dual=q_dual,
        )

        record = IterationRecord(
            iteration=iteration,
            residue=relative_residue_arrays(values, c.values, p.values),
            f1=weights.f1_at_freeze if weights is not None else 0.0,
            f2=weights.f2_at_freeze if weights is not None else 0.0,
            primal_c=float(np.linalg.norm(c.values - a)),
            primal_p=float(np.linalg.norm(p.values - q)),
            delta_c=float(
                np.linalg.norm(c.values - c_start)
                / max(np.linalg.norm(c_start), EPS_NORM)
            ),
            delta_p=float(
                np.linalg.norm(p.values - p_start)
                / max(np.linalg.norm(p_start), EPS_NORM)
            ),
        )
        history.append(record)
        last_record = record
        if callback is not None:
            state = SolverState(
                c=c.values, p=p.values, a=a, q=q,
                a_dual=a_dual, q_dual=q_dual, iteration=iteration,
            )
            callback(state, record)

        if record.delta_c <= cfg.tol_outer and record.delta_p <= cfg.tol_outer:
            converged = True
            break

    return Solution(
        factors=FactorPair(c=c, p=p),
        converged=converged,
        iterations=iteration,
        final_residue=history[-1].residue if history else float("nan"),
        history=history,
    )
