"""Ground-truthed synthetic data, solution alignment and error metrics.

The generator assembles a signature matrix from per-type marker blocks
(rows tightly correlated with one coordinate axis) plus fully random
non-marker rows, draws a column-stochastic proportion matrix, and adds
Gaussian noise scaled to an exact noise-to-data ratio ||eps||_F/||CP||_F.

Because the factorization is only identifiable up to permutation and
positive per-type scaling, computed solutions are aligned to ground truth
before errors are measured: the permutation maximizes summed Pearson
correlation between proportion rows, and each type gets a least-squares
scale on its signature column.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace as dc_replace

import numpy as np
import scipy.optimize

from .errors import ParameterError
from .graph import MarkerAssignment, SimilarityGraph
from .matrices import (
    ExpressionMatrix,
    FactorPair,
    ProportionMatrix,
    SignatureMatrix,
    l1_normalize_columns,
)
from .penalties import PenaltyConfig
from .solver import Solution, SolverConfig, solve

EXHAUSTIVE_PERMUTATION_LIMIT = 8
HARD_PERMUTATION_LIMIT = 12


@dataclass(frozen=True)
class SyntheticSpec:
    n_genes: int
    n_samples: int
    n_types: int
    marker_split: tuple[int, ...]
    ndr: float = 0.0
    marker_tightness: float = 0.05
    seed: int = 0
    clip_negative: bool = False

    def __post_init__(self):
        if self.n_genes < 1 or self.n_samples < 1 or self.n_types < 2:
            raise ParameterError("need n_genes, n_samples >= 1 and n_types >= 2")
        if len(self.marker_split) != self.n_types + 1:
            raise ParameterError(
                f"marker_split needs {self.n_types + 1} entries "
                f"(one per type plus non-markers), got {len(self.marker_split)}"
            )
        if any(s < 0 for s in self.marker_split):
            raise ParameterError("marker_split entries must be nonnegative")
        if sum(self.marker_split) != self.n_genes:
            raise ParameterError(
                f"marker_split sums to {sum(self.marker_split)}, expected {self.n_genes}"
            )
        if self.ndr < 0 or self.marker_tightness < 0:
            raise ParameterError("ndr and marker_tightness must be nonnegative")


@dataclass
class GroundTruth:
    g: ExpressionMatrix
    c_true: SignatureMatrix
    p_true: ProportionMatrix
    labels: np.ndarray
    achieved_ndr: float


@dataclass
class AlignmentReport:
    permutation: tuple[int, ...]
    scales: np.ndarray
    err_c: float
    err_p: float
    corr_p: np.ndarray
    residue: float


def generate_synthetic(spec: SyntheticSpec) -> GroundTruth:
    """Draw (G, C, P, labels) for one synthetic instance.

    Marker rows for type l are alpha * e_l plus folded-normal off-type
    leakage of relative size ``marker_tightness``; rows are assembled and
    then randomly permuted.  Noise is kept unclipped by default so the
    achieved noise-to-data ratio matches the requested one exactly.
    """
    rng = np.random.default_rng(spec.seed)
    k = spec.n_types
    blocks = []
    labels = []
    for l in range(k):
        n_l = spec.marker_split[l]
        if n_l == 0:
            continue
        alpha = rng.uniform(0.5, 2.0, size=n_l)
        rows = np.abs(
            rng.normal(0.0, (spec.marker_tightness * alpha)[:, None], size=(n_l, k))
        )
        rows[:, l] += alpha
        blocks.append(rows)
        labels.extend([l + 1] * n_l)
    n_rest = spec.marker_split[k]
    if n_rest:
        blocks.append(rng.uniform(0.0, 1.0, size=(n_rest, k)))
        labels.extend([0] * n_rest)

    c = np.vstack(blocks)
    labels = np.asarray(labels, dtype=int)
    perm = rng.permutation(spec.n_genes)
    c = c[perm]
    labels = labels[perm]

    p = l1_normalize_columns(rng.uniform(size=(k, spec.n_samples)))
    cp = c @ p
    if spec.ndr > 0:
        z = rng.standard_normal(cp.shape)
        eps = z * (spec.ndr * np.linalg.norm(cp) / np.linalg.norm(z))
        g_vals = cp + eps
    else:
        g_vals = cp.copy()
    if spec.clip_negative:
        g_vals = np.maximum(g_vals, 0.0)
    achieved = float(np.linalg.norm(g_vals - cp) / np.linalg.norm(cp))

    g = ExpressionMatrix(
        g_vals,
        gene_ids=[f"gene_{i + 1:05d}" for i in range(spec.n_genes)],
        sample_ids=[f"sample_{j + 1:03d}" for j in range(spec.n_samples)],
        nonnegative=spec.clip_negative or spec.ndr == 0.0,
    )
    return GroundTruth(
        g=g,
        c_true=SignatureMatrix(c),
        p_true=ProportionMatrix(p),
        labels=labels,
        achieved_ndr=achieved,
    )


def _pearson_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pearson correlation of every row of ``a`` against every row of ``b``."""
    ac = a - a.mean(axis=1, keepdims=True)
    bc = b - b.mean(axis=1, keepdims=True)
    an = np.linalg.norm(ac, axis=1)
    bn = np.linalg.norm(bc, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = (ac @ bc.T) / np.outer(an, bn)
    return np.nan_to_num(corr, nan=0.0, posinf=0.0, neginf=0.0)


def _best_permutation(corr: np.ndarray, mode: str) -> tuple[int, ...]:
    """Bijection pi maximizing sum_r corr[r, pi(r)]."""
    k = corr.shape[0]
    if mode == "auto":
        mode = "exhaustive" if k <= EXHAUSTIVE_PERMUTATION_LIMIT else "assignment"
    if mode == "exhaustive":
        if k > HARD_PERMUTATION_LIMIT:
            raise ParameterError(
                f"exhaustive alignment is limited to k <= {HARD_PERMUTATION_LIMIT}; "
                "use assignment mode"
            )
        best, best_score = None, -np.inf
        for candidate in itertools.permutations(range(k)):
            score = sum(corr[r, candidate[r]] for r in range(k))
            if score > best_score:
                best, best_score = candidate, score
        return tuple(best)
    if mode == "assignment":
        rows, cols = scipy.optimize.linear_sum_assignment(-corr)
        return tuple(int(cols[list(rows).index(r)]) for r in range(k))
    raise ParameterError(f"unknown alignment mode {mode!r}")


def _align_factors(
    c_found: np.ndarray,
    p_found: np.ndarray,
    c_ref: np.ndarray,
    p_ref: np.ndarray,
    mode: str = "auto",
):
    corr = _pearson_rows(p_ref, p_found)
    perm = _best_permutation(corr, mode)
    k = len(perm)
    scales = np.ones(k)
    for r in range(k):
        f = c_found[:, perm[r]]
        denom = float(np.dot(f, f))
        if denom > 0:
            s = float(np.dot(f, c_ref[:, r])) / denom
            if s > 0:
                scales[r] = s
    c_aligned = c_found[:, perm] * scales[None, :]
    p_aligned = p_found[list(perm), :] / scales[:, None]
    err_c = float(np.linalg.norm(c_aligned - c_ref) / np.linalg.norm(c_ref))
    err_p = float(np.linalg.norm(p_aligned - p_ref) / np.linalg.norm(p_ref))
    corr_p = np.array([corr[r, perm[r]] for r in range(k)])
    return perm, scales, err_c, err_p, corr_p


def align_solution(
    found: FactorPair, truth: GroundTruth, mode: str = "auto"
) -> AlignmentReport:
    """Resolve permutation/scaling ambiguity against ground truth.

    The permutation is chosen to maximize total Pearson correlation
    between found and true proportion rows (exhaustively up to k=8,
    by Hungarian assignment above); each type then gets the least-squares
    positive scale on its signature column.
    """
    c_found = found.c.values
    p_found = found.p.values
    if c_found.shape != truth.c_true.values.shape or p_found.shape != truth.p_true.values.shape:
        raise ParameterError("found factors do not match the ground-truth shapes")
    perm, scales, err_c, err_p, corr_p = _align_factors(
        c_found, p_found, truth.c_true.values, truth.p_true.values, mode
    )
    residue = float(
        np.linalg.norm(truth.g.values - c_found @ p_found)
        / np.linalg.norm(truth.g.values)
    )
    return AlignmentReport(
        permutation=perm,
        scales=scales,
        err_c=err_c,
        err_p=err_p,
        corr_p=corr_p,
        residue=residue,
    )


def solution_errors(report: AlignmentReport) -> dict:
    """Error metrics of an aligned solution, Table-style."""
    return {
        "err_c": report.err_c,
        "err_p": report.err_p,
        "residue": report.residue,
    }


@dataclass
class ArmReport:
    name: str
    residues: list[float]
    max_pairwise_err_c: float
    errs_vs_truth: list[float] | None


@dataclass
class ProbeReport:
    unconstrained: ArmReport
    constrained: ArmReport


def _pairwise_dispersion(solutions: list[Solution]) -> float:
    worst = 0.0
    for i, ref in enumerate(solutions):
        for j, other in enumerate(solutions):
            if i == j:
                continue
            _, _, err_c, _, _ = _align_factors(
                other.factors.c.values,
                other.factors.p.values,
                ref.factors.c.values,
                ref.factors.p.values,
            )
            worst = max(worst, err_c)
    return worst


def identifiability_probe(
    g: ExpressionMatrix,
    markers: MarkerAssignment,
    graph: SimilarityGraph,
    cfg: SolverConfig,
    n_seeds: int,
    truth: GroundTruth | None = None,
) -> ProbeReport:
    """Multi-start comparison of the unconstrained and constrained solvers.

    Both arms run from the same ``n_seeds`` random initializations; the
    unconstrained arm zeroes the penalties.  Reports residues and the
    maximum pairwise aligned signature error per arm; when ``truth`` is
    given, per-run aligned errors against it are included too.
    """
    if n_seeds < 1:
        raise ParameterError("n_seeds must be >= 1")
    arms = {}
    for name, pen in (
        ("unconstrained", PenaltyConfig(0.0, 0.0)),
        ("constrained", cfg.penalties),
    ):
        runs = []
        for i in range(n_seeds):
            run_cfg = dc_replace(cfg, penalties=pen, seed=cfg.seed + i)
            runs.append(solve(g, markers, graph, run_cfg))
        errs = None
        if truth is not None:
            errs = [
                align_solution(run.factors, truth).err_c for run in runs
            ]
        arms[name] = ArmReport(
            name=name,
            residues=[run.final_residue for run in runs],
            max_pairwise_err_c=_pairwise_dispersion(runs) if n_seeds > 1 else 0.0,
            errs_vs_truth=errs,
        )
    return ProbeReport(unconstrained=arms["unconstrained"], constrained=arms["constrained"])


def scattering_diagnostic(
    c: SignatureMatrix,
    markers: MarkerAssignment,
    threshold: float = 0.95,
) -> list[dict]:
    """Per-type vertex-coverage report for the signature matrix.

    For each cell type, the max and mean cosine of its marker rows against
    the type's coordinate axis; a type counts as covered when the max
    cosine reaches ``threshold``.
    """
    values = c.values
    norms = np.linalg.norm(values, axis=1)
    report = []
    for r, members in enumerate(markers.marker_sets):
        if members.size == 0:
            report.append(
                {
                    "cell_type": r + 1,
                    "n_markers": 0,
                    "max_cosine": None,
                    "mean_cosine": None,
                    "covered": None,
                }
            )
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            cosines = values[members, r] / norms[members]
        cosines = np.nan_to_num(cosines, nan=0.0)
        report.append(
            {
                "cell_type": r + 1,
                "n_markers": int(members.size),
                "max_cosine": float(np.max(cosines)),
                "mean_cosine": float(np.mean(cosines)),
                "covered": bool(np.max(cosines) >= threshold),
            }
        )
    return report
