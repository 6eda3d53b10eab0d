"""Core matrix types and row-correlation metrics.

Everything downstream (graph construction, penalties, the solver) works on
the types defined here: a gene-by-sample expression matrix ``G``, a
gene-by-cell-type signature matrix ``C`` and a cell-type-by-sample
proportion matrix ``P`` with column-stochastic columns.  The central
distance is the Eisen cosine correlation distance, which compares row
directions and ignores row scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

# Row norms below this are treated as zero; divisions are suppressed
# rather than floored to avoid manufactured huge cosines.
EPS_NORM = 1e-12

COLUMN_SUM_TOL = 1e-12


def _as_float_matrix(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 2:
        raise DataError(f"{name} must be a 2-D matrix, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite entries")
    return arr


def _check_ids(ids, expected: int, what: str) -> list[str]:
    ids = [str(x) for x in ids]
    if len(ids) != expected:
        raise DataError(f"expected {expected} {what}, got {len(ids)}")
    if len(set(ids)) != len(ids):
        dupes = sorted({x for x in ids if ids.count(x) > 1})
        raise DataError(f"duplicate {what}: {dupes[:5]}")
    return ids


@dataclass
class ExpressionMatrix:
    """Nonnegative N x n gene-by-sample matrix with identifiers.

    ``nonnegative=False`` admits small negative entries; the synthetic
    generator uses it so additive Gaussian noise keeps its exact magnitude.
    File ingestion always validates nonnegativity.
    """

    values: np.ndarray
    gene_ids: list[str]
    sample_ids: list[str]
    nonnegative: bool = field(default=True, repr=False)

    def __post_init__(self):
        self.values = _as_float_matrix(self.values, "expression matrix")
        n_genes, n_samples = self.values.shape
        if n_genes < 1 or n_samples < 1:
            raise DataError("expression matrix must have at least one row and column")
        self.gene_ids = _check_ids(self.gene_ids, n_genes, "gene ids")
        self.sample_ids = _check_ids(self.sample_ids, n_samples, "sample ids")
        if self.nonnegative and np.any(self.values < 0):
            i, j = np.argwhere(self.values < 0)[0]
            raise DataError(
                f"negative expression value at gene {self.gene_ids[i]!r}, "
                f"sample {self.sample_ids[j]!r}"
            )
        self.values.flags.writeable = False

    @property
    def n_genes(self) -> int:
        return self.values.shape[0]

    @property
    def n_samples(self) -> int:
        return self.values.shape[1]


@dataclass
class SignatureMatrix:
    """Nonnegative N x k matrix of per-cell-type reference expression."""

    values: np.ndarray

    def __post_init__(self):
        self.values = _as_float_matrix(self.values, "signature matrix")
        if self.values.shape[1] < 2:
            raise DataError("signature matrix needs at least 2 cell types")
        if np.any(self.values < 0):
            raise DataError("signature matrix has negative entries")
        self.values.flags.writeable = False

    @property
    def n_types(self) -> int:
        return self.values.shape[1]


@dataclass
class ProportionMatrix:
    """Nonnegative k x n matrix whose columns each sum to one."""

    values: np.ndarray

    def __post_init__(self):
        self.values = _as_float_matrix(self.values, "proportion matrix")
        if np.any(self.values < 0):
            raise DataError("proportion matrix has negative entries")
        sums = self.values.sum(axis=0)
        bad = np.argwhere(np.abs(sums - 1.0) > COLUMN_SUM_TOL)
        if bad.size:
            j = int(bad[0][0])
            raise DataError(
                f"proportion column {j} sums to {sums[j]!r}, expected 1"
            )
        self.values.flags.writeable = False

    @property
    def n_types(self) -> int:
        return self.values.shape[0]


@dataclass
class FactorPair:
    """A compatible (C, P) factor pair."""

    c: SignatureMatrix
    p: ProportionMatrix

    def __post_init__(self):
        k_c = self.c.values.shape[1]
        k_p, n = self.p.values.shape
        if k_c != k_p:
            raise DataError(f"incompatible factors: C has k={k_c}, P has k={k_p}")
        if k_p > n:
            raise DataError(f"more cell types ({k_p}) than samples ({n})")

    def product(self) -> np.ndarray:
        return self.c.values @ self.p.values


def eisen_distance(x, y) -> float:
    """Eisen cosine correlation distance 1 - <x,y>/(|x||y|).

    Scale-invariant per argument and symmetric; 0 for positively collinear
    vectors, 1 for orthogonal ones, up to 2 for anti-parallel ones.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    nx = np.linalg.norm(x)
    ny = np.linalg.norm(y)
    if nx < EPS_NORM:
        raise DataError("eisen distance undefined: first vector has zero norm")
    if ny < EPS_NORM:
        raise DataError("eisen distance undefined: second vector has zero norm")
    return 1.0 - float(np.dot(x, y)) / (nx * ny)


def relative_residue(g: ExpressionMatrix, factors: FactorPair) -> float:
    """Relative Frobenius residue ||G - CP||_F / ||G||_F."""
    return relative_residue_arrays(g.values, factors.c.values, factors.p.values)


def relative_residue_arrays(g: np.ndarray, c: np.ndarray, p: np.ndarray) -> float:
    g = np.asarray(g, dtype=float)
    norm_g = np.linalg.norm(g)
    if norm_g < EPS_NORM:
        raise DataError("relative residue undefined for a zero data matrix")
    if c.shape[0] != g.shape[0] or p.shape[1] != g.shape[1] or c.shape[1] != p.shape[0]:
        raise DataError(
            f"incompatible shapes: G {g.shape}, C {c.shape}, P {p.shape}"
        )
    return float(np.linalg.norm(g - c @ p) / norm_g)


def l1_normalize_columns(m) -> np.ndarray:
    """Scale each nonnegative column to unit l1 norm."""
    m = np.asarray(m, dtype=float)
    if np.any(m < 0):
        raise DataError("l1 column normalization requires nonnegative entries")
    sums = m.sum(axis=0)
    bad = np.argwhere(sums <= 0)
    if bad.size:
        raise DataError(f"column {int(bad[0][0])} has zero sum, cannot normalize")
    return m / sums


def row_norms(m: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.asarray(m, dtype=float), axis=1)


def unit_rows(m: np.ndarray, eps: float = EPS_NORM):
    """Rows scaled to unit l2 norm.

    Returns ``(unit, norms, inv_norms)``; rows with norm below ``eps`` get
    inverse norm 0, so they map to zero rows instead of blowing up.
    """
    m = np.asarray(m, dtype=float)
    norms = np.linalg.norm(m, axis=1)
    inv = np.where(norms > eps, 1.0 / np.maximum(norms, eps), 0.0)
    return m * inv[:, None], norms, inv
