"""TSV ingestion, preprocessing filters, and run artifacts.

All tabular outputs are tab-separated with 17-significant-digit floats so
a write/read round trip is bit-exact.  Per-iteration solver diagnostics go
to JSON lines; every run directory carries a manifest with the full
configuration, input digests and the tool version.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, ParameterError
from .matrices import EPS_NORM, ExpressionMatrix
from .solver import IterationRecord

FLOAT_FORMAT = "%.17g"


def _format_float(x: float) -> str:
    return FLOAT_FORMAT % x


def _parse_table(path: Path):
    """Parse a TSV with a header row and one id column; strict and line-addressed."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataError(f"{path}: empty file")
    header = lines[0].split("\t")
    if len(header) < 2:
        raise DataError(f"{path}: line 1: header needs an id column and data columns")
    col_ids = header[1:]
    n_cols = len(col_ids)
    row_ids: list[str] = []
    rows: list[list[float]] = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split("\t")
        if len(cells) != n_cols + 1:
            raise DataError(
                f"{path}: line {ln}: expected {n_cols + 1} fields, got {len(cells)}"
            )
        row_ids.append(cells[0])
        parsed = []
        for j, cell in enumerate(cells[1:]):
            try:
                parsed.append(float(cell))
            except ValueError as exc:
                raise DataError(
                    f"{path}: line {ln}: non-numeric value {cell!r} in column "
                    f"{col_ids[j]!r}"
                ) from exc
        rows.append(parsed)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return np.array(rows, dtype=float), row_ids, col_ids


def load_expression_tsv(path) -> ExpressionMatrix:
    """Read a gene-by-sample expression TSV.

    Layout: header row with sample ids (first cell ignored), then one row
    per gene: gene id followed by numeric fields.  Ragged rows,
    non-numeric cells, duplicate ids and negative values are parse errors
    naming the offending line.
    """
    values, gene_ids, sample_ids = _parse_table(Path(path))
    neg = np.argwhere(values < 0)
    if neg.size:
        i, j = neg[0]
        raise DataError(
            f"{path}: line {i + 2}: negative value for gene {gene_ids[i]!r}, "
            f"sample {sample_ids[j]!r}"
        )
    for ids, what in ((gene_ids, "gene ids"), (sample_ids, "sample ids")):
        seen = set()
        for pos, x in enumerate(ids):
            if x in seen:
                line = pos + 2 if what == "gene ids" else 1
                raise DataError(f"{path}: line {line}: duplicate {what[:-1]} {x!r}")
            seen.add(x)
    return ExpressionMatrix(values, gene_ids=gene_ids, sample_ids=sample_ids)


def load_matrix_tsv(path):
    """Read any id-addressed numeric TSV; returns (values, row_ids, col_ids)."""
    return _parse_table(Path(path))


def write_matrix_tsv(path, values: np.ndarray, row_ids, col_ids, corner: str = "id") -> None:
    values = np.asarray(values, dtype=float)
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join([corner, *map(str, col_ids)]) + "\n")
        for rid, row in zip(row_ids, values):
            fh.write("\t".join([str(rid), *(_format_float(x) for x in row)]) + "\n")


def write_expression_tsv(path, g: ExpressionMatrix) -> None:
    write_matrix_tsv(path, g.values, g.gene_ids, g.sample_ids, corner="gene")


@dataclass(frozen=True)
class PreprocessConfig:
    """Row/column filters applied before graph construction."""

    min_row_norm_quantile: float = 0.02
    max_row_norm_quantile: float = 0.995
    drop_zero_rows: bool = True
    target_gene_count: int | None = None
    # Sample (column) filtering is available but off by default.
    min_col_norm_quantile: float | None = None
    max_col_norm_quantile: float | None = None

    def __post_init__(self):
        if not (0 <= self.min_row_norm_quantile < self.max_row_norm_quantile <= 1):
            raise ParameterError("row-norm quantiles need 0 <= min < max <= 1")
        if self.target_gene_count is not None and self.target_gene_count < 1:
            raise ParameterError("target_gene_count must be >= 1")
        if (self.min_col_norm_quantile is None) != (self.max_col_norm_quantile is None):
            raise ParameterError("set both column quantiles or neither")
        if self.min_col_norm_quantile is not None and not (
            0 <= self.min_col_norm_quantile < self.max_col_norm_quantile <= 1
        ):
            raise ParameterError("column-norm quantiles need 0 <= min < max <= 1")


def preprocess(g: ExpressionMatrix, cfg: PreprocessConfig):
    """Drop zero rows, row-norm outliers, then cap to the highest-variance rows.

    Returns the filtered matrix plus the surviving original row indices so
    results stay traceable to the input file.
    """
    values = g.values
    kept = np.arange(g.n_genes)

    if cfg.drop_zero_rows:
        norms = np.linalg.norm(values, axis=1)
        kept = kept[norms > EPS_NORM]
        if kept.size == 0:
            raise DataError("all rows are zero; nothing to deconvolve")

    norms = np.linalg.norm(values[kept], axis=1)
    lo = np.quantile(norms, cfg.min_row_norm_quantile)
    hi = np.quantile(norms, cfg.max_row_norm_quantile)
    band = (norms >= lo) & (norms <= hi)
    kept = kept[band]
    if kept.size == 0:
        raise DataError(
            "row-norm quantile band removed every row; loosen the quantiles"
        )

    if cfg.target_gene_count is not None and kept.size > cfg.target_gene_count:
        variances = values[kept].var(axis=1)
        order = np.argsort(-variances, kind="stable")[: cfg.target_gene_count]
        kept = np.sort(kept[order])

    sample_ids = list(g.sample_ids)
    out = values[kept]
    if cfg.min_col_norm_quantile is not None:
        col_norms = np.linalg.norm(out, axis=0)
        lo = np.quantile(col_norms, cfg.min_col_norm_quantile)
        hi = np.quantile(col_norms, cfg.max_col_norm_quantile)
        cols = np.flatnonzero((col_norms >= lo) & (col_norms <= hi))
        if cols.size == 0:
            raise DataError("column-norm band removed every sample")
        out = out[:, cols]
        sample_ids = [sample_ids[j] for j in cols]

    filtered = ExpressionMatrix(
        out,
        gene_ids=[g.gene_ids[i] for i in kept],
        sample_ids=sample_ids,
        nonnegative=g.nonnegative,
    )
    return filtered, kept


def write_diagnostics_jsonl(path, history: list[IterationRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in history:
            fh.write(json.dumps(dataclasses.asdict(record)) + "\n")


def read_diagnostics_jsonl(path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    return records


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def build_manifest(command: str, params: dict, input_paths=()) -> dict:
    from . import __version__

    return {
        "tool": "graphdeconv",
        "version": __version__,
        "command": command,
        "parameters": params,
        "inputs": {str(p): sha256_file(p) for p in input_paths},
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }


def write_manifest(path, manifest: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
