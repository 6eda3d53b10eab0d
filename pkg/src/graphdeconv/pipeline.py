"""End-to-end workflows tying the modules together.

``run_deconvolution`` is the whole pipeline on one expression matrix:
similarity graph, spectral clustering, marker selection, then the ADMM
solve.  ``run_benchmark`` repeats it over synthetic instances at several
noise levels and reports aligned errors per level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import (
    ClusterAssignment,
    GraphSparsity,
    LaplacianKind,
    MarkerAssignment,
    SimilarityGraph,
    build_adjacency,
    cluster_rows,
    graph_laplacian,
    select_markers,
    spectral_embed,
)
from .matrices import ExpressionMatrix
from .solver import Solution, SolverConfig, solve
from .synthetic import SyntheticSpec, align_solution, generate_synthetic

DEFAULT_SIGMA = 0.2
DEFAULT_LAMBDA_TILDE_DATA = 0.6
DEFAULT_LAMBDA_TILDE_BENCH = 4.0
BENCH_NDR_LIST = (0.071, 0.162, 0.336, 0.599)

# Fraction of the smallest cluster taken as markers when no explicit
# count is requested; roughly the share used on real tissue data.
_DEFAULT_MARKER_FRACTION = 1 / 3


def default_markers_per_cluster(clusters: ClusterAssignment) -> int:
    smallest = min(idx.size for idx in clusters.groups)
    return max(1, int(smallest * _DEFAULT_MARKER_FRACTION))


@dataclass
class StructureResult:
    graph: SimilarityGraph
    clusters: ClusterAssignment
    markers: MarkerAssignment
    markers_per_cluster: int


def prepare_structure(
    g: ExpressionMatrix,
    k: int,
    sigma: float = DEFAULT_SIGMA,
    seed: int = 0,
    sparsity: GraphSparsity | str = "dense",
    markers_per_cluster: int | None = None,
    marker_strategy: str = "medoid",
) -> StructureResult:
    """Graph, clustering and marker selection for one expression matrix."""
    graph = build_adjacency(g, sigma=sigma, sparsity=sparsity)
    laplacian = graph_laplacian(graph, LaplacianKind.SYMMETRIC)
    embedding = spectral_embed(laplacian, k)
    clusters = cluster_rows(embedding, k, seed)
    per_cluster = (
        markers_per_cluster
        if markers_per_cluster is not None
        else default_markers_per_cluster(clusters)
    )
    markers = select_markers(g, clusters, per_cluster, strategy=marker_strategy)
    return StructureResult(
        graph=graph,
        clusters=clusters,
        markers=markers,
        markers_per_cluster=per_cluster,
    )


@dataclass
class DeconvolutionResult:
    structure: StructureResult
    solution: Solution
    config: SolverConfig


def run_deconvolution(
    g: ExpressionMatrix,
    k: int,
    *,
    sigma: float = DEFAULT_SIGMA,
    lambda_tilde: float = DEFAULT_LAMBDA_TILDE_DATA,
    rho: float = 1.6e3,
    gamma: float = 1.5e4,
    markers_per_cluster: int | None = None,
    marker_strategy: str = "medoid",
    tol: float = 1e-5,
    max_iter: int = 2000,
    seed: int = 0,
    sparsity: GraphSparsity | str = "dense",
    callback=None,
) -> DeconvolutionResult:
    structure = prepare_structure(
        g,
        k,
        sigma=sigma,
        seed=seed,
        sparsity=sparsity,
        markers_per_cluster=markers_per_cluster,
        marker_strategy=marker_strategy,
    )
    cfg = SolverConfig.from_lambda_tilde(
        lambda_tilde,
        rho=rho,
        gamma=gamma,
        tol_outer=tol,
        max_outer=max_iter,
        seed=seed,
    )
    solution = solve(g, structure.markers, structure.graph, cfg, callback=callback)
    return DeconvolutionResult(structure=structure, solution=solution, config=cfg)


@dataclass
class BenchRun:
    ndr: float
    seed: int
    err_c: float
    err_p: float
    residue: float
    achieved_ndr: float
    converged: bool
    iterations: int


@dataclass
class BenchRow:
    ndr: float
    err_c: float
    err_p: float
    residue: float
    n_runs: int


@dataclass
class BenchReport:
    rows: list[BenchRow]
    runs: list[BenchRun]


def default_split(n_genes: int, k: int) -> tuple[int, ...]:
    """Even marker blocks with the remainder as non-marker rows."""
    base = n_genes // (k + 1)
    return tuple([base] * k + [n_genes - k * base])


def run_benchmark(
    ndr_list=BENCH_NDR_LIST,
    seeds=(0, 1, 2),
    *,
    n_genes: int = 800,
    n_samples: int = 30,
    k: int = 3,
    split: tuple[int, ...] | None = None,
    marker_tightness: float = 0.05,
    sigma: float = DEFAULT_SIGMA,
    lambda_tilde: float = DEFAULT_LAMBDA_TILDE_BENCH,
    rho: float = 1.6e3,
    gamma: float = 1.5e4,
    markers_per_cluster: int | None = None,
    marker_strategy: str = "medoid",
    tol: float = 1e-5,
    max_iter: int = 2000,
    sparsity: GraphSparsity | str = "dense",
) -> BenchReport:
    """Synthetic benchmark over noise levels, averaged over seeds."""
    split = split if split is not None else default_split(n_genes, k)
    runs: list[BenchRun] = []
    rows: list[BenchRow] = []
    for ndr in ndr_list:
        level_runs = []
        for seed in seeds:
            truth = generate_synthetic(
                SyntheticSpec(
                    n_genes=n_genes,
                    n_samples=n_samples,
                    n_types=k,
                    marker_split=tuple(split),
                    ndr=ndr,
                    marker_tightness=marker_tightness,
                    seed=seed,
                )
            )
            result = run_deconvolution(
                truth.g,
                k,
                sigma=sigma,
                lambda_tilde=lambda_tilde,
                rho=rho,
                gamma=gamma,
                markers_per_cluster=markers_per_cluster,
                marker_strategy=marker_strategy,
                tol=tol,
                max_iter=max_iter,
                seed=seed,
                sparsity=sparsity,
            )
            report = align_solution(result.solution.factors, truth)
            level_runs.append(
                BenchRun(
                    ndr=ndr,
                    seed=seed,
                    err_c=report.err_c,
                    err_p=report.err_p,
                    residue=report.residue,
                    achieved_ndr=truth.achieved_ndr,
                    converged=result.solution.converged,
                    iterations=result.solution.iterations,
                )
            )
        runs.extend(level_runs)
        rows.append(
            BenchRow(
                ndr=ndr,
                err_c=float(np.mean([r.err_c for r in level_runs])),
                err_p=float(np.mean([r.err_p for r in level_runs])),
                residue=float(np.mean([r.residue for r in level_runs])),
                n_runs=len(level_runs),
            )
        )
    return BenchReport(rows=rows, runs=runs)
