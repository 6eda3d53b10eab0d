"""Command-line interface.

Subcommands: ``deconvolve`` (full pipeline on an expression TSV),
``synth`` (write a ground-truthed synthetic data set), ``bench``
(synthetic benchmark table over noise levels) and ``cluster``
(clustering-only outputs for bandwidth sweeps).

Exit codes: 0 success, 1 usage/parameter error, 2 data error, 3 numeric
failure.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .errors import DataError, NumericError, ParameterError
from .graph import GraphSparsity
from .io import (
    PreprocessConfig,
    build_manifest,
    load_expression_tsv,
    preprocess,
    write_diagnostics_jsonl,
    write_expression_tsv,
    write_manifest,
    write_matrix_tsv,
)
from .pipeline import (
    BENCH_NDR_LIST,
    DEFAULT_LAMBDA_TILDE_BENCH,
    DEFAULT_LAMBDA_TILDE_DATA,
    DEFAULT_SIGMA,
    default_split,
    prepare_structure,
    run_benchmark,
    run_deconvolution,
)
from .synthetic import SyntheticSpec, generate_synthetic


def _parse_float_list(text: str, flag: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ParameterError(f"{flag} expects a comma-separated float list") from exc


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ParameterError(f"{flag} expects a comma-separated integer list") from exc


def _ensure_out_dir(out: str) -> Path:
    path = Path(out)
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise click.UsageError(f"output directory {out!r} is not writable: {exc}")
    return path


def _type_ids(k: int) -> list[str]:
    return [f"type_{r + 1}" for r in range(k)]


def _write_factor_tsvs(out: Path, gene_ids, sample_ids, c_vals, p_vals) -> None:
    k = c_vals.shape[1]
    write_matrix_tsv(out / "C.tsv", c_vals, gene_ids, _type_ids(k), corner="gene")
    write_matrix_tsv(out / "P.tsv", p_vals, _type_ids(k), sample_ids, corner="type")


@click.group()
@click.version_option(version=__version__, prog_name="graphdeconv")
def cli():
    """Complete deconvolution of bulk expression matrices G = C P."""


def _preprocess_options(fn):
    fn = click.option(
        "--no-preprocess", is_flag=True, default=False,
        help="Skip row filtering before the graph is built.",
    )(fn)
    fn = click.option(
        "--min-row-quantile", type=float, default=0.02, show_default=True,
        help="Drop rows below this row-norm quantile.",
    )(fn)
    fn = click.option(
        "--max-row-quantile", type=float, default=0.995, show_default=True,
        help="Drop rows above this row-norm quantile.",
    )(fn)
    fn = click.option(
        "--target-gene-count", type=int, default=None,
        help="Keep only this many highest-variance rows.",
    )(fn)
    return fn


def _load_and_filter(input_path, no_preprocess, min_row_quantile, max_row_quantile,
                     target_gene_count):
    g = load_expression_tsv(input_path)
    if no_preprocess:
        return g, np.arange(g.n_genes)
    cfg = PreprocessConfig(
        min_row_norm_quantile=min_row_quantile,
        max_row_norm_quantile=max_row_quantile,
        target_gene_count=target_gene_count,
    )
    return preprocess(g, cfg)


@cli.command()
@click.option("--input", "input_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--k", required=True, type=int, help="Number of cell types.")
@click.option("--sigma", type=float, default=DEFAULT_SIGMA, show_default=True)
@click.option("--lambda-tilde", type=float, default=DEFAULT_LAMBDA_TILDE_DATA,
              show_default=True, help="Penalty strength divided by rho.")
@click.option("--rho", type=float, default=1.6e3, show_default=True)
@click.option("--gamma", type=float, default=1.5e4, show_default=True)
@click.option("--markers-per-cluster", type=int, default=None,
              help="Marker genes per cluster (default: a third of the smallest cluster).")
@click.option("--marker-strategy", default="medoid", show_default=True,
              type=click.Choice(["medoid", "centroid", "max-mean-correlation"]))
@click.option("--tol", type=float, default=1e-5, show_default=True)
@click.option("--max-iter", type=int, default=2000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--sparsify", default="dense", show_default=True,
              help="Graph sparsity: dense, knn:<m> or threshold:<tau>.")
@click.option("--out", required=True, help="Output directory.")
@_preprocess_options
def deconvolve(input_path, k, sigma, lambda_tilde, rho, gamma, markers_per_cluster,
               marker_strategy, tol, max_iter, seed, sparsify, out,
               no_preprocess, min_row_quantile, max_row_quantile, target_gene_count):
    """Deconvolve an expression TSV into signatures C and proportions P."""
    out_dir = _ensure_out_dir(out)
    sparsity = GraphSparsity.parse(sparsify)
    g, kept = _load_and_filter(input_path, no_preprocess, min_row_quantile,
                               max_row_quantile, target_gene_count)

    result = run_deconvolution(
        g, k,
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
    structure = result.structure
    solution = result.solution

    _write_factor_tsvs(out_dir, g.gene_ids, g.sample_ids,
                       solution.factors.c.values, solution.factors.p.values)
    marker_table = np.column_stack([
        structure.clusters.labels.astype(float),
        structure.markers.chi.astype(float),
        structure.markers.g.astype(float),
    ])
    write_matrix_tsv(out_dir / "markers.tsv", marker_table, g.gene_ids,
                     ["cluster", "is_marker", "assigned_type"], corner="gene")
    write_matrix_tsv(out_dir / "embedding.tsv", structure.clusters.embedding,
                     g.gene_ids, [f"ev_{j + 1}" for j in range(k)], corner="gene")
    write_diagnostics_jsonl(out_dir / "diagnostics.jsonl", solution.history)
    write_manifest(out_dir / "manifest.json", build_manifest(
        "deconvolve",
        {
            "input": str(input_path),
            "k": k,
            "sigma": sigma,
            "lambda_tilde": lambda_tilde,
            "rho": rho,
            "gamma": gamma,
            "markers_per_cluster": structure.markers_per_cluster,
            "marker_strategy": marker_strategy,
            "tol": tol,
            "max_iter": max_iter,
            "seed": seed,
            "sparsify": sparsity.describe(),
            "preprocess": not no_preprocess,
            "min_row_quantile": min_row_quantile,
            "max_row_quantile": max_row_quantile,
            "target_gene_count": target_gene_count,
            "genes_kept": int(kept.size),
            "converged": solution.converged,
            "iterations": solution.iterations,
            "final_residue": solution.final_residue,
        },
        input_paths=[input_path],
    ))
    click.echo(
        f"deconvolved {g.n_genes} genes x {g.n_samples} samples into k={k}: "
        f"residue {solution.final_residue:.4g} after {solution.iterations} iterations"
        f" ({'converged' if solution.converged else 'iteration cap reached'})"
    )


@cli.command()
@click.option("--n-genes", required=True, type=int)
@click.option("--n-samples", required=True, type=int)
@click.option("--k", required=True, type=int)
@click.option("--split", default=None,
              help="Comma-separated marker split N1,..,Nk,Nrest (default: even).")
@click.option("--ndr", type=float, default=0.0, show_default=True,
              help="Noise-to-data ratio ||eps||_F / ||CP||_F.")
@click.option("--tightness", type=float, default=0.05, show_default=True,
              help="Relative off-type leakage of marker rows.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True)
def synth(n_genes, n_samples, k, split, ndr, tightness, seed, out):
    """Write a ground-truthed synthetic data set (G, C_true, P_true, labels).

    Negative entries produced by additive noise are clipped so the emitted
    TSV satisfies the expression-file contract; the achieved
    noise-to-data ratio after clipping is recorded in the manifest.
    """
    out_dir = _ensure_out_dir(out)
    split_values = (
        tuple(_parse_int_list(split, "--split")) if split else default_split(n_genes, k)
    )
    spec = SyntheticSpec(
        n_genes=n_genes,
        n_samples=n_samples,
        n_types=k,
        marker_split=split_values,
        ndr=ndr,
        marker_tightness=tightness,
        seed=seed,
        clip_negative=True,
    )
    truth = generate_synthetic(spec)
    write_expression_tsv(out_dir / "G.tsv", truth.g)
    _write_factor_tsvs(out_dir, truth.g.gene_ids, truth.g.sample_ids,
                       truth.c_true.values, truth.p_true.values)
    (out_dir / "C.tsv").rename(out_dir / "C_true.tsv")
    (out_dir / "P.tsv").rename(out_dir / "P_true.tsv")
    write_matrix_tsv(out_dir / "labels.tsv",
                     truth.labels.astype(float)[:, None],
                     truth.g.gene_ids, ["label"], corner="gene")
    write_manifest(out_dir / "manifest.json", build_manifest(
        "synth",
        {
            "n_genes": n_genes,
            "n_samples": n_samples,
            "k": k,
            "split": list(split_values),
            "ndr": ndr,
            "tightness": tightness,
            "seed": seed,
            "clip_negative": True,
            "achieved_ndr": truth.achieved_ndr,
        },
    ))
    click.echo(
        f"wrote synthetic {n_genes}x{n_samples} data (k={k}, "
        f"achieved NDR {truth.achieved_ndr:.4g}) to {out_dir}"
    )


@cli.command()
@click.option("--ndr-list", default=",".join(str(x) for x in BENCH_NDR_LIST),
              show_default=True)
@click.option("--seeds", default="0,1,2", show_default=True)
@click.option("--n-genes", type=int, default=800, show_default=True)
@click.option("--n-samples", type=int, default=30, show_default=True)
@click.option("--k", type=int, default=3, show_default=True)
@click.option("--split", default=None,
              help="Marker split N1,..,Nk,Nrest (default: even).")
@click.option("--sigma", type=float, default=DEFAULT_SIGMA, show_default=True)
@click.option("--lambda-tilde", type=float, default=DEFAULT_LAMBDA_TILDE_BENCH,
              show_default=True)
@click.option("--rho", type=float, default=1.6e3, show_default=True)
@click.option("--gamma", type=float, default=1.5e4, show_default=True)
@click.option("--markers-per-cluster", type=int, default=None)
@click.option("--tol", type=float, default=1e-5, show_default=True)
@click.option("--max-iter", type=int, default=2000, show_default=True)
@click.option("--out", required=True)
def bench(ndr_list, seeds, n_genes, n_samples, k, split, sigma, lambda_tilde,
          rho, gamma, markers_per_cluster, tol, max_iter, out):
    """Synthetic benchmark: aligned errors and residues per noise level."""
    out_dir = _ensure_out_dir(out)
    ndr_values = _parse_float_list(ndr_list, "--ndr-list")
    seed_values = _parse_int_list(seeds, "--seeds")
    if not ndr_values or not seed_values:
        raise ParameterError("bench needs at least one NDR and one seed")
    split_values = (
        tuple(_parse_int_list(split, "--split")) if split else default_split(n_genes, k)
    )
    report = run_benchmark(
        ndr_values,
        seed_values,
        n_genes=n_genes,
        n_samples=n_samples,
        k=k,
        split=split_values,
        sigma=sigma,
        lambda_tilde=lambda_tilde,
        rho=rho,
        gamma=gamma,
        markers_per_cluster=markers_per_cluster,
        tol=tol,
        max_iter=max_iter,
    )
    table = np.array([[row.err_c, row.err_p, row.residue] for row in report.rows])
    write_matrix_tsv(out_dir / "report.tsv", table,
                     ["%.17g" % row.ndr for row in report.rows],
                     ["err_c", "err_p", "residue"], corner="ndr")
    runs_dir = out_dir / "runs"
    runs_dir.mkdir(exist_ok=True)
    for run in report.runs:
        run_dir = runs_dir / f"ndr_{run.ndr:g}_seed_{run.seed}"
        run_dir.mkdir(exist_ok=True)
        with open(run_dir / "metrics.json", "w", encoding="utf-8") as fh:
            json.dump(dataclasses.asdict(run), fh, indent=2, sort_keys=True)
            fh.write("\n")
    write_manifest(out_dir / "manifest.json", build_manifest(
        "bench",
        {
            "ndr_list": ndr_values,
            "seeds": seed_values,
            "n_genes": n_genes,
            "n_samples": n_samples,
            "k": k,
            "split": list(split_values),
            "sigma": sigma,
            "lambda_tilde": lambda_tilde,
            "rho": rho,
            "gamma": gamma,
            "markers_per_cluster": markers_per_cluster,
            "tol": tol,
            "max_iter": max_iter,
        },
    ))
    for row in report.rows:
        click.echo(
            f"ndr {row.ndr:g}: err_C {row.err_c:.4f}, err_P {row.err_p:.4f}, "
            f"residue {row.residue:.4f} (over {row.n_runs} runs)"
        )


@cli.command()
@click.option("--input", "input_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--k", required=True, type=int)
@click.option("--sigma", type=float, default=DEFAULT_SIGMA, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--sparsify", default="dense", show_default=True)
@click.option("--out", required=True)
@_preprocess_options
def cluster(input_path, k, sigma, seed, sparsify, out,
            no_preprocess, min_row_quantile, max_row_quantile, target_gene_count):
    """Cluster gene rows only; writes labels and the spectral embedding."""
    out_dir = _ensure_out_dir(out)
    sparsity = GraphSparsity.parse(sparsify)
    g, kept = _load_and_filter(input_path, no_preprocess, min_row_quantile,
                               max_row_quantile, target_gene_count)
    structure = prepare_structure(g, k, sigma=sigma, seed=seed, sparsity=sparsity)
    write_matrix_tsv(out_dir / "labels.tsv",
                     structure.clusters.labels.astype(float)[:, None],
                     g.gene_ids, ["cluster"], corner="gene")
    write_matrix_tsv(out_dir / "embedding.tsv", structure.clusters.embedding,
                     g.gene_ids, [f"ev_{j + 1}" for j in range(k)], corner="gene")
    write_manifest(out_dir / "manifest.json", build_manifest(
        "cluster",
        {
            "input": str(input_path),
            "k": k,
            "sigma": sigma,
            "seed": seed,
            "sparsify": sparsity.describe(),
            "preprocess": not no_preprocess,
            "genes_kept": int(kept.size),
        },
        input_paths=[input_path],
    ))
    sizes = [int(idx.size) for idx in structure.clusters.groups]
    click.echo(f"clustered {g.n_genes} genes into {k} groups of sizes {sizes}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except ParameterError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except DataError as exc:
        click.echo(f"data error: {exc}", err=True)
        return 2
    except NumericError as exc:
        click.echo(f"numeric failure: {exc}", err=True)
        return 3


if __name__ == "__main__":
    sys.exit(main())
