"""Command line interface.

Every command that writes files also writes ``<output>.manifest.json``
recording the command, resolved arguments, seed, content hashes of all
inputs and outputs, and library versions.  Exit codes: 0 on success,
2 for invalid inputs or configuration, 3 when an iterative solver fails
to converge (partial traces are still written where possible).

A ``--config FILE`` option (JSON, or TOML when the extension is .toml)
supplies defaults for any option of that command; flags given on the
command line take precedence.  Worker threads for pointwise solvers
come from ``--threads`` or the ``BWFLOW_THREADS`` environment variable.
"""

import functools
import json
import os
import sys
from pathlib import Path

import click
import numpy as np
import pandas as pd

from . import io as bio
from .barycenter import GdConfig, SgdConfig, frechet_mean_flow
from .cluster import elbow_scores, kmeans_flows, pairwise_flow_distances
from .exceptions import (
    NonConvergenceError,
    PointwiseFailureError,
    ValidationError,
)
from .flow import FlowSet, flow_distance
from .pca import tangent_pca
from .simulate import SimConfig, bimodal_dataset, sample_flows
from .smoothing import Kernel, lfr_estimate, nw_smooth, select_bandwidth
from .spectral import (
    SeriesPanel,
    center,
    difference,
    moving_average,
    spectral_density_flow,
)
from .linalg import ct


def _load_config(path):
    text = Path(path).read_bytes()
    if str(path).endswith(".toml"):
        try:
            import tomllib
        except ImportError:
            import tomli as tomllib
        return tomllib.loads(text.decode())
    return json.loads(text.decode())


def _config_callback(ctx, param, value):
    """Eagerly merge a config file into the defaults of this command."""
    if not value:
        return value
    try:
        cfg = _load_config(value)
    except Exception as err:
        raise click.UsageError(f"cannot read config {value}: {err}")
    if not isinstance(cfg, dict):
        raise click.UsageError(f"config {value} must be a table of options")
    merged = dict(ctx.default_map or {})
    merged.update({str(k).replace("-", "_"): v for k, v in cfg.items()})
    ctx.default_map = merged
    return value


def _config_option(fn):
    return click.option(
        "--config", type=click.Path(exists=True, dir_okay=False),
        callback=_config_callback, is_eager=True, expose_value=False,
        help="JSON or TOML file with option defaults.",
    )(fn)


def _resolve_threads(threads):
    if threads is not None:
        return threads
    env = os.environ.get("BWFLOW_THREADS")
    if env is None:
        return 1
    try:
        return max(1, int(env))
    except ValueError:
        raise ValidationError(f"BWFLOW_THREADS must be an integer, got {env!r}")


def _run(fn):
    """Map library errors onto documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except PointwiseFailureError as err:
            click.echo(f"error: {err}", err=True)
            sys.exit(3 if isinstance(err.cause, NonConvergenceError) else 2)
        except NonConvergenceError as err:
            click.echo(f"error: {err}", err=True)
            sys.exit(3)
        except ValidationError as err:
            click.echo(f"error: {err}", err=True)
            sys.exit(2)
        except OSError as err:
            click.echo(f"error: {err}", err=True)
            sys.exit(2)

    return wrapper


@click.group()
@click.version_option(package_name="bwflow", prog_name="bwflow")
def main():
    """Statistics for flows of covariance matrices."""


@main.command()
@_config_option
@click.option("--dim", default=10, show_default=True)
@click.option("--n-times", default=21, show_default=True)
@click.option("--n-flows", default=50, show_default=True)
@click.option("--nu", default=20.0, show_default=True)
@click.option("--truncation", default=50, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--template", default="bm_bb_geodesic", show_default=True,
              type=click.Choice(["bm_bb_geodesic", "matern_pair"]))
@click.option("--bimodal", is_flag=True, help="Two-population dataset with labels.")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--labels-out", type=click.Path(dir_okay=False),
              help="Label CSV (only with --bimodal).")
@_run
def simulate(dim, n_times, n_flows, nu, truncation, seed, template, bimodal,
             out, labels_out):
    """Sample a synthetic FlowSet and write it as BWF1."""
    cfg = SimConfig(dim=dim, n_times=n_times, n_flows=n_flows, nu=nu,
                    truncation=truncation, seed=seed, template=template)
    manifest = bio.RunManifest(
        "simulate",
        {"dim": dim, "n_times": n_times, "n_flows": n_flows, "nu": nu,
         "truncation": truncation, "template": template, "bimodal": bimodal},
        seed=seed,
    )
    if bimodal:
        flows, labels = bimodal_dataset(cfg)
    else:
        if labels_out:
            raise ValidationError("--labels-out requires --bimodal")
        flows, labels = sample_flows(cfg), None
    bio.write_flows(out, flows)
    manifest.add_output(out)
    if bimodal and labels_out:
        bio.write_labels_csv(labels_out, labels)
        manifest.add_output(labels_out)
    manifest.write(bio.manifest_path(out))
    click.echo(f"wrote {flows.n_flows} flows ({flows.n_times} x {flows.dim}) to {out}")


@main.command()
@_config_option
@click.option("--input", "input_", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--algo", default="gd", show_default=True,
              type=click.Choice(["gd", "sgd"]))
@click.option("--max-iter", default=200, show_default=True)
@click.option("--tol", default=1e-8, show_default=True)
@click.option("--steps", default=5000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--warm-start/--no-warm-start", default=True, show_default=True)
@click.option("--threads", default=None, type=int,
              help="Parallel grid points (default: BWFLOW_THREADS or 1).")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--trace-out", type=click.Path(dir_okay=False))
@_run
def mean(input_, algo, max_iter, tol, steps, seed, warm_start, threads, out,
         trace_out):
    """Pointwise Frechet mean flow of a BWF1 FlowSet."""
    threads = _resolve_threads(threads)
    manifest = bio.RunManifest(
        "mean",
        {"algo": algo, "max_iter": max_iter, "tol": tol, "steps": steps,
         "warm_start": warm_start, "threads": threads},
        seed=seed,
    )
    manifest.add_input(input_)
    flows = bio.read_bwf1(input_)
    try:
        mean_flow, traces = frechet_mean_flow(
            flows, algo=algo, gd_config=GdConfig(max_iter=max_iter, tol=tol),
            sgd_config=SgdConfig(steps=steps, seed=seed),
            warm_start=warm_start, n_jobs=threads,
        )
    except PointwiseFailureError as err:
        if trace_out and isinstance(err.cause, NonConvergenceError) \
                and err.cause.trace is not None:
            bio.write_trace_csv(trace_out, [err.cause.trace])
        raise
    bio.write_flows(out, mean_flow)
    manifest.add_output(out)
    if trace_out:
        bio.write_trace_csv(trace_out, traces)
        manifest.add_output(trace_out)
    manifest.write(bio.manifest_path(out))
    bad = [j for j, t in enumerate(traces) if not getattr(t, "converged", True)]
    if bad:
        click.echo(
            f"error: mean did not reach tolerance at grid indices {bad[:5]}",
            err=True,
        )
        sys.exit(3)
    click.echo(f"wrote mean flow to {out}")


@main.command()
@_config_option
@click.option("--input", "input_", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--n-components", default=None, type=int)
@click.option("--max-iter", default=200, show_default=True)
@click.option("--tol", default=1e-8, show_default=True)
@click.option("--warm-start/--no-warm-start", default=True, show_default=True)
@click.option("--threads", default=None, type=int)
@click.option("--out", required=True, type=click.Path(file_okay=False),
              help="Model output directory.")
@_run
def pca(input_, n_components, max_iter, tol, warm_start, threads, out):
    """Tangent principal component analysis of a BWF1 FlowSet."""
    threads = _resolve_threads(threads)
    manifest = bio.RunManifest(
        "pca",
        {"n_components": n_components, "max_iter": max_iter, "tol": tol,
         "warm_start": warm_start, "threads": threads},
    )
    manifest.add_input(input_)
    flows = bio.read_bwf1(input_)
    mean_flow, traces = frechet_mean_flow(
        flows, gd_config=GdConfig(max_iter=max_iter, tol=tol),
        warm_start=warm_start, n_jobs=threads,
    )
    model = tangent_pca(flows, mean_flow=mean_flow, n_components=n_components)
    bio.save_pca_model(model, out)
    bio.write_eigenvalues_csv(
        Path(out) / "eigenvalues.csv", model.eigenvalues, model.total_variance
    )
    for name in ("model.json", "mean.bwf1", "components.bwf1", "scores.csv",
                 "eigenvalues.csv"):
        target = Path(out) / name
        if target.exists():
            manifest.add_output(target)
    manifest.write(Path(out) / "manifest.json")
    bad = [j for j, t in enumerate(traces) if not getattr(t, "converged", True)]
    if bad:
        click.echo(
            f"error: mean did not reach tolerance at grid indices {bad[:5]}",
            err=True,
        )
        sys.exit(3)
    click.echo(
        f"wrote model with {model.n_components} components to {out} "
        f"(total variance {model.total_variance:.6g})"
    )


@main.command()
@_config_option
@click.option("--obs", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Scattered observation CSV: flow_id, time, m_1_1..m_d_d.")
@click.option("--method", default="lfr", show_default=True,
              type=click.Choice(["nw", "lfr"]))
@click.option("--kernel", "kernel_kind", default="epanechnikov", show_default=True,
              type=click.Choice(["epanechnikov", "uniform", "gaussian_truncated"]))
@click.option("--bandwidth", default="auto", show_default=True,
              help="Kernel bandwidth, or 'auto' for leave-one-flow-out selection.")
@click.option("--bandwidth-grid", default="0.05,0.08,0.12,0.2,0.3", show_default=True,
              help="Candidate bandwidths tried by 'auto'.")
@click.option("--grid-points", default=51, show_default=True)
@click.option("--max-iter", default=200, show_default=True)
@click.option("--tol", default=1e-8, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--diagnostics-out", type=click.Path(dir_okay=False))
@click.option("--bandwidth-table", type=click.Path(dir_okay=False))
@_run
def smooth(obs, method, kernel_kind, bandwidth, bandwidth_grid, grid_points,
           max_iter, tol, out, diagnostics_out, bandwidth_table):
    """Smooth scattered covariance observations into a flow."""
    manifest = bio.RunManifest(
        "smooth",
        {"method": method, "kernel": kernel_kind, "bandwidth": bandwidth,
         "grid_points": grid_points, "max_iter": max_iter, "tol": tol},
    )
    manifest.add_input(obs)
    scatter = bio.read_obs_csv(obs)
    eval_grid = np.linspace(0.0, 1.0, grid_points)
    gd_config = GdConfig(max_iter=max_iter, tol=tol)
    if bandwidth == "auto":
        try:
            candidates = [float(x) for x in bandwidth_grid.split(",") if x.strip()]
        except ValueError:
            raise ValidationError(f"bad --bandwidth-grid {bandwidth_grid!r}")
        h, table = select_bandwidth(scatter, candidates, kind=kernel_kind,
                                    method=method, gd_config=gd_config)
        if bandwidth_table:
            pd.DataFrame(table, columns=["bandwidth", "risk"]).to_csv(
                bandwidth_table, index=False
            )
            manifest.add_output(bandwidth_table)
        click.echo(f"selected bandwidth {h:g}")
    else:
        try:
            h = float(bandwidth)
        except ValueError:
            raise ValidationError(f"--bandwidth must be a number or 'auto', got {bandwidth!r}")
    kern = Kernel(kind=kernel_kind, bandwidth=h)
    if method == "nw":
        fitted = nw_smooth(scatter, kern, eval_grid)
        diags = None
    else:
        fitted, diags = lfr_estimate(scatter, kern, eval_grid, gd_config=gd_config,
                                     return_diagnostics=True)
    bio.write_flows(out, fitted)
    manifest.add_output(out)
    if diagnostics_out and diags is not None:
        rows = [
            (j, float(eval_grid[j]), flag) for j, flag in diags.flags
        ]
        pd.DataFrame(rows, columns=["grid_index", "time", "flag"]).to_csv(
            diagnostics_out, index=False
        )
        manifest.add_output(diagnostics_out)
    manifest.write(bio.manifest_path(out))
    click.echo(f"wrote smoothed flow ({grid_points} points) to {out}")


@main.command()
@_config_option
@click.option("--input", "input_", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Series CSV: optional time_index column plus coordinates.")
@click.option("--max-lag", required=True, type=int)
@click.option("--window", default="bartlett", show_default=True,
              type=click.Choice(["bartlett", "rect"]))
@click.option("--n-freqs", default=None, type=int,
              help="Frequency grid size (default 2*max_lag + 1).")
@click.option("--transform", default="center", show_default=True,
              type=click.Choice(["none", "center", "difference"]))
@click.option("--smooth-window", default=None, type=int,
              help="Optional centered moving-average width applied first.")
@click.option("--project/--no-project", default=True, show_default=True,
              help="Project each density matrix onto the PSD cone.")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@_run
def spectral(input_, max_lag, window, n_freqs, transform, smooth_window,
             project, out):
    """Lag-window spectral density flow of a stationary vector series."""
    manifest = bio.RunManifest(
        "spectral",
        {"max_lag": max_lag, "window": window, "n_freqs": n_freqs,
         "transform": transform, "smooth_window": smooth_window,
         "project": project},
    )
    manifest.add_input(input_)
    panel = SeriesPanel(bio.read_series_csv(input_))
    if smooth_window:
        panel = moving_average(panel, smooth_window)
    if transform == "center":
        panel = center(panel)
    elif transform == "difference":
        panel = difference(panel)
    sdf = spectral_density_flow(panel, max_lag=max_lag, n_freqs=n_freqs,
                                window=window, project=project)
    bio.write_flows(out, sdf)
    manifest.add_output(out)
    manifest.write(bio.manifest_path(out))
    click.echo(
        f"wrote spectral density flow ({sdf.n_times} frequencies, dim {sdf.dim}) to {out}"
    )


@main.command()
@_config_option
@click.option("--input", "input_", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--k", "n_clusters", required=True, type=int)
@click.option("--mode", required=True, type=click.Choice(["raw", "scores"]))
@click.option("--n-init", default=10, show_default=True)
@click.option("--max-iter", default=50, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--n-components", default=None, type=int,
              help="Score dimension in scores mode.")
@click.option("--labels-out", type=click.Path(dir_okay=False))
@click.option("--centers-out", type=click.Path(dir_okay=False),
              help="Centroid flows as BWF1 (raw mode only).")
@click.option("--elbow", default=None,
              help="Comma list of k values; writes an inertia table instead.")
@click.option("--elbow-out", type=click.Path(dir_okay=False))
@_run
def cluster(input_, n_clusters, mode, n_init, max_iter, seed, n_components,
            labels_out, centers_out, elbow, elbow_out):
    """K-means clustering of a BWF1 FlowSet."""
    manifest = bio.RunManifest(
        "cluster",
        {"k": n_clusters, "mode": mode, "n_init": n_init, "max_iter": max_iter,
         "n_components": n_components, "elbow": elbow},
        seed=seed,
    )
    manifest.add_input(input_)
    flows = bio.read_bwf1(input_)
    if elbow:
        if not elbow_out:
            raise ValidationError("--elbow requires --elbow-out")
        try:
            ks = [int(x) for x in elbow.split(",") if x.strip()]
        except ValueError:
            raise ValidationError(f"bad --elbow list {elbow!r}")
        ks_arr, inertias = elbow_scores(flows, ks, mode, n_init=n_init,
                                        max_iter=max_iter, seed=seed,
                                        n_components=n_components)
        pd.DataFrame({"k": ks_arr, "inertia": inertias}).to_csv(
            elbow_out, index=False
        )
        manifest.add_output(elbow_out)
        manifest.write(bio.manifest_path(elbow_out))
        click.echo(f"wrote elbow table to {elbow_out}")
        return
    if not labels_out:
        raise ValidationError("--labels-out is required when clustering")
    result = kmeans_flows(flows, n_clusters, mode, n_init=n_init,
                          max_iter=max_iter, seed=seed,
                          n_components=n_components)
    bio.write_labels_csv(labels_out, result.labels)
    manifest.add_output(labels_out)
    if centers_out:
        if mode != "raw":
            raise ValidationError("--centers-out requires raw mode")
        bio.write_flows(centers_out, result.centers)
        manifest.add_output(centers_out)
    manifest.write(bio.manifest_path(labels_out))
    click.echo(
        f"clustered {flows.n_flows} flows into {n_clusters} groups "
        f"(inertia {result.inertia:.6g})"
    )


@main.command()
@_config_option
@click.argument("input_a", type=click.Path(exists=True, dir_okay=False))
@click.argument("input_b", required=False,
                type=click.Path(exists=True, dir_okay=False))
@click.option("--index-a", default=0, show_default=True)
@click.option("--index-b", default=0, show_default=True)
@click.option("--squared", is_flag=True)
@click.option("--matrix-out", type=click.Path(dir_okay=False),
              help="With a single input: pairwise distance matrix CSV.")
@_run
def dist(input_a, input_b, index_a, index_b, squared, matrix_out):
    """Integrated distance between flows.

    With two files, prints the distance between one flow of each.  With
    one file, computes the pairwise matrix of the whole set.
    """
    flows_a = bio.read_bwf1(input_a)
    if input_b is None:
        matrix = pairwise_flow_distances(flows_a, squared=squared)
        if matrix_out:
            pd.DataFrame(matrix).to_csv(matrix_out, index=False, header=False)
            manifest = bio.RunManifest(
                "dist", {"squared": squared, "pairwise": True}
            )
            manifest.add_input(input_a)
            manifest.add_output(matrix_out)
            manifest.write(bio.manifest_path(matrix_out))
            click.echo(f"wrote {matrix.shape[0]}x{matrix.shape[1]} matrix to {matrix_out}")
        else:
            click.echo(np.array2string(matrix, precision=6))
        return
    flows_b = bio.read_bwf1(input_b)
    if not 0 <= index_a < flows_a.n_flows:
        raise ValidationError(f"--index-a out of range [0, {flows_a.n_flows})")
    if not 0 <= index_b < flows_b.n_flows:
        raise ValidationError(f"--index-b out of range [0, {flows_b.n_flows})")
    value = flow_distance(flows_a[index_a], flows_b[index_b], squared=squared)
    click.echo(f"{value:.12g}")


@main.command("ingest-sliding")
@_config_option
@click.option("--input", "input_", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Long CSV: subject_id, time_index, coordinates [, run_id].")
@click.option("--window", required=True, type=int)
@click.option("--stride", default=1, show_default=True)
@click.option("--centered/--no-centered", default=True, show_default=True,
              help="Subtract the within-window mean before the covariance.")
@click.option("--ddof", default=0, show_default=True)
@click.option("--drop-partial", is_flag=True,
              help="Skip the truncated window at the end of each series.")
@click.option("--combine", default="euclidean", show_default=True,
              type=click.Choice(["euclidean", "frechet"]),
              help="How to average covariances across runs of a subject.")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@_run
def ingest_sliding(input_, window, stride, centered, ddof, drop_partial,
                   combine, out):
    """Sliding-window covariance flows from a long multivariate CSV."""
    from .barycenter import frechet_mean_gd

    manifest = bio.RunManifest(
        "ingest-sliding",
        {"window": window, "stride": stride, "centered": centered,
         "ddof": ddof, "drop_partial": drop_partial, "combine": combine},
    )
    manifest.add_input(input_)
    if window < 1 or stride < 1:
        raise ValidationError("window and stride must be positive")
    df = pd.read_csv(input_)
    for col in ("subject_id", "time_index"):
        if col not in df.columns:
            raise ValidationError(f"input CSV must have a {col!r} column")
    has_runs = "run_id" in df.columns
    coord_cols = [c for c in df.columns
                  if c not in ("subject_id", "time_index", "run_id")]
    if not coord_cols:
        raise ValidationError("input CSV has no coordinate columns")

    def windows_of(values):
        t_len = values.shape[0]
        if window > t_len:
            raise ValidationError(
                f"window {window} exceeds series length {t_len}"
            )
        covs, mids = [], []
        for start in range(0, t_len, stride):
            length = min(window, t_len - start)
            if length < window and (drop_partial or length < 2):
                break
            block = values[start:start + length]
            if centered:
                block = block - block.mean(axis=0)
            covs.append(block.T @ block / max(length - ddof, 1))
            mids.append(start + (length - 1) / 2.0)
            if start + length >= t_len:
                break
        grid = np.array(mids)
        grid = grid / (t_len - 1) if t_len > 1 else grid
        return grid, np.array(covs)

    subject_ids = sorted(df["subject_id"].unique().tolist())
    grid_ref = None
    flows = []
    for sid in subject_ids:
        sub = df[df["subject_id"] == sid]
        run_covs = []
        run_ids = sorted(sub["run_id"].unique().tolist()) if has_runs else [None]
        for rid in run_ids:
            run = sub if rid is None else sub[sub["run_id"] == rid]
            run = run.sort_values("time_index", kind="stable")
            grid, covs = windows_of(run[coord_cols].to_numpy(dtype=float))
            if grid_ref is None:
                grid_ref = grid
            elif grid.shape != grid_ref.shape or not np.allclose(grid, grid_ref):
                raise ValidationError(
                    f"subject {sid!r} yields a different window grid; "
                    "all series must share the same length"
                )
            run_covs.append(covs)
        stack = np.stack(run_covs)
        if stack.shape[0] == 1:
            flows.append(stack[0])
        elif combine == "euclidean":
            flows.append(stack.mean(axis=0))
        else:
            flows.append(np.stack([
                frechet_mean_gd(stack[:, j])[0] for j in range(stack.shape[1])
            ]))
    mats = np.stack(flows)
    mats = 0.5 * (mats + ct(mats))
    flowset = FlowSet(grid_ref, mats)
    bio.write_flows(out, flowset)
    manifest.add_output(out)
    manifest.write(bio.manifest_path(out))
    click.echo(
        f"wrote {flowset.n_flows} flows ({flowset.n_times} windows, dim "
        f"{flowset.dim}) to {out}"
    )


if __name__ == "__main__":
    main()
