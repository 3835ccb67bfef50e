"""Command-line interface.

Exit codes: 0 on success, 1 on runtime failure (bad file, diverged fit,
failed gradient check), 2 on usage errors (unknown flags, malformed
values). Commands validate their whole configuration before writing any
output, so a failed run never leaves partial artifacts; report-style
commands render a PNG figure next to each CSV they produce.
"""

from __future__ import annotations

import functools
import sys
from pathlib import Path
from typing import Optional

import click
import numpy as np

from . import figures
from .backprop import CheckInstance, gradcheck as run_gradcheck
from .grid import AffinityField, ConfidenceMap, Field2D, NeighborField, SparseDepth
from .learner import FitConfig, ablation_grid, fit as run_fit, init_depth_idw
from .mapio import (
    MapFormatError,
    read_depth_png16,
    read_field,
    read_map,
    write_depth_png16,
    write_map,
)
from .metrics import csv_header, csv_row, evaluate, evaluate_banded
from .norms import (
    ABS_SUM,
    ABS_SUM_STAR,
    TANH_C,
    TANH_GAMMA,
    NormScheme,
    mc_normalization_probability,
    sample_normalized_pairs,
)
from .propagation import (
    CSPN_3X3,
    NON_LOCAL,
    NeighborMode,
    pattern_cspn,
    pattern_neighbor_field,
    propagate,
)
from .runconfig import (
    ConfigError,
    RunConfig,
    build_scheme,
    load_run_config,
    parse_mode_name,
    require,
)
from .scenes import dilate_mask, discontinuity_mask, generate, sample


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


def _runtime_guard(fn):
    @functools.wraps(fn)
    def wrapped(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, MapFormatError, ValueError, OSError, RuntimeError) as exc:
            _fail(str(exc))

    return wrapped


@click.group()
def main():
    """Non-local propagation experiments on sparse depth."""


def _load_field(path: str) -> Field2D:
    if path.endswith(".png"):
        depth, _ = read_depth_png16(path)
        return depth
    return read_field(path)


def _scheme_from_flags(scheme: str, gamma: Optional[float], c: Optional[float]) -> NormScheme:
    return build_scheme(scheme, gamma=gamma, c=c)


@main.command("synth")
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@_runtime_guard
def synth_cmd(spec_path: str, out_dir: str):
    """Generate a scene and its sparse samples into OUT."""
    cfg = load_run_config(spec_path)
    require(cfg, "scene", "sampling")
    gt, disc = generate(cfg.scene)
    sparse = sample(gt, cfg.sampling)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_map(out / "gt.nlfm", gt.values)
    write_map(out / "sparse.nlfm", np.stack([sparse.depth.values, sparse.mask.astype(float)], axis=2))
    write_map(out / "disc_mask.nlfm", disc.astype(float))
    write_depth_png16(out / "gt.png", gt)
    write_depth_png16(out / "sparse.png", sparse.depth, valid=sparse.mask)
    click.echo(f"wrote scene ({gt.height}x{gt.width}, {sparse.count} samples) to {out}")


def _read_sparse(in_dir: Path) -> SparseDepth:
    stack = read_map(in_dir / "sparse.nlfm")
    if stack.shape[2] != 2:
        raise MapFormatError(f"{in_dir / 'sparse.nlfm'}: expected 2 channels (depth, mask)")
    return SparseDepth(depth=Field2D(stack[:, :, 0]), mask=stack[:, :, 1] > 0.5)


@main.command("propagate")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--trace", is_flag=True, help="also write per-step snapshots")
@_runtime_guard
def propagate_cmd(config_path: str, in_dir: str, out_dir: str, trace: bool):
    """Refine a scene directory's depth with configured propagation.

    Uses x0/conf/offsets/affinities files from IN when present, otherwise
    initializes them (inverse-distance fill, stencil offsets, zero
    affinities).
    """
    cfg = load_run_config(config_path)
    require(cfg, "propagation")
    prop = cfg.propagation
    inp = Path(in_dir)
    sparse = _read_sparse(inp)
    h, w = sparse.depth.shape

    if (inp / "x0.nlfm").exists():
        x0 = read_field(inp / "x0.nlfm")
    else:
        x0, conf_default = init_depth_idw(sparse)
    if (inp / "conf.nlfm").exists():
        conf = ConfidenceMap(read_field(inp / "conf.nlfm").values)
    elif (inp / "x0.nlfm").exists():
        conf = ConfidenceMap(np.ones((h, w)))
    else:
        conf = conf_default

    neighbors = None
    if prop.neighbor_mode.variant == NON_LOCAL:
        if (inp / "offsets.nlfm").exists():
            stack = read_map(inp / "offsets.nlfm")
            neighbors = NeighborField(stack.reshape(h, w, -1, 2))
        else:
            neighbors = pattern_neighbor_field(pattern_cspn(), h, w)
    k = neighbors.k if neighbors is not None else prop.neighbor_mode.k

    if (inp / "affinities.nlfm").exists():
        raw = AffinityField(read_map(inp / "affinities.nlfm"))
    else:
        raw = AffinityField(np.zeros((h, w, k)))

    result = propagate(
        x0, prop, raw, conf if prop.use_confidence else None,
        neighbors=neighbors, sparse=sparse, want_trace=trace,
    )

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_map(out / "refined.nlfm", result.final.values)
    if trace:
        stack = np.stack([f.values for f in result.trace], axis=2)
        write_map(out / "trace.nlfm", stack)
    if result.zero_affinity_pixels:
        click.echo(f"note: {result.zero_affinity_pixels} pixel(s) fell back to identity")
    click.echo(f"wrote refined depth to {out / 'refined.nlfm'}")


def _write_fit_outputs(out: Path, gt, sparse, band, result) -> None:
    write_map(out / "refined.nlfm", result.refined.values)
    write_map(out / "x0.nlfm", result.x0)
    write_map(out / "conf.nlfm", result.conf)
    write_map(out / "affinities.nlfm", result.raw_aff)
    h, w = result.x0.shape
    write_map(out / "offsets.nlfm", result.offsets.reshape(h, w, -1))

    with open(out / "trace.csv", "w", encoding="utf-8") as fh:
        fh.write("iteration,loss\n")
        for i, v in enumerate(result.trace):
            fh.write(f"{i},{v:.9g}\n")

    with open(out / "metrics.csv", "w", encoding="utf-8") as fh:
        fh.write("region," + csv_header() + "\n")
        fh.write("full," + csv_row(result.metrics) + "\n")
        if result.band_metrics is not None:
            fh.write("band," + csv_row(result.band_metrics) + "\n")

    figures.save_loss_curve(out / "trace.png", result.trace, "fit loss")
    figures.save_depth_panel(out / "panel.png", gt, sparse, result.refined, "fit result")


@main.command("fit")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@_runtime_guard
def fit_cmd(config_path: str, out_dir: str):
    """Generate a scene, then optimize propagation parameters on it."""
    cfg = load_run_config(config_path)
    require(cfg, "scene", "sampling", "propagation", "fit")
    gt, disc = generate(cfg.scene)
    sparse = sample(gt, cfg.sampling)
    band = dilate_mask(disc, 2)

    result = run_fit(gt, sparse, cfg.fit, cfg.propagation, band=band)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_fit_outputs(out, gt, sparse, band, result)
    click.echo(f"final loss {result.final_loss:.9g}; rmse {result.metrics.rmse:.9g} mm")
    click.echo(f"wrote fit outputs to {out}")


@main.command("ablate")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_csv", required=True, type=click.Path())
@click.option("--modes", default="cspn-3x3,non-local", show_default=True)
@click.option("--schemes", default="abs-sum,tanh-gamma-abs-sum-star", show_default=True)
@click.option("--confidence", default="on,off", show_default=True)
@click.option("--gamma", type=float, default=None, help="gamma for tanh-gamma rows")
@click.option("--c", type=float, default=None, help="divisor for tanh-c rows")
@_runtime_guard
def ablate_cmd(config_path, out_csv, modes, schemes, confidence, gamma, c):
    """Fit every (mode, scheme, confidence) combination; write a CSV grid."""
    cfg = load_run_config(config_path)
    require(cfg, "scene", "sampling", "propagation", "fit")
    gt, _ = generate(cfg.scene)
    sparse = sample(gt, cfg.sampling)

    mode_list = [NeighborMode(parse_mode_name(m)) for m in modes.split(",") if m]
    k_default = 8
    scheme_list = []
    for name in schemes.split(","):
        if not name:
            continue
        g = gamma if gamma is not None else float(k_default)
        cc = c if c is not None else float(k_default)
        scheme_list.append(build_scheme(name, gamma=g, c=cc))
    conf_list = []
    for token in confidence.split(","):
        token = token.strip().lower()
        if token in ("on", "true", "1"):
            conf_list.append(True)
        elif token in ("off", "false", "0"):
            conf_list.append(False)
        elif token:
            raise ConfigError(f"bad confidence token {token!r}; use on/off")

    rows = ablation_grid(
        gt, sparse, cfg.fit, cfg.propagation.steps, mode_list, scheme_list, conf_list
    )

    out = Path(out_csv)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("mode,scheme,confidence," + csv_header() + ",band_rmse\n")
        for row in rows:
            band = row.result.band_metrics
            band_rmse = f"{band.rmse:.9g}" if band is not None else "nan"
            fh.write(
                f"{row.neighbor_mode},{row.scheme},"
                f"{'on' if row.confidence else 'off'},"
                + csv_row(row.result.metrics)
                + f",{band_rmse}\n"
            )
    figures.save_ablation_bars(
        out.with_suffix(".png"),
        [r.label() for r in rows],
        [r.result.metrics.rmse for r in rows],
        "ablation grid",
    )
    click.echo(f"wrote {len(rows)} rows to {out}")


@main.command("eval")
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True))
@click.option("--gt", "gt_path", required=True, type=click.Path(exists=True))
@click.option("--band", is_flag=True, help="restrict to the discontinuity band")
@click.option("--out", "out_csv", default="eval.csv", show_default=True, type=click.Path())
@_runtime_guard
def eval_cmd(pred_path: str, gt_path: str, band: bool, out_csv: str):
    """Metric row for a prediction against ground truth."""
    pred = _load_field(pred_path)
    gt = _load_field(gt_path)
    valid = np.ones(gt.shape, dtype=bool)
    if band:
        band_mask = dilate_mask(discontinuity_mask(gt), 2)
        report = evaluate_banded(pred, gt, valid, band_mask)
    else:
        report = evaluate(pred, gt, valid)
    line = csv_header() + "\n" + csv_row(report) + "\n"
    click.echo(line, nl=False)
    with open(out_csv, "w", encoding="utf-8") as fh:
        fh.write(line)


@main.command("mc-norm")
@click.option("--k", required=True, type=int)
@click.option(
    "--scheme", required=True,
    type=click.Choice(
        ["abs-sum", "abs-sum-star", "tanh-c", "tanh-gamma-abs-sum-star"]
    ),
)
@click.option("--samples", required=True, type=int)
@click.option("--seed", required=True, type=int)
@click.option("--gamma", type=float, default=None)
@click.option("--c", type=float, default=None)
@_runtime_guard
def mc_norm_cmd(k, scheme, samples, seed, gamma, c):
    """Probability that a scheme's renormalization fires on N(0,1) draws."""
    sch = _scheme_from_flags(scheme, gamma, c)
    prob = mc_normalization_probability(k, sch, samples, seed)
    click.echo(f"{prob:.9g}")


@main.command("norm-pairs")
@click.option(
    "--scheme", required=True,
    type=click.Choice(
        ["abs-sum", "abs-sum-star", "tanh-c", "tanh-gamma-abs-sum-star"]
    ),
)
@click.option("--samples", required=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", "out_csv", required=True, type=click.Path())
@click.option("--gamma", type=float, default=None)
@click.option("--c", type=float, default=None)
@_runtime_guard
def norm_pairs_cmd(scheme, samples, seed, out_csv, gamma, c):
    """Normalized 2-neighbor weight pairs as CSV plus a scatter figure."""
    sch = _scheme_from_flags(scheme, gamma, c)
    pairs = sample_normalized_pairs(sch, samples, seed)
    out = Path(out_csv)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("w1,w2\n")
        for w1, w2 in pairs:
            fh.write(f"{w1:.9g},{w2:.9g}\n")
    figures.save_pair_scatter(out.with_suffix(".png"), pairs, f"{scheme} (K=2)")
    click.echo(f"wrote {len(pairs)} pairs to {out}")


@main.command("gradcheck")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--tol", default=1e-5, show_default=True, type=float)
@_runtime_guard
def gradcheck_cmd(seed: int, tol: float):
    """Finite-difference verification battery; nonzero exit on failure."""
    instances = [
        CheckInstance(scheme=NormScheme(ABS_SUM), use_confidence=False, steps=1),
        CheckInstance(scheme=NormScheme(ABS_SUM), use_confidence=True),
        CheckInstance(scheme=NormScheme(ABS_SUM_STAR), use_confidence=True),
        CheckInstance(scheme=NormScheme(TANH_C, c=4.0), use_confidence=False),
        CheckInstance(scheme=NormScheme(TANH_GAMMA, gamma=1.7), use_confidence=True),
        CheckInstance(scheme=NormScheme(TANH_GAMMA, gamma=1.7), use_confidence=True, rho=1),
    ]
    ok = True
    for i, inst in enumerate(instances):
        report = run_gradcheck(inst, tol=tol, seed=seed + i)
        ok = ok and report.passed
        conf = "conf" if inst.use_confidence else "noconf"
        click.echo(f"[{inst.scheme.variant}/{conf}/rho={inst.rho}]")
        for line in report.lines():
            click.echo("  " + line)
    if not ok:
        _fail("gradient check failed")
    click.echo("all gradient checks passed")
