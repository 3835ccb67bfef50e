"""Depth evaluation metrics over valid-pixel masks.

Conventions follow the usual depth-completion reporting: RMSE/MAE in
millimeters, inverse-depth errors in 1/km, REL relative to ground truth,
and delta thresholds as the percentage of pixels whose max depth ratio is
strictly below tau for tau in {1.25, 1.25^2, 1.25^3}.

Ground truth must be positive on valid pixels (inverse metrics and REL
divide by it). Non-positive predictions do not crash an evaluation run:
they poison only the inverse metrics, which are then reported as
undefined, and such pixels count as failing every delta threshold.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from .grid import Field2D

DELTA_TAUS = (1.25, 1.25**2, 1.25**3)

METRIC_COLUMNS = ("rmse", "mae", "irmse", "imae", "rel", "d1", "d2", "d3", "count")


@dataclass(frozen=True)
class MetricReport:
    rmse: float  # mm
    mae: float  # mm
    irmse: Optional[float]  # 1/km; None when pred <= 0 somewhere valid
    imae: Optional[float]  # 1/km; None when pred <= 0 somewhere valid
    rel: float  # dimensionless
    delta: Dict[float, float]  # tau -> percentage in [0, 100]
    count: int

    @property
    def inverse_defined(self) -> bool:
        return self.irmse is not None


def _fmt(x: Optional[float]) -> str:
    return "nan" if x is None else f"{x:.9g}"


def csv_header() -> str:
    return ",".join(METRIC_COLUMNS)


def csv_row(report: MetricReport) -> str:
    cells = [
        _fmt(report.rmse),
        _fmt(report.mae),
        _fmt(report.irmse),
        _fmt(report.imae),
        _fmt(report.rel),
    ]
    cells += [_fmt(report.delta[t]) for t in DELTA_TAUS]
    cells.append(str(report.count))
    return ",".join(cells)


def evaluate(pred: Field2D, gt: Field2D, valid: np.ndarray) -> MetricReport:
    """Full metric suite on the valid pixels."""
    if pred.shape != gt.shape:
        raise ValueError(f"pred shape {pred.shape} != gt shape {gt.shape}")
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != gt.shape:
        raise ValueError(f"valid mask shape {valid.shape} != field shape {gt.shape}")
    if not valid.any():
        raise ValueError("evaluation needs at least one valid pixel")

    g = gt.values[valid]
    p = pred.values[valid]
    if np.any(g <= 0.0):
        raise ValueError("ground truth must be positive on valid pixels")

    err = g - p
    rmse = float(np.sqrt((err * err).mean()) * 1000.0)
    mae = float(np.abs(err).mean() * 1000.0)
    rel = float((np.abs(err) / g).mean())

    pred_ok = bool(np.all(p > 0.0))
    if pred_ok:
        ierr = 1.0 / g - 1.0 / p
        irmse = float(np.sqrt((ierr * ierr).mean()) * 1000.0)
        imae = float(np.abs(ierr).mean() * 1000.0)
    else:
        irmse = None
        imae = None

    delta = {}
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(p > 0.0, np.maximum(p / g, g / p), np.inf)
    for tau in DELTA_TAUS:
        delta[tau] = float((ratio < tau).mean() * 100.0)

    return MetricReport(
        rmse=rmse, mae=mae, irmse=irmse, imae=imae, rel=rel,
        delta=delta, count=int(valid.sum()),
    )


def evaluate_banded(
    pred: Field2D, gt: Field2D, valid: np.ndarray, band: np.ndarray
) -> MetricReport:
    """The same suite restricted to band-and-valid pixels."""
    band = np.asarray(band, dtype=bool)
    if band.shape != gt.shape:
        raise ValueError(f"band shape {band.shape} != field shape {gt.shape}")
    joint = np.asarray(valid, dtype=bool) & band
    if not joint.any():
        raise ValueError("band does not intersect the valid mask")
    return evaluate(pred, gt, joint)
