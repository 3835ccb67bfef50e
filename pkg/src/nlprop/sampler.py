"""Bilinear sampling at fractional (row, col) coordinates with derivatives.

Coordinates live in pixel-center units: (0, 0) is the first pixel and
(H-1, W-1) the last. Out-of-range coordinates are clamped to the boundary
before interpolation (clamp-to-edge). Zero padding would break the
constant-field fixed point of propagation and leak zeros in from borders,
so it is deliberately not offered.

Derivative semantics at the edges: as long as a coordinate is in-bounds
(including sitting exactly on the boundary), the derivative is the
one-sided interior formula of the enclosing cell. Only once the clamp has
actually fired (coordinate strictly outside) does the normal-direction
derivative drop to zero — the sampled value no longer responds to it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .grid import Field2D, NeighborField


@dataclass(frozen=True)
class SampleGrad:
    """Value and partials of one bilinear sample.

    corners/weights describe d_value/d_field: the four (row, col) pixel
    indices touched and their bilinear coefficients (summing to 1).
    """

    value: float
    corners: Tuple[Tuple[int, int], Tuple[int, int], Tuple[int, int], Tuple[int, int]]
    weights: Tuple[float, float, float, float]
    d_row: float
    d_col: float


def _axis_setup(coord: float, size: int) -> Tuple[int, int, float, float]:
    """Clamp one coordinate; return (lo, hi, frac, gate) for its axis."""
    clamped = min(max(coord, 0.0), float(size - 1))
    if size == 1:
        return 0, 0, 0.0, 0.0
    lo = min(int(np.floor(clamped)), size - 2)
    hi = lo + 1
    frac = clamped - lo
    gate = 1.0 if 0.0 <= coord <= size - 1 else 0.0
    return lo, hi, frac, gate


def sample(field: Field2D, row: float, col: float) -> float:
    """Bilinear interpolation of ``field`` at a fractional coordinate."""
    if not (np.isfinite(row) and np.isfinite(col)):
        raise ValueError(f"sample point must be finite, got ({row}, {col})")
    v = field.values
    r0, r1, fr, _ = _axis_setup(float(row), field.height)
    c0, c1, fc, _ = _axis_setup(float(col), field.width)
    return float(
        (1.0 - fr) * (1.0 - fc) * v[r0, c0]
        + (1.0 - fr) * fc * v[r0, c1]
        + fr * (1.0 - fc) * v[r1, c0]
        + fr * fc * v[r1, c1]
    )


def sample_grad(field: Field2D, row: float, col: float) -> SampleGrad:
    """Bilinear sample plus analytic partials w.r.t. field values and coords."""
    if not (np.isfinite(row) and np.isfinite(col)):
        raise ValueError(f"sample point must be finite, got ({row}, {col})")
    v = field.values
    r0, r1, fr, gate_r = _axis_setup(float(row), field.height)
    c0, c1, fc, gate_c = _axis_setup(float(col), field.width)

    w00 = (1.0 - fr) * (1.0 - fc)
    w01 = (1.0 - fr) * fc
    w10 = fr * (1.0 - fc)
    w11 = fr * fc
    value = w00 * v[r0, c0] + w01 * v[r0, c1] + w10 * v[r1, c0] + w11 * v[r1, c1]

    d_row = gate_r * (
        (1.0 - fc) * (v[r1, c0] - v[r0, c0]) + fc * (v[r1, c1] - v[r0, c1])
    )
    d_col = gate_c * (
        (1.0 - fr) * (v[r0, c1] - v[r0, c0]) + fr * (v[r1, c1] - v[r1, c0])
    )
    return SampleGrad(
        value=float(value),
        corners=((r0, c0), (r0, c1), (r1, c0), (r1, c1)),
        weights=(w00, w01, w10, w11),
        d_row=float(d_row),
        d_col=float(d_col),
    )


def _axis_plan(coords: np.ndarray, size: int):
    """Vectorized _axis_setup over an array of coordinates."""
    clamped = np.clip(coords, 0.0, float(size - 1))
    if size == 1:
        zeros = np.zeros_like(coords)
        lo = np.zeros(coords.shape, dtype=np.int64)
        return lo, lo, zeros, zeros
    lo = np.minimum(np.floor(clamped), size - 2).astype(np.int64)
    hi = lo + 1
    frac = clamped - lo
    gate = ((coords >= 0.0) & (coords <= size - 1)).astype(np.float64)
    return lo, hi, frac, gate


@dataclass(frozen=True)
class GatherPlan:
    """Precomputed bilinear footprint for one NeighborField on one grid size.

    Propagation repeats the same gather every step (offsets do not change
    within a run), so corner indices, weights and clamp gates are resolved
    once and reused. Indices are flattened into row-major H*W so gathers
    and scatter-adds are single fancy-indexing operations.
    """

    grid_shape: Tuple[int, int]
    k: int
    flat00: np.ndarray
    flat01: np.ndarray
    flat10: np.ndarray
    flat11: np.ndarray
    w00: np.ndarray
    w01: np.ndarray
    w10: np.ndarray
    w11: np.ndarray
    fr: np.ndarray
    fc: np.ndarray
    gate_r: np.ndarray
    gate_c: np.ndarray


def build_gather_plan(neighbors: NeighborField, grid_shape: Tuple[int, int]) -> GatherPlan:
    """Resolve neighbor offsets against a grid size into a reusable plan."""
    if neighbors.grid_shape != tuple(grid_shape):
        raise ValueError(
            f"neighbor grid {neighbors.grid_shape} != field grid {tuple(grid_shape)}"
        )
    h, w = grid_shape
    k = neighbors.k
    rows = np.arange(h, dtype=np.float64)[:, None, None] + neighbors.offsets[..., 0]
    cols = np.arange(w, dtype=np.float64)[None, :, None] + neighbors.offsets[..., 1]

    r0, r1, fr, gate_r = _axis_plan(rows, h)
    c0, c1, fc, gate_c = _axis_plan(cols, w)

    return GatherPlan(
        grid_shape=(h, w),
        k=k,
        flat00=(r0 * w + c0).reshape(-1),
        flat01=(r0 * w + c1).reshape(-1),
        flat10=(r1 * w + c0).reshape(-1),
        flat11=(r1 * w + c1).reshape(-1),
        w00=((1.0 - fr) * (1.0 - fc)).reshape(-1),
        w01=((1.0 - fr) * fc).reshape(-1),
        w10=(fr * (1.0 - fc)).reshape(-1),
        w11=(fr * fc).reshape(-1),
        fr=fr.reshape(-1),
        fc=fc.reshape(-1),
        gate_r=gate_r.reshape(-1),
        gate_c=gate_c.reshape(-1),
    )


def gather_with_plan(plan: GatherPlan, values: np.ndarray) -> np.ndarray:
    """Sample ``values`` (H x W) at every planned neighbor; returns (H, W, K)."""
    h, w = plan.grid_shape
    flat = np.asarray(values, dtype=np.float64).reshape(-1)
    out = (
        plan.w00 * flat[plan.flat00]
        + plan.w01 * flat[plan.flat01]
        + plan.w10 * flat[plan.flat10]
        + plan.w11 * flat[plan.flat11]
    )
    return out.reshape(h, w, plan.k)


def gather(field: Field2D, neighbors: NeighborField) -> np.ndarray:
    """Bilinear values of each pixel's K neighbors; entry (m, n, k) equals
    sample(field, m + offset_row, n + offset_col)."""
    plan = build_gather_plan(neighbors, field.shape)
    return gather_with_plan(plan, field.values)


def gather_deviation_with_plan(plan: GatherPlan, values: np.ndarray) -> np.ndarray:
    """Neighbor-minus-center differences: entry (m, n, k) is
    sample(values, neighbor_k) - values[m, n], with the subtraction done
    corner-by-corner.

    Equal to gather_with_plan(plan, values) - values up to rounding, but
    exactly zero on a constant field: the corner differences vanish before
    any weighted summation can round. Propagation steps are built on this
    so a constant field is a bit-exact fixed point no matter the weights.
    """
    h, w = plan.grid_shape
    k = plan.k
    flat = np.asarray(values, dtype=np.float64).reshape(-1)
    center = flat[:, None]
    out = (
        plan.w00.reshape(-1, k) * (flat[plan.flat00].reshape(-1, k) - center)
        + plan.w01.reshape(-1, k) * (flat[plan.flat01].reshape(-1, k) - center)
        + plan.w10.reshape(-1, k) * (flat[plan.flat10].reshape(-1, k) - center)
        + plan.w11.reshape(-1, k) * (flat[plan.flat11].reshape(-1, k) - center)
    )
    return out.reshape(h, w, k)


def gather_vjp_values(plan: GatherPlan, cotangent: np.ndarray) -> np.ndarray:
    """Adjoint of gather w.r.t. the sampled field.

    Scatter-adds corner_weight * cotangent back onto the grid. bincount
    gives an ordered, deterministic reduction even when corners collide.
    """
    h, w = plan.grid_shape
    u = np.asarray(cotangent, dtype=np.float64).reshape(-1)
    n = h * w
    out = np.bincount(plan.flat00, weights=plan.w00 * u, minlength=n)
    out += np.bincount(plan.flat01, weights=plan.w01 * u, minlength=n)
    out += np.bincount(plan.flat10, weights=plan.w10 * u, minlength=n)
    out += np.bincount(plan.flat11, weights=plan.w11 * u, minlength=n)
    return out.reshape(h, w)


def gather_vjp_offsets(
    plan: GatherPlan, values: np.ndarray, cotangent: np.ndarray
) -> np.ndarray:
    """Adjoint of gather w.r.t. the (row, col) offsets; returns (H, W, K, 2).

    Clamp gates zero the component once a coordinate has left the grid:
    past the edge the sampled value is constant in that direction.
    """
    h, w = plan.grid_shape
    flat = np.asarray(values, dtype=np.float64).reshape(-1)
    u = np.asarray(cotangent, dtype=np.float64).reshape(-1)

    v00 = flat[plan.flat00]
    v01 = flat[plan.flat01]
    v10 = flat[plan.flat10]
    v11 = flat[plan.flat11]

    d_row = plan.gate_r * ((1.0 - plan.fc) * (v10 - v00) + plan.fc * (v11 - v01))
    d_col = plan.gate_c * ((1.0 - plan.fr) * (v01 - v00) + plan.fr * (v11 - v10))

    out = np.empty((h * w * plan.k, 2), dtype=np.float64)
    out[:, 0] = u * d_row
    out[:, 1] = u * d_col
    return out.reshape(h, w, plan.k, 2)
