"""Synthetic ground-truth depth scenes, sparse sampling, and noise models.

Scenes are piecewise-smooth depth maps with controlled discontinuities —
the structures that make naive propagation smear depths across object
boundaries. Sampling mimics how sparse depth arrives in practice (random
scatter or scanlines), and the noise models cover sensor jitter and the
nastier failure mode of boundary pixels carrying the depth of the other
side of an edge.

Everything is deterministic given the seeds in SceneSpec and SamplingSpec.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .grid import Field2D, SparseDepth

TWO_PLANE_STEP = "two-plane-step"
SLANTED_PLANES = "slanted-planes"
BOXES_ON_GROUND = "boxes-on-ground"
STAIRCASE = "staircase"

_KINDS = (TWO_PLANE_STEP, SLANTED_PLANES, BOXES_ON_GROUND, STAIRCASE)

UNIFORM_RANDOM = "uniform-random"
SCANLINE = "scanline"

NOISE_NONE = "none"
NOISE_GAUSSIAN = "gaussian"
NOISE_BOUNDARY_MIXING = "boundary-mixing"

# Depth jumps larger than this count as discontinuities: far above sensor
# noise, far below the separations the generators produce.
DISCONTINUITY_THRESHOLD = 0.1


@dataclass(frozen=True)
class SceneSpec:
    kind: str
    height: int
    width: int
    d_min: float = 1.0
    d_max: float = 10.0
    seed: int = 0
    # slanted-planes / boxes-on-ground: object count; staircase: step count.
    count: int = 3

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown scene kind {self.kind!r}; expected one of {_KINDS}")
        if self.height < 1 or self.width < 1:
            raise ValueError("scene dimensions must be >= 1")
        if not (self.d_min > 0 and self.d_max > self.d_min):
            raise ValueError(f"need 0 < d_min < d_max, got [{self.d_min}, {self.d_max}]")
        if self.kind != TWO_PLANE_STEP and self.count < 1:
            raise ValueError(f"{self.kind} needs count >= 1")


@dataclass(frozen=True)
class SamplingSpec:
    protocol: str
    count: int = 0
    rows: int = 0
    phase: int = 0
    noise: str = NOISE_NONE
    sigma: float = 0.0
    radius: int = 1
    rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.protocol not in (UNIFORM_RANDOM, SCANLINE):
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if self.protocol == UNIFORM_RANDOM and self.count < 1:
            raise ValueError("uniform-random needs count >= 1")
        if self.protocol == SCANLINE and self.rows < 1:
            raise ValueError("scanline needs row period >= 1")
        if self.noise not in (NOISE_NONE, NOISE_GAUSSIAN, NOISE_BOUNDARY_MIXING):
            raise ValueError(f"unknown noise model {self.noise!r}")
        if self.sigma < 0:
            raise ValueError("gaussian sigma must be >= 0")
        if not (0.0 <= self.rate <= 1.0):
            raise ValueError("boundary-mixing rate must lie in [0, 1]")
        if self.radius < 1:
            raise ValueError("boundary-mixing radius must be >= 1")


def discontinuity_mask(gt: Field2D, threshold: float = DISCONTINUITY_THRESHOLD) -> np.ndarray:
    """Pixels whose 4-neighborhood depth range exceeds the threshold."""
    v = gt.values
    stack = [v]
    stack.append(np.pad(v, ((1, 0), (0, 0)), mode="edge")[:-1, :])  # up
    stack.append(np.pad(v, ((0, 1), (0, 0)), mode="edge")[1:, :])   # down
    stack.append(np.pad(v, ((0, 0), (1, 0)), mode="edge")[:, :-1])  # left
    stack.append(np.pad(v, ((0, 0), (0, 1)), mode="edge")[:, 1:])   # right
    window = np.stack(stack, axis=0)
    return (window.max(axis=0) - window.min(axis=0)) > threshold


def dilate_mask(mask: np.ndarray, radius: int) -> np.ndarray:
    """Chebyshev dilation: true within `radius` pixels of a true entry."""
    out = mask.copy()
    for _ in range(radius):
        grown = out.copy()
        grown[1:, :] |= out[:-1, :]
        grown[:-1, :] |= out[1:, :]
        grown[:, 1:] |= out[:, :-1]
        grown[:, :-1] |= out[:, 1:]
        grown[1:, 1:] |= out[:-1, :-1]
        grown[1:, :-1] |= out[:-1, 1:]
        grown[:-1, 1:] |= out[1:, :-1]
        grown[:-1, :-1] |= out[1:, 1:]
        out = grown
    return out


def _two_plane_step(spec: SceneSpec) -> np.ndarray:
    v = np.full((spec.height, spec.width), spec.d_max)
    v[:, : spec.width // 2] = spec.d_min
    return v


def _staircase(spec: SceneSpec) -> np.ndarray:
    depths = np.linspace(spec.d_min, spec.d_max, spec.count)
    band = np.minimum(
        np.arange(spec.width) * spec.count // spec.width, spec.count - 1
    )
    return np.broadcast_to(depths[band], (spec.height, spec.width)).copy()


def _slanted_planes(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    h, w = spec.height, spec.width
    v = np.empty((h, w))
    edges = np.linspace(0, w, spec.count + 1).astype(int)
    span = spec.d_max - spec.d_min
    rows = np.arange(h)[:, None]
    for i in range(spec.count):
        c0, c1 = edges[i], edges[i + 1]
        base = rng.uniform(spec.d_min + 0.2 * span, spec.d_max - 0.2 * span)
        # Slopes small enough that the plane stays within the depth range.
        tilt = 0.15 * span
        sr = rng.uniform(-tilt, tilt) / max(h, 1)
        sc = rng.uniform(-tilt, tilt) / max(w, 1)
        cols = np.arange(c0, c1)[None, :]
        v[:, c0:c1] = base + sr * rows + sc * (cols - c0)
    return np.clip(v, spec.d_min, spec.d_max)


def _boxes_on_ground(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    h, w = spec.height, spec.width
    v = np.full((h, w), spec.d_max)
    span = spec.d_max - spec.d_min
    for _ in range(spec.count):
        bh = rng.integers(max(2, h // 8), max(3, h // 2))
        bw = rng.integers(max(2, w // 8), max(3, w // 2))
        r0 = int(rng.integers(0, max(1, h - bh)))
        c0 = int(rng.integers(0, max(1, w - bw)))
        depth = rng.uniform(spec.d_min, spec.d_max - 0.3 * span)
        region = v[r0 : r0 + bh, c0 : c0 + bw]
        # Nearer surface occludes: keep the smaller depth.
        np.minimum(region, depth, out=region)
    return v


def generate(spec: SceneSpec) -> Tuple[Field2D, np.ndarray]:
    """Ground-truth depth plus its discontinuity mask."""
    rng = np.random.default_rng(spec.seed)
    if spec.kind == TWO_PLANE_STEP:
        v = _two_plane_step(spec)
    elif spec.kind == STAIRCASE:
        v = _staircase(spec)
    elif spec.kind == SLANTED_PLANES:
        v = _slanted_planes(spec, rng)
    else:
        v = _boxes_on_ground(spec, rng)
    gt = Field2D(v)
    return gt, discontinuity_mask(gt)


def _select_mask(gt: Field2D, spec: SamplingSpec, rng: np.random.Generator) -> np.ndarray:
    h, w = gt.shape
    mask = np.zeros((h, w), dtype=bool)
    if spec.protocol == UNIFORM_RANDOM:
        if spec.count > h * w:
            raise ValueError(f"cannot sample {spec.count} pixels from a {h}x{w} grid")
        flat = rng.choice(h * w, size=spec.count, replace=False)
        mask.reshape(-1)[flat] = True
    else:
        rows = np.arange(h) % spec.rows == spec.phase % spec.rows
        mask[rows, :] = True
        if not mask.any():
            raise ValueError("scanline selection hit no rows")
    return mask


def _apply_boundary_mixing(
    gt_values: np.ndarray,
    mask: np.ndarray,
    values: np.ndarray,
    spec: SamplingSpec,
    rng: np.random.Generator,
) -> None:
    """Swap eligible sampled values for the far side of a nearby edge.

    A sampled pixel is eligible when its (2r+1)^2 ground-truth window spans
    a depth jump; with probability `rate` its value becomes the window
    value farthest from its own — the classic foreground/background flip
    of points observed near an occlusion boundary.
    """
    h, w = gt_values.shape
    r = spec.radius
    sites = np.argwhere(mask)
    draws = rng.random(len(sites))
    for (i, j), draw in zip(sites, draws):
        window = gt_values[
            max(0, i - r) : min(h, i + r + 1), max(0, j - r) : min(w, j + r + 1)
        ]
        if window.max() - window.min() <= DISCONTINUITY_THRESHOLD:
            continue
        if draw >= spec.rate:
            continue
        own = gt_values[i, j]
        flat = window.reshape(-1)
        values[i, j] = flat[np.argmax(np.abs(flat - own))]


def sample(gt: Field2D, spec: SamplingSpec) -> SparseDepth:
    """Draw sparse observations from a ground-truth field, with noise."""
    rng = np.random.default_rng(spec.seed)
    mask = _select_mask(gt, spec, rng)
    values = np.where(mask, gt.values, 0.0)

    if spec.noise == NOISE_GAUSSIAN and spec.sigma > 0:
        noise = rng.normal(0.0, spec.sigma, gt.shape)
        values = np.where(mask, values + noise, 0.0)
    elif spec.noise == NOISE_BOUNDARY_MIXING:
        _apply_boundary_mixing(gt.values, mask, values, spec, rng)

    return SparseDepth(depth=Field2D(values), mask=mask)
