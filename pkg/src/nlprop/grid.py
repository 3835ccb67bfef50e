"""Core 2D field containers and validity semantics.

All grids are row-major with (row, col) indexing and the origin at the
top-left corner; increasing row index means moving down the image.
Values are stored as 64-bit floats internally. Containers are immutable:
their arrays are copied on construction and marked read-only, so they can
be shared freely across workers. Mutation means building a new container.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np


def _frozen_array(data, dtype=np.float64) -> np.ndarray:
    arr = np.array(data, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Violation:
    """First invariant violation found by :func:`validate`."""

    message: str
    index: Optional[tuple] = None

    def __str__(self) -> str:
        if self.index is None:
            return self.message
        return f"{self.message} at {self.index}"


@dataclass(frozen=True)
class Field2D:
    """An H x W scalar grid (depth in meters, or a dimensionless quantity)."""

    values: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.values)
        if arr.ndim != 2:
            raise ValueError(f"Field2D values must be 2D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"Field2D dimensions must be >= 1, got {arr.shape}")
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple:
        return self.values.shape


def make_field(height: int, width: int, fill: float) -> Field2D:
    """Constant-filled field. Raises on non-positive dims or non-finite fill."""
    if height < 1 or width < 1:
        raise ValueError(f"field dimensions must be >= 1, got {height}x{width}")
    if not np.isfinite(fill):
        raise ValueError(f"fill value must be finite, got {fill}")
    return Field2D(np.full((height, width), float(fill)))


@dataclass(frozen=True)
class SparseDepth:
    """Sparse depth observations: a depth field plus a boolean sample mask.

    Entries outside the mask are forced to zero so the pair round-trips
    through zero-is-invalid file formats without ambiguity.
    """

    depth: Field2D
    mask: np.ndarray

    def __post_init__(self):
        mask = np.array(self.mask, dtype=bool, copy=True)
        if mask.shape != self.depth.shape:
            raise ValueError(
                f"mask shape {mask.shape} != depth shape {self.depth.shape}"
            )
        if not mask.any():
            raise ValueError("SparseDepth needs at least one observed sample")
        mask.flags.writeable = False
        object.__setattr__(self, "mask", mask)
        zeroed = np.where(mask, self.depth.values, 0.0)
        object.__setattr__(self, "depth", Field2D(zeroed))

    @property
    def count(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class ConfidenceMap:
    """Per-pixel reliability in [0, 1]; out-of-range inputs are clamped.

    Clamping rather than rejecting mirrors a saturating activation: upstream
    predictors may overshoot slightly and that should not be fatal.
    """

    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise ValueError(f"ConfidenceMap values must be 2D, got {arr.shape}")
        np.clip(arr, 0.0, 1.0, out=arr)
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def shape(self) -> tuple:
        return self.values.shape


@dataclass(frozen=True)
class NeighborField:
    """Per-pixel neighbor offsets, shape (H, W, K, 2) as (row, col) deltas.

    Offsets are real-valued: they may be fractional and may reach far beyond
    the 3x3 window. Integer offsets land exactly on pixel centers.
    """

    offsets: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.offsets)
        if arr.ndim != 4 or arr.shape[3] != 2:
            raise ValueError(
                f"NeighborField offsets must have shape (H, W, K, 2), got {arr.shape}"
            )
        if arr.shape[2] < 1:
            raise ValueError("NeighborField needs K >= 1 neighbors")
        object.__setattr__(self, "offsets", arr)

    @property
    def k(self) -> int:
        return self.offsets.shape[2]

    @property
    def grid_shape(self) -> tuple:
        return self.offsets.shape[:2]


@dataclass(frozen=True)
class AffinityField:
    """Raw (unnormalized, unbounded) affinities, shape (H, W, K)."""

    raw: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.raw)
        if arr.ndim != 3:
            raise ValueError(f"AffinityField raw must be (H, W, K), got {arr.shape}")
        if arr.shape[2] < 1:
            raise ValueError("AffinityField needs K >= 1 channels")
        object.__setattr__(self, "raw", arr)

    @property
    def k(self) -> int:
        return self.raw.shape[2]

    @property
    def grid_shape(self) -> tuple:
        return self.raw.shape[:2]


# Per-pixel L1 budget: sum_k |w_k| <= 1 bounds the step-to-step Jacobian so
# iterated propagation cannot diverge.
STABILITY_SLACK = 1e-12


@dataclass(frozen=True)
class NormalizedAffinity:
    """Normalized neighbor weights plus the per-pixel reference weight.

    The reference weight is the self-weight 1 - sum_k w_k: how much of the
    current value a pixel keeps during one propagation step.
    """

    weights: np.ndarray
    reference: np.ndarray

    def __post_init__(self):
        w = _frozen_array(self.weights)
        r = _frozen_array(self.reference)
        if w.ndim != 3:
            raise ValueError(f"weights must be (H, W, K), got {w.shape}")
        if r.shape != w.shape[:2]:
            raise ValueError(f"reference shape {r.shape} != grid {w.shape[:2]}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "reference", r)

    @property
    def k(self) -> int:
        return self.weights.shape[2]


Validatable = Union[
    Field2D, SparseDepth, ConfidenceMap, NeighborField, AffinityField, NormalizedAffinity
]


def _first_nonfinite(arr: np.ndarray, what: str) -> Optional[Violation]:
    bad = ~np.isfinite(arr)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        return Violation(f"non-finite {what}", idx)
    return None


def validate(obj: Validatable) -> Optional[Violation]:
    """Report the first invariant violation of a container, or None if ok."""
    if isinstance(obj, Field2D):
        return _first_nonfinite(obj.values, "field value")
    if isinstance(obj, SparseDepth):
        v = _first_nonfinite(obj.depth.values, "sparse depth value")
        if v is not None:
            return v
        off_mask = obj.depth.values[~obj.mask]
        if off_mask.size and np.any(off_mask != 0.0):
            idx = tuple(int(i) for i in np.argwhere(~obj.mask & (obj.depth.values != 0.0))[0])
            return Violation("masked-out entry is nonzero", idx)
        return None
    if isinstance(obj, ConfidenceMap):
        v = _first_nonfinite(obj.values, "confidence value")
        if v is not None:
            return v
        out = (obj.values < 0.0) | (obj.values > 1.0)
        if out.any():
            idx = tuple(int(i) for i in np.argwhere(out)[0])
            return Violation("confidence outside [0, 1]", idx)
        return None
    if isinstance(obj, NeighborField):
        return _first_nonfinite(obj.offsets, "neighbor offset")
    if isinstance(obj, AffinityField):
        return _first_nonfinite(obj.raw, "raw affinity")
    if isinstance(obj, NormalizedAffinity):
        v = _first_nonfinite(obj.weights, "normalized weight")
        if v is not None:
            return v
        v = _first_nonfinite(obj.reference, "reference weight")
        if v is not None:
            return v
        l1 = np.abs(obj.weights).sum(axis=2)
        over = l1 > 1.0 + STABILITY_SLACK
        if over.any():
            idx = tuple(int(i) for i in np.argwhere(over)[0])
            return Violation("weight L1 norm exceeds 1", idx)
        ref_err = np.abs(obj.reference - (1.0 - obj.weights.sum(axis=2)))
        bad = ref_err > 1e-9
        if bad.any():
            idx = tuple(int(i) for i in np.argwhere(bad)[0])
            return Violation("reference weight != 1 - sum of weights", idx)
        return None
    raise TypeError(f"cannot validate object of type {type(obj).__name__}")
