"""Neighbor patterns and the iterated propagation operator.

One step updates every pixel to

    x <- w_ref * x + sum_k w_k * x(neighbor_k)

where the w_k come from normalizing raw affinities (see norms) and
w_ref = 1 - sum_k w_k, so a spatially constant field is a fixed point.
Weights are normalized once per run and reused for all steps; affinities
do not change while the field relaxes.

Two gather routes exist on purpose. Integer patterns (the three-way and
3x3 window modes) use direct clamped indexing; arbitrary fractional
neighbor fields go through the bilinear sampler. The two agree exactly on
integer offsets, which the test suite exploits as a cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable, List, Optional, Tuple

import numpy as np

from .grid import AffinityField, ConfidenceMap, Field2D, NeighborField, SparseDepth
from .norms import NormScheme, normalize_batch
from .sampler import build_gather_plan, gather_deviation_with_plan, gather_with_plan

SPN_THREE_WAY = "spn_three_way"
CSPN_3X3 = "cspn_3x3"
NON_LOCAL = "non_local"

SPN_DIRECTIONS = ("top-down", "bottom-up", "left-right", "right-left")


def pattern_cspn() -> List[Tuple[int, int]]:
    """The eight offsets of a 3x3 window around (0,0), row-major."""
    return [(p, q) for p in (-1, 0, 1) for q in (-1, 0, 1) if (p, q) != (0, 0)]


def pattern_spn(direction: str) -> List[Tuple[int, int]]:
    """Three-way scan pattern: the three adjacent pixels on the incoming side.

    top-down pulls from the row above; the other directions are the same
    stencil rotated in 90-degree increments.
    """
    if direction == "top-down":
        return [(-1, -1), (-1, 0), (-1, 1)]
    if direction == "bottom-up":
        return [(1, -1), (1, 0), (1, 1)]
    if direction == "left-right":
        return [(-1, -1), (0, -1), (1, -1)]
    if direction == "right-left":
        return [(-1, 1), (0, 1), (1, 1)]
    raise ValueError(f"unknown direction {direction!r}; expected one of {SPN_DIRECTIONS}")


def pattern_neighbor_field(
    offsets: List[Tuple[int, int]], height: int, width: int
) -> NeighborField:
    """Broadcast a fixed offset list to every pixel of an H x W grid."""
    arr = np.asarray(offsets, dtype=np.float64)
    tiled = np.broadcast_to(arr, (height, width) + arr.shape).copy()
    return NeighborField(tiled)


@dataclass(frozen=True)
class NeighborMode:
    """Which neighbors each pixel propagates from.

    spn_three_way and cspn_3x3 are fixed integer stencils; non_local carries
    an explicit per-pixel offset field (fractional offsets allowed).
    """

    variant: str
    direction: str = "top-down"
    field: Optional[NeighborField] = None

    def __post_init__(self):
        if self.variant not in (SPN_THREE_WAY, CSPN_3X3, NON_LOCAL):
            raise ValueError(f"unknown neighbor mode {self.variant!r}")
        if self.variant == SPN_THREE_WAY and self.direction not in SPN_DIRECTIONS:
            raise ValueError(f"unknown direction {self.direction!r}")

    def resolve(
        self, grid_shape: Tuple[int, int], override: Optional[NeighborField] = None
    ) -> NeighborField:
        """Concrete per-pixel offsets for a given grid size."""
        h, w = grid_shape
        if self.variant == SPN_THREE_WAY:
            return pattern_neighbor_field(pattern_spn(self.direction), h, w)
        if self.variant == CSPN_3X3:
            return pattern_neighbor_field(pattern_cspn(), h, w)
        nf = override if override is not None else self.field
        if nf is None:
            raise ValueError("non_local mode needs a NeighborField")
        if nf.grid_shape != (h, w):
            raise ValueError(f"neighbor grid {nf.grid_shape} != field grid {(h, w)}")
        return nf

    @property
    def k(self) -> int:
        if self.variant == SPN_THREE_WAY:
            return 3
        if self.variant == CSPN_3X3:
            return 8
        if self.field is None:
            raise ValueError("non_local mode without a field has no fixed K")
        return self.field.k


@dataclass(frozen=True)
class PropagationConfig:
    steps: int
    scheme: NormScheme
    use_confidence: bool
    neighbor_mode: NeighborMode
    # Hard re-imposition of input samples after every step. Off by default:
    # unreliable samples should be down-weighted via confidence, not forced
    # back verbatim. Kept as a switch for ablations.
    replace_seeds: bool = False

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")


@dataclass(frozen=True)
class PropagationResult:
    final: Field2D
    # Per-step snapshots (x^1 .. x^T), only kept when asked for.
    trace: Optional[List[Field2D]]
    # Pixels whose abs_sum normalization hit an all-zero vector and were
    # substituted with identity propagation (w = 0, w_ref = 1).
    zero_affinity_pixels: int


def _integer_gather_fn(
    offsets: List[Tuple[int, int]], grid_shape: Tuple[int, int]
) -> Callable[[np.ndarray], np.ndarray]:
    """Clamped integer-offset gather; the fixed-local fast path."""
    h, w = grid_shape
    row_idx = [np.clip(np.arange(h) + dr, 0, h - 1) for dr, _ in offsets]
    col_idx = [np.clip(np.arange(w) + dc, 0, w - 1) for _, dc in offsets]

    def gather_int(values: np.ndarray) -> np.ndarray:
        out = np.empty((h, w, len(offsets)), dtype=np.float64)
        for k, (ri, ci) in enumerate(zip(row_idx, col_idx)):
            out[:, :, k] = values[ri][:, ci]
        return out

    return gather_int


def _make_gather(
    mode: NeighborMode,
    grid_shape: Tuple[int, int],
    override: Optional[NeighborField] = None,
) -> Tuple[Callable[[np.ndarray], np.ndarray], Callable[[np.ndarray], np.ndarray], NeighborField]:
    """Returns (gather values, gather neighbor-minus-center deviations, field).

    The deviation route is what the step update consumes: it is exactly
    zero on constant fields, which pins the fixed point bit-exactly (see
    sampler.gather_deviation_with_plan).
    """
    neighbors = mode.resolve(grid_shape, override)
    if mode.variant in (SPN_THREE_WAY, CSPN_3X3):
        offsets = (
            pattern_spn(mode.direction)
            if mode.variant == SPN_THREE_WAY
            else pattern_cspn()
        )
        gather_int = _integer_gather_fn(offsets, grid_shape)
        return gather_int, (lambda v: gather_int(v) - v[:, :, None]), neighbors
    plan = build_gather_plan(neighbors, grid_shape)
    return (
        lambda values: gather_with_plan(plan, values),
        lambda values: gather_deviation_with_plan(plan, values),
        neighbors,
    )


def _check_shapes(
    x: Field2D, neighbors: NeighborField, raw_aff: AffinityField, conf: Optional[ConfidenceMap]
) -> None:
    if neighbors.grid_shape != x.shape:
        raise ValueError(f"neighbor grid {neighbors.grid_shape} != field {x.shape}")
    if raw_aff.grid_shape != x.shape:
        raise ValueError(f"affinity grid {raw_aff.grid_shape} != field {x.shape}")
    if raw_aff.k != neighbors.k:
        raise ValueError(f"affinity K={raw_aff.k} != neighbor K={neighbors.k}")
    if conf is not None and conf.shape != x.shape:
        raise ValueError(f"confidence shape {conf.shape} != field {x.shape}")


def _prepare_weights(
    gather_fn: Callable[[np.ndarray], np.ndarray],
    raw_aff: AffinityField,
    conf: Optional[ConfidenceMap],
    scheme: NormScheme,
) -> Tuple[np.ndarray, np.ndarray, int]:
    """Normalize affinities once; returns (weights, w_ref, zero_count).

    Neighbor confidence is fetched at the same (possibly fractional)
    coordinates as the neighbor values, so weight and value describe the
    same virtual neighbor.
    """
    neighbor_conf = gather_fn(conf.values) if conf is not None else None
    weights, _, zero_sum = normalize_batch(scheme, raw_aff.raw, neighbor_conf)
    w_ref = 1.0 - weights.sum(axis=2)
    return weights, w_ref, int(zero_sum.sum())


def propagate_step(
    x: Field2D,
    neighbors: NeighborField,
    raw_aff: AffinityField,
    conf: Optional[ConfidenceMap],
    scheme: NormScheme,
) -> Field2D:
    """One propagation update with freshly normalized weights."""
    _check_shapes(x, neighbors, raw_aff, conf)
    mode = NeighborMode(NON_LOCAL, field=neighbors)
    gather_fn, dev_fn, _ = _make_gather(mode, x.shape)
    weights, _, _ = _prepare_weights(gather_fn, raw_aff, conf, scheme)
    new_values = x.values + (weights * dev_fn(x.values)).sum(axis=2)
    return Field2D(new_values)


def propagate(
    x0: Field2D,
    config: PropagationConfig,
    raw_aff: AffinityField,
    conf: Optional[ConfidenceMap] = None,
    *,
    neighbors: Optional[NeighborField] = None,
    sparse: Optional[SparseDepth] = None,
    want_trace: bool = False,
) -> PropagationResult:
    """Run T propagation steps with weights normalized once up front."""
    gather_fn, dev_fn, resolved = _make_gather(config.neighbor_mode, x0.shape, neighbors)
    if config.use_confidence and conf is None:
        raise ValueError("config asks for confidence but none was provided")
    conf_used = conf if config.use_confidence else None
    _check_shapes(x0, resolved, raw_aff, conf_used)
    if config.replace_seeds and sparse is None:
        raise ValueError("replace_seeds needs the sparse depth input")

    weights, _, zero_count = _prepare_weights(
        gather_fn, raw_aff, conf_used, config.scheme
    )

    values = x0.values.copy()
    trace: Optional[List[Field2D]] = [] if want_trace else None
    for _ in range(config.steps):
        values = values + (weights * dev_fn(values)).sum(axis=2)
        if config.replace_seeds:
            values = np.where(sparse.mask, sparse.depth.values, values)
        if trace is not None:
            trace.append(Field2D(values))
    return PropagationResult(final=Field2D(values), trace=trace, zero_affinity_pixels=zero_count)


def neighbor_depth_variance(gt: Field2D, neighbors: NeighborField) -> float:
    """Mean over pixels of the variance of the K neighbor depths (m^2).

    Low variance means each pixel's neighbors sit on depth-consistent
    surfaces; high variance means neighbors straddle depth boundaries and
    propagation will mix unrelated depths.
    """
    if neighbors.grid_shape != gt.shape:
        raise ValueError(f"neighbor grid {neighbors.grid_shape} != field {gt.shape}")
    plan = build_gather_plan(neighbors, gt.shape)
    gathered = gather_with_plan(plan, gt.values)
    return float(gathered.var(axis=2).mean())
