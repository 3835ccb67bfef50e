"""Direct per-pixel optimization on synthetic scenes.

Instead of a feature extractor predicting affinities, offsets and
confidence, every one of those quantities is a free parameter optimized by
gradient descent against the reconstruction loss. That strips the problem
down to the part under study — what the propagation operator and its
normalization can express — and keeps every landscape inspectable.

The initial dense depth comes from inverse-distance weighting of the
sparse samples, with confidence decaying in the distance to the nearest
sample. Offsets start at the 3x3 stencil (optionally jittered so the
non-local arm can escape it); raw affinities start near zero, which makes
the first propagation steps near-identity for the squashing schemes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .backprop import GradientBundle, LossSpec, backward
from .grid import AffinityField, ConfidenceMap, Field2D, NeighborField, SparseDepth
from .metrics import MetricReport, evaluate, evaluate_banded
from .norms import TANH_GAMMA, NormScheme
from .propagation import (
    CSPN_3X3,
    NON_LOCAL,
    SPN_THREE_WAY,
    NeighborMode,
    PropagationConfig,
    pattern_cspn,
    pattern_neighbor_field,
    pattern_spn,
    propagate,
)
from .scenes import dilate_mask, discontinuity_mask

PLAIN = "plain-gradient"
MOMENTUM = "momentum"
ADAPTIVE = "adaptive"

OFFSET_INIT_PATTERN = "cspn-pattern"
OFFSET_INIT_JITTER = "random-jitter"


class FitDivergence(RuntimeError):
    """The loss became non-finite; step size is too aggressive."""


@dataclass(frozen=True)
class FitConfig:
    iterations: int
    step_size: float
    optimizer: str = ADAPTIVE
    beta: float = 0.9  # momentum coefficient
    beta1: float = 0.9  # adaptive first-moment decay
    beta2: float = 0.999  # adaptive second-moment decay
    eps: float = 1e-8
    learn_x0: bool = True
    learn_offsets: bool = True
    learn_affinities: bool = True
    learn_confidence: bool = True
    learn_gamma: bool = True
    offset_init: str = OFFSET_INIT_JITTER
    jitter_sigma: float = 0.5
    affinity_init_sigma: float = 0.1
    idw_power: float = 1.0
    idw_lambda: float = 4.0
    rho: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.step_size <= 0:
            raise ValueError(f"step_size must be > 0, got {self.step_size}")
        if self.optimizer not in (PLAIN, MOMENTUM, ADAPTIVE):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.offset_init not in (OFFSET_INIT_PATTERN, OFFSET_INIT_JITTER):
            raise ValueError(f"unknown offset init {self.offset_init!r}")


@dataclass
class FitResult:
    final_loss: float
    metrics: MetricReport
    band_metrics: Optional[MetricReport]
    refined: Field2D
    x0: np.ndarray
    raw_aff: np.ndarray
    offsets: np.ndarray
    conf: np.ndarray
    gamma: float
    trace: np.ndarray


def init_depth_idw(
    sparse: SparseDepth,
    power: float = 1.0,
    lam: float = 4.0,
    k_nearest: int = 8,
) -> Tuple[Field2D, ConfidenceMap]:
    """Inverse-distance-weighted dense fill plus a distance-based confidence.

    Each pixel blends its k nearest samples with weights d^-power; pixels
    holding a sample reproduce it exactly. Confidence is exp(-d_near/lam),
    so it is 1 on samples and decays with the distance to the closest one.
    """
    h, w = sparse.depth.shape
    sites = np.argwhere(sparse.mask).astype(np.float64)
    vals = sparse.depth.values[sparse.mask]
    k = min(k_nearest, len(vals))

    filled = np.empty(h * w)
    nearest = np.empty(h * w)
    coords = np.stack(
        np.meshgrid(np.arange(h), np.arange(w), indexing="ij"), axis=-1
    ).reshape(-1, 2).astype(np.float64)

    # Chunk the pixel x site distance matrix to keep memory flat.
    chunk = max(1, (1 << 21) // max(1, len(vals)))
    for start in range(0, h * w, chunk):
        block = coords[start : start + chunk]
        d2 = ((block[:, None, :] - sites[None, :, :]) ** 2).sum(axis=2)
        if k < len(vals):
            part = np.argpartition(d2, k - 1, axis=1)[:, :k]
            d2 = np.take_along_axis(d2, part, axis=1)
            near_vals = vals[part]
        else:
            near_vals = np.broadcast_to(vals, (len(block), len(vals)))
        d = np.sqrt(d2)
        nearest[start : start + len(block)] = d.min(axis=1)
        on_site = d < 1e-9
        with np.errstate(divide="ignore"):
            wgt = 1.0 / np.where(on_site, 1.0, d) ** power
        wgt = np.where(on_site, 0.0, wgt)
        exact = on_site.any(axis=1)
        blend = (wgt * near_vals).sum(axis=1) / np.maximum(wgt.sum(axis=1), 1e-300)
        hit = np.where(on_site, near_vals, 0.0).sum(axis=1)
        filled[start : start + len(block)] = np.where(exact, hit, blend)

    conf = np.exp(-nearest / lam)
    return Field2D(filled.reshape(h, w)), ConfidenceMap(conf.reshape(h, w))


class _Optimizer:
    """Per-group first-order update rules sharing one interface."""

    def __init__(self, cfg: FitConfig):
        self.cfg = cfg
        self.state: Dict[str, Dict[str, np.ndarray]] = {}
        self.t = 0

    def begin_step(self) -> None:
        self.t += 1

    def step(self, name: str, grad: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        if cfg.optimizer == PLAIN:
            return cfg.step_size * grad
        st = self.state.setdefault(name, {})
        if cfg.optimizer == MOMENTUM:
            v = st.get("v", np.zeros_like(grad))
            v = cfg.beta * v + grad
            st["v"] = v
            return cfg.step_size * v
        m = st.get("m", np.zeros_like(grad))
        v = st.get("v", np.zeros_like(grad))
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad
        st["m"] = m
        st["v"] = v
        mhat = m / (1.0 - cfg.beta1**self.t)
        vhat = v / (1.0 - cfg.beta2**self.t)
        return cfg.step_size * mhat / (np.sqrt(vhat) + cfg.eps)


def _base_pattern(mode: NeighborMode) -> List[Tuple[int, int]]:
    if mode.variant == SPN_THREE_WAY:
        return pattern_spn(mode.direction)
    return pattern_cspn()


def fit(
    gt: Field2D,
    sparse: SparseDepth,
    config: FitConfig,
    prop_config: PropagationConfig,
    band: Optional[np.ndarray] = None,
) -> FitResult:
    """Optimize the enabled parameter groups against dense supervision.

    Returns the best parameters seen (by loss), their refined depth, and
    metrics both over the full frame and over the discontinuity band.
    """
    h, w = gt.shape
    rng = np.random.default_rng(config.seed)
    mode = prop_config.neighbor_mode
    scheme = prop_config.scheme

    x0_field, conf_map = init_depth_idw(
        sparse, power=config.idw_power, lam=config.idw_lambda
    )
    offsets = pattern_neighbor_field(_base_pattern(mode), h, w).offsets.copy()
    if config.offset_init == OFFSET_INIT_JITTER:
        # Drawn unconditionally so arms that differ only in neighbor mode
        # consume identical random streams; the stencil modes keep their
        # exact pattern regardless.
        jitter = rng.normal(0.0, config.jitter_sigma, offsets.shape)
        if mode.variant == NON_LOCAL:
            offsets = offsets + jitter
    k = offsets.shape[2]

    params: Dict[str, np.ndarray] = {
        "x0": x0_field.values.copy(),
        "raw_aff": rng.normal(0.0, config.affinity_init_sigma, (h, w, k)),
        "offsets": offsets,
        "conf": conf_map.values.copy(),
        "gamma": np.array(float(k)),
    }
    gamma_lo, gamma_hi = scheme.gamma_min, scheme.resolved_gamma_max(k)
    if scheme.variant == TANH_GAMMA:
        params["gamma"] = np.array(float(scheme.gamma))

    learn = {
        "x0": config.learn_x0,
        "raw_aff": config.learn_affinities,
        # Offsets are only free in non-local mode; the stencil modes always
        # gather from their fixed pattern.
        "offsets": config.learn_offsets and mode.variant == NON_LOCAL,
        "conf": config.learn_confidence and prop_config.use_confidence,
        "gamma": config.learn_gamma and scheme.variant == TANH_GAMMA,
    }

    spec = LossSpec(rho=config.rho, valid_mask=np.ones((h, w), dtype=bool))
    opt = _Optimizer(config)

    def run_backward(p: Dict[str, np.ndarray]) -> Tuple[float, GradientBundle]:
        sch = scheme
        if scheme.variant == TANH_GAMMA:
            sch = replace(scheme, gamma=float(p["gamma"]))
        cfg = replace(prop_config, scheme=sch)
        return backward(
            Field2D(p["x0"]),
            cfg,
            AffinityField(p["raw_aff"]),
            ConfidenceMap(p["conf"]) if prop_config.use_confidence else None,
            gt,
            spec,
            neighbors=NeighborField(p["offsets"]) if mode.variant == NON_LOCAL else None,
            sparse=sparse,
        )

    trace = np.empty(config.iterations + 1)
    best_loss = np.inf
    best: Dict[str, np.ndarray] = {}

    for it in range(config.iterations):
        value, bundle = run_backward(params)
        if not np.isfinite(value):
            raise FitDivergence(f"loss became {value} at iteration {it}")
        trace[it] = value
        if value < best_loss:
            best_loss = value
            best = {name: arr.copy() for name, arr in params.items()}

        grads = {
            "x0": bundle.d_x0,
            "raw_aff": bundle.d_raw_aff,
            "offsets": bundle.d_offsets,
            "conf": bundle.d_conf,
            "gamma": np.array(bundle.d_gamma),
        }
        opt.begin_step()
        for name, enabled in learn.items():
            if not enabled:
                continue
            params[name] = params[name] - opt.step(name, grads[name])
        np.clip(params["conf"], 0.0, 1.0, out=params["conf"])
        params["gamma"] = np.clip(params["gamma"], gamma_lo, gamma_hi)

    value, _ = run_backward(params)
    trace[config.iterations] = value
    if value < best_loss:
        best_loss = value
        best = {name: arr.copy() for name, arr in params.items()}

    sch = scheme
    if scheme.variant == TANH_GAMMA:
        sch = replace(scheme, gamma=float(best["gamma"]))
    final_cfg = replace(prop_config, scheme=sch)
    result = propagate(
        Field2D(best["x0"]),
        final_cfg,
        AffinityField(best["raw_aff"]),
        ConfidenceMap(best["conf"]) if prop_config.use_confidence else None,
        neighbors=NeighborField(best["offsets"]) if mode.variant == NON_LOCAL else None,
        sparse=sparse,
    )
    refined = result.final

    valid = np.ones((h, w), dtype=bool)
    report = evaluate(refined, gt, valid)
    if band is None:
        band = dilate_mask(discontinuity_mask(gt), 2)
    band_report = evaluate_banded(refined, gt, valid, band) if band.any() else None

    return FitResult(
        final_loss=float(best_loss),
        metrics=report,
        band_metrics=band_report,
        refined=refined,
        x0=best["x0"],
        raw_aff=best["raw_aff"],
        offsets=best["offsets"],
        conf=best["conf"],
        gamma=float(best["gamma"]),
        trace=trace,
    )


@dataclass
class AblationRow:
    neighbor_mode: str
    scheme: str
    confidence: bool
    result: FitResult

    def label(self) -> str:
        conf = "conf-on" if self.confidence else "conf-off"
        return f"{self.neighbor_mode}/{self.scheme}/{conf}"


def ablation_grid(
    gt: Field2D,
    sparse: SparseDepth,
    base_config: FitConfig,
    steps: int,
    modes: Sequence[NeighborMode],
    schemes: Sequence[NormScheme],
    confidence: Sequence[bool] = (True, False),
) -> List[AblationRow]:
    """One fit per (neighbor mode, scheme, confidence) cell, shared seeds."""
    rows: List[AblationRow] = []
    for mode in modes:
        for scheme in schemes:
            for use_conf in confidence:
                prop_cfg = PropagationConfig(
                    steps=steps,
                    scheme=scheme,
                    use_confidence=use_conf,
                    neighbor_mode=mode,
                )
                result = fit(gt, sparse, base_config, prop_cfg)
                rows.append(
                    AblationRow(
                        neighbor_mode=mode.variant,
                        scheme=scheme.variant,
                        confidence=use_conf,
                        result=result,
                    )
                )
    return rows
