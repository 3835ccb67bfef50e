"""Reverse-mode derivatives of the masked reconstruction loss.

The differentiated composite is

    loss( propagate_T( x0; normalize(raw, conf, gamma), offsets ), gt )

with hand-derived adjoints for every stage: the l1/l2 loss, T propagation
steps, the normalization scheme (including the tanh squash, the gamma
division, the confidence product, and whichever renormalization branch
actually fired), and bilinear gathers of both values and confidence.
Offsets receive gradient from both gather paths.

No tape, no graph: the composite is fixed, so the reverse sweep is written
out longhand. Forward snapshots of the field are kept per step (T is small
here); everything accumulates in float64 with deterministic reductions.

Branch policy: piecewise-smooth normalizations are differentiated through
the branch taken, with the measure-zero boundary assigned to the
non-renormalizing side. The l1 loss uses subgradient 0 at exact zero
residuals. The finite-difference verifier excludes a small band around
these kinks (and around the integer/clamp kinks of bilinear sampling) —
see gradcheck.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from .grid import AffinityField, ConfidenceMap, Field2D, NeighborField, SparseDepth
from .norms import ABS_SUM, ABS_SUM_STAR, TANH_C, TANH_GAMMA, NormScheme
from .propagation import NON_LOCAL, NeighborMode, PropagationConfig
from .sampler import (
    GatherPlan,
    build_gather_plan,
    gather_deviation_with_plan,
    gather_vjp_offsets,
    gather_vjp_values,
    gather_with_plan,
)


@dataclass(frozen=True)
class LossSpec:
    """Masked reconstruction loss: mean over valid pixels of |gt - pred|^rho."""

    rho: int
    valid_mask: np.ndarray

    def __post_init__(self):
        if self.rho not in (1, 2):
            raise ValueError(f"rho must be 1 or 2, got {self.rho}")
        mask = np.array(self.valid_mask, dtype=bool, copy=True)
        if not mask.any():
            raise ValueError("loss needs at least one valid pixel")
        mask.flags.writeable = False
        object.__setattr__(self, "valid_mask", mask)


def loss(pred: Field2D, gt: Field2D, spec: LossSpec) -> float:
    """Mean |gt - pred|^rho over the valid mask."""
    if pred.shape != gt.shape or spec.valid_mask.shape != gt.shape:
        raise ValueError("pred/gt/mask shapes disagree")
    r = gt.values[spec.valid_mask] - pred.values[spec.valid_mask]
    if spec.rho == 1:
        return float(np.abs(r).mean())
    return float((r * r).mean())


@dataclass
class GradientBundle:
    """Derivatives of the loss w.r.t. every learnable quantity.

    Shapes mirror the primals: d_x0 (H,W), d_raw_aff (H,W,K),
    d_offsets (H,W,K,2), d_conf (H,W), d_gamma scalar. d_gamma is 0 for
    schemes without gamma; d_conf is 0 when confidence is off. Gamma's
    box constraint is the optimizer's business (projection), so d_gamma
    is the unconstrained derivative even at a bound.
    """

    d_x0: np.ndarray
    d_raw_aff: np.ndarray
    d_offsets: np.ndarray
    d_conf: np.ndarray
    d_gamma: float


def _normalize_forward(
    scheme: NormScheme,
    raw: np.ndarray,
    neighbor_conf: Optional[np.ndarray],
) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """Scheme forward pass keeping every intermediate the adjoint needs."""
    k = raw.shape[-1]
    scheme.check_for_k(k)
    aux: Dict[str, np.ndarray] = {}

    if scheme.variant in (ABS_SUM, ABS_SUM_STAR):
        z0 = raw.astype(np.float64, copy=True)
    else:
        th = np.tanh(raw)
        aux["tanh"] = th
        div = scheme.c if scheme.variant == TANH_C else scheme.gamma
        z0 = th / div
    aux["z0"] = z0

    z = z0 if neighbor_conf is None else z0 * neighbor_conf
    aux["z"] = z
    total = np.abs(z).sum(axis=-1)
    aux["total"] = total

    if scheme.variant == ABS_SUM:
        zero = total == 0.0
        fired = ~zero
        safe = np.where(zero, 1.0, total)
        weights = z / safe[..., None]
        weights[zero] = 0.0
    elif scheme.variant == TANH_C:
        zero = np.zeros(total.shape, dtype=bool)
        fired = zero
        weights = z
    else:
        zero = np.zeros(total.shape, dtype=bool)
        fired = total > 1.0
        weights = z / np.where(fired, total, 1.0)[..., None]
    aux["fired"] = fired
    aux["zero"] = zero
    return weights, aux


def _normalize_backward(
    scheme: NormScheme,
    raw: np.ndarray,
    neighbor_conf: Optional[np.ndarray],
    aux: Dict[str, np.ndarray],
    d_weights: np.ndarray,
) -> Tuple[np.ndarray, Optional[np.ndarray], float]:
    """Adjoint of _normalize_forward; returns (d_raw, d_conf_gathered, d_gamma)."""
    z = aux["z"]
    total = aux["total"]
    fired = aux["fired"]
    zero = aux["zero"]

    # Renormalization w = z / S with S = sum |z|:
    #   dz_j = dw_j / S - (sum_k dw_k z_k) / S^2 * sign(z_j)
    # On the pass-through branch dz = dw; zero-substituted pixels emit
    # constant weights so their adjoint is 0.
    if fired.any():
        safe = np.where(fired, total, 1.0)
        inner = (d_weights * z).sum(axis=-1)
        dz_fired = d_weights / safe[..., None] - (inner / (safe * safe))[
            ..., None
        ] * np.sign(z)
        dz = np.where(fired[..., None], dz_fired, d_weights)
    else:
        dz = d_weights.copy()
    if zero.any():
        dz[zero] = 0.0

    if neighbor_conf is None:
        dz0 = dz
        d_conf_g = None
    else:
        z0 = aux["z0"]
        dz0 = dz * neighbor_conf
        d_conf_g = dz * z0

    d_gamma = 0.0
    if scheme.variant in (ABS_SUM, ABS_SUM_STAR):
        d_raw = dz0
    else:
        th = aux["tanh"]
        div = scheme.c if scheme.variant == TANH_C else scheme.gamma
        d_raw = dz0 * (1.0 - th * th) / div
        if scheme.variant == TANH_GAMMA:
            d_gamma = float(-(dz0 * th).sum() / (scheme.gamma * scheme.gamma))
    return d_raw, d_conf_g, d_gamma


def _run_forward(
    x0_values: np.ndarray,
    plan: GatherPlan,
    scheme: NormScheme,
    raw: np.ndarray,
    conf_values: Optional[np.ndarray],
    steps: int,
    seed_mask: Optional[np.ndarray],
    seed_values: Optional[np.ndarray],
    keep: bool,
):
    """Propagation forward pass; optionally keeps per-step snapshots."""
    neighbor_conf = gather_with_plan(plan, conf_values) if conf_values is not None else None
    weights, aux = _normalize_forward(scheme, raw, neighbor_conf)
    w_ref = 1.0 - weights.sum(axis=-1)

    snapshots = [x0_values] if keep else None
    x = x0_values
    for _ in range(steps):
        # Deviation form: matches propagation.propagate exactly, including
        # the bit-exact constant-field fixed point.
        x = x + (weights * gather_deviation_with_plan(plan, x)).sum(axis=-1)
        if seed_mask is not None:
            x = np.where(seed_mask, seed_values, x)
        if keep:
            snapshots.append(x)
    return x, weights, w_ref, aux, neighbor_conf, snapshots


def _loss_and_grad(
    pred: np.ndarray, gt: np.ndarray, spec: LossSpec
) -> Tuple[float, np.ndarray]:
    mask = spec.valid_mask
    n = mask.sum()
    r = np.where(mask, gt - pred, 0.0)
    if spec.rho == 1:
        value = float(np.abs(r)[mask].mean())
        d_pred = np.sign(pred - gt) * mask / n
    else:
        value = float((r * r)[mask].mean())
        d_pred = 2.0 * (pred - gt) * mask / n
    return value, d_pred


def backward(
    x0: Field2D,
    config: PropagationConfig,
    raw_aff: AffinityField,
    conf: Optional[ConfidenceMap],
    gt: Field2D,
    spec: LossSpec,
    *,
    neighbors: Optional[NeighborField] = None,
    sparse: Optional[SparseDepth] = None,
    cotangent: float = 1.0,
) -> Tuple[float, GradientBundle]:
    """Loss value and its exact reverse-mode gradients.

    The forward pass here mirrors propagation.propagate (same
    normalize-once semantics, bilinear gathers via one shared plan); the
    test suite pins the two against each other. `cotangent` scales the
    seed of the reverse sweep — gradients are linear in it.
    """
    resolved = config.neighbor_mode.resolve(x0.shape, neighbors)
    if raw_aff.grid_shape != x0.shape or raw_aff.k != resolved.k:
        raise ValueError("affinity field shape mismatch")
    conf_used = conf if config.use_confidence else None
    if config.use_confidence and conf is None:
        raise ValueError("config asks for confidence but none was provided")
    if conf_used is not None and conf_used.shape != x0.shape:
        raise ValueError("confidence shape mismatch")
    if config.replace_seeds and sparse is None:
        raise ValueError("replace_seeds needs the sparse depth input")

    plan = build_gather_plan(resolved, x0.shape)
    seed_mask = sparse.mask if config.replace_seeds else None
    seed_values = sparse.depth.values if config.replace_seeds else None
    conf_values = conf_used.values if conf_used is not None else None

    pred, weights, w_ref, aux, neighbor_conf, snaps = _run_forward(
        x0.values, plan, config.scheme, raw_aff.raw, conf_values,
        config.steps, seed_mask, seed_values, keep=True,
    )

    value, d_pred = _loss_and_grad(pred, gt.values, spec)

    h, w, k = raw_aff.raw.shape
    u = d_pred * cotangent
    d_weights = np.zeros((h, w, k))
    d_offsets = np.zeros((h, w, k, 2))

    # Reverse sweep over steps; snaps[t] is the field entering step t.
    # The step is x' = x + sum_k w_k (g_k - x), so the weight adjoint is
    # u * (g_k - x) — the reference weight w_ref = 1 - sum w is implicit.
    for t in range(config.steps - 1, -1, -1):
        if seed_mask is not None:
            u = np.where(seed_mask, 0.0, u)
        x_prev = snaps[t]
        d_weights += u[..., None] * gather_deviation_with_plan(plan, x_prev)
        ug = u[..., None] * weights
        d_offsets += gather_vjp_offsets(plan, x_prev, ug)
        u = u * w_ref + gather_vjp_values(plan, ug)

    d_x0 = u

    d_raw, d_conf_g, d_gamma = _normalize_backward(
        config.scheme, raw_aff.raw, neighbor_conf, aux, d_weights
    )

    d_conf = np.zeros((h, w))
    if d_conf_g is not None:
        d_conf = gather_vjp_values(plan, d_conf_g)
        d_offsets += gather_vjp_offsets(plan, conf_values, d_conf_g)

    bundle = GradientBundle(
        d_x0=d_x0,
        d_raw_aff=d_raw,
        d_offsets=d_offsets,
        d_conf=d_conf,
        d_gamma=d_gamma,
    )
    return value, bundle


def forward_loss(
    x0_values: np.ndarray,
    offsets: np.ndarray,
    raw: np.ndarray,
    conf_values: Optional[np.ndarray],
    gamma: Optional[float],
    gt_values: np.ndarray,
    spec: LossSpec,
    scheme: NormScheme,
    steps: int,
    seed_mask: Optional[np.ndarray] = None,
    seed_values: Optional[np.ndarray] = None,
) -> float:
    """Loss as a plain function of raw parameter arrays.

    This is the function the finite-difference verifier perturbs; it
    rebuilds the gather plan every call because offsets may have moved.
    """
    if gamma is not None:
        scheme = replace(scheme, gamma=gamma)
    plan = build_gather_plan(NeighborField(offsets), x0_values.shape)
    pred, _, _, _, _, _ = _run_forward(
        x0_values, plan, scheme, raw, conf_values, steps,
        seed_mask, seed_values, keep=False,
    )
    value, _ = _loss_and_grad(pred, gt_values, spec)
    return value


@dataclass(frozen=True)
class CheckInstance:
    """Shape and configuration of one randomly generated gradcheck problem."""

    height: int = 8
    width: int = 8
    k: int = 4
    steps: int = 3
    scheme: NormScheme = NormScheme(TANH_GAMMA, gamma=1.7)
    use_confidence: bool = True
    rho: int = 2
    replace_seeds: bool = False


@dataclass
class GroupReport:
    name: str
    checked: int
    max_rel_err: float
    worst_index: Tuple[int, ...]
    passed: bool


@dataclass
class GradCheckReport:
    groups: List[GroupReport]
    passed: bool
    seed: int

    def lines(self) -> List[str]:
        out = []
        for g in self.groups:
            status = "ok" if g.passed else "FAIL"
            out.append(
                f"{g.name:10s} checked={g.checked:4d} "
                f"max_rel_err={g.max_rel_err:.3e} worst={g.worst_index} {status}"
            )
        out.append(f"overall: {'ok' if self.passed else 'FAIL'}")
        return out


def _generate_instance(instance: CheckInstance, rng: np.random.Generator):
    """Draw a random problem, re-drawing until it is kink-free.

    Screened-away configurations (all documented nondifferentiable points):
      - pre-normalization entries |z| too close to 0 (the |.| kink),
      - renormalization totals too close to 1 (the fallback branch edge),
      - l1 residuals too close to 0 (the subgradient point),
      - sample coordinates too close to the integer lattice (bilinear
        kinks, which includes the clamp boundary).
    """
    h, w, k = instance.height, instance.width, instance.k
    margin = 1e-4
    for _ in range(200):
        x0 = rng.uniform(0.5, 3.0, (h, w))
        gt = rng.uniform(0.5, 3.0, (h, w))
        valid = rng.random((h, w)) < 0.7
        if not valid.any():
            continue
        base = rng.integers(-2, 3, (h, w, k, 2)).astype(np.float64)
        frac = rng.uniform(0.1, 0.9, (h, w, k, 2))
        offsets = base + frac
        raw = rng.normal(0.0, 1.2, (h, w, k))
        conf = rng.uniform(0.3, 1.0, (h, w)) if instance.use_confidence else None
        gamma = instance.scheme.gamma if instance.scheme.variant == TANH_GAMMA else None

        plan = build_gather_plan(NeighborField(offsets), (h, w))
        neighbor_conf = gather_with_plan(plan, conf) if conf is not None else None
        _, aux = _normalize_forward(instance.scheme, raw, neighbor_conf)
        if np.abs(aux["z"]).min() < margin:
            continue
        if instance.scheme.variant in (ABS_SUM_STAR, TANH_GAMMA):
            if np.abs(aux["total"] - 1.0).min() < margin:
                continue
        pred, _, _, _, _, _ = _run_forward(
            x0, plan, instance.scheme, raw, conf, instance.steps, None, None, keep=False
        )
        if instance.rho == 1 and np.abs(gt - pred)[valid].min() < margin:
            continue
        return x0, gt, valid, offsets, raw, conf, gamma
    raise RuntimeError("could not generate a kink-free gradcheck instance")


def gradcheck(
    instance: CheckInstance = CheckInstance(),
    tol: float = 1e-5,
    seed: int = 0,
    coords_per_group: int = 60,
    fd_step: float = 1e-6,
    corrupt: Optional[Tuple[str, int, float]] = None,
) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    Checks up to coords_per_group randomly chosen coordinates per parameter
    group; relative error uses max(1, |analytic|, |numeric|) in the
    denominator. `corrupt` injects an error of the given size into one
    analytic coordinate (group name, flat index) — it exists so tests can
    confirm the checker actually detects broken gradients.
    """
    rng = np.random.default_rng(seed)
    x0, gt, valid, offsets, raw, conf, gamma = _generate_instance(instance, rng)
    spec = LossSpec(rho=instance.rho, valid_mask=valid)
    config = PropagationConfig(
        steps=instance.steps,
        scheme=instance.scheme,
        use_confidence=instance.use_confidence,
        neighbor_mode=NeighborMode(NON_LOCAL, field=NeighborField(offsets)),
    )
    conf_map = ConfidenceMap(conf) if conf is not None else None
    _, bundle = backward(
        Field2D(x0), config, AffinityField(raw), conf_map, Field2D(gt), spec
    )

    analytic = {
        "x0": bundle.d_x0,
        "raw_aff": bundle.d_raw_aff,
        "offsets": bundle.d_offsets,
    }
    if instance.use_confidence:
        analytic["conf"] = bundle.d_conf
    if instance.scheme.variant == TANH_GAMMA:
        analytic["gamma"] = np.array([bundle.d_gamma])
    if corrupt is not None:
        name, flat, delta = corrupt
        bumped = analytic[name].copy()
        bumped.reshape(-1)[flat] += delta
        analytic[name] = bumped

    primals = {
        "x0": x0,
        "raw_aff": raw,
        "offsets": offsets,
        "conf": conf,
        "gamma": np.array([gamma]) if gamma is not None else None,
    }

    def eval_loss(p):
        return forward_loss(
            p["x0"], p["offsets"], p["raw_aff"], p["conf"],
            float(p["gamma"][0]) if p["gamma"] is not None else None,
            gt, spec, instance.scheme, instance.steps,
        )

    groups: List[GroupReport] = []
    for name, grad in analytic.items():
        size = grad.size
        count = min(coords_per_group, size)
        idx = rng.choice(size, size=count, replace=False)
        if corrupt is not None and corrupt[0] == name and corrupt[1] not in idx:
            idx[0] = corrupt[1]
        worst = 0.0
        worst_index: Tuple[int, ...] = ()
        for flat in idx:
            plus = {k2: (v.copy() if v is not None else None) for k2, v in primals.items()}
            minus = {k2: (v.copy() if v is not None else None) for k2, v in primals.items()}
            plus[name].reshape(-1)[flat] += fd_step
            minus[name].reshape(-1)[flat] -= fd_step
            numeric = (eval_loss(plus) - eval_loss(minus)) / (2.0 * fd_step)
            a = grad.reshape(-1)[flat]
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            if err > worst:
                worst = err
                worst_index = tuple(int(i) for i in np.unravel_index(flat, grad.shape))
        groups.append(
            GroupReport(
                name=name, checked=count, max_rel_err=worst,
                worst_index=worst_index, passed=worst < tol,
            )
        )
    return GradCheckReport(groups=groups, passed=all(g.passed for g in groups), seed=seed)
