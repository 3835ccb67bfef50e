"""Affinity normalization schemes and their stability analysis.

A propagation step mixes each pixel's value with K neighbor values using
weights w_k; the update is contractive only while sum_k |w_k| <= 1 holds
per pixel. Every scheme here guarantees that bound by construction:

- abs_sum: always divide by the L1 norm (weights land exactly on the ball).
- abs_sum_star: divide only when the raw vector is outside the unit L1 ball.
- tanh_c: squash with tanh, divide by a constant C >= K.
- tanh_gamma_abs_sum_star: squash with tanh, divide by a learnable gamma,
  then fall back to abs_sum_star in case gamma < K lets the sum escape.

Confidence enters by multiplying the pre-normalization vector, after which
the scheme's own renormalization (if any) runs on the scaled result. With
confidences in [0, 1] this can only shrink the L1 norm, so the stability
bound survives.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

ABS_SUM = "abs_sum"
ABS_SUM_STAR = "abs_sum_star"
TANH_C = "tanh_c"
TANH_GAMMA = "tanh_gamma_abs_sum_star"

_VARIANTS = (ABS_SUM, ABS_SUM_STAR, TANH_C, TANH_GAMMA)


class SchemeConfigError(ValueError):
    """A scheme parameter violates its stability side condition."""


class ZeroAffinitySum(ValueError):
    """abs_sum received an all-zero vector; the quotient is undefined."""


@dataclass(frozen=True)
class NormScheme:
    """One normalization scheme plus its parameters.

    c is the TanhC divisor; gamma the TanhGamma divisor. gamma_max = None
    resolves to 2K once the neighbor count is known. Parameter checks run
    at application time because the legal ranges depend on K.
    """

    variant: str
    c: Optional[float] = None
    gamma: Optional[float] = None
    gamma_min: float = 1.0
    gamma_max: Optional[float] = None

    def __post_init__(self):
        if self.variant not in _VARIANTS:
            raise SchemeConfigError(
                f"unknown scheme variant {self.variant!r}; expected one of {_VARIANTS}"
            )
        if self.variant == TANH_C and self.c is None:
            raise SchemeConfigError("tanh_c scheme needs the divisor c")
        if self.variant == TANH_GAMMA and self.gamma is None:
            raise SchemeConfigError("tanh_gamma_abs_sum_star scheme needs gamma")

    def resolved_gamma_max(self, k: int) -> float:
        return 2.0 * k if self.gamma_max is None else float(self.gamma_max)

    def check_for_k(self, k: int) -> None:
        """Validate parameters against a concrete neighbor count."""
        if k < 1:
            raise SchemeConfigError(f"neighbor count must be >= 1, got {k}")
        if self.variant == TANH_C:
            if self.c < k:
                raise SchemeConfigError(
                    f"tanh_c divisor c={self.c} violates c >= K (K={k}); "
                    "the weight sum would not be bounded by 1"
                )
        if self.variant == TANH_GAMMA:
            gmax = self.resolved_gamma_max(k)
            if not (self.gamma_min <= self.gamma <= gmax):
                raise SchemeConfigError(
                    f"gamma={self.gamma} outside [{self.gamma_min}, {gmax}]"
                )
            if self.gamma <= 0:
                raise SchemeConfigError(f"gamma must be positive, got {self.gamma}")


def abs_sum(raw: np.ndarray) -> np.ndarray:
    """Divide by the L1 norm; the result sits exactly on the unit L1 sphere."""
    raw = np.asarray(raw, dtype=np.float64)
    total = np.abs(raw).sum()
    if total == 0.0:
        raise ZeroAffinitySum("abs_sum of the all-zero vector is undefined")
    return raw / total


def abs_sum_star(raw: np.ndarray) -> np.ndarray:
    """Renormalize only if the raw vector lies outside the unit L1 ball."""
    raw = np.asarray(raw, dtype=np.float64)
    total = np.abs(raw).sum()
    if total > 1.0:
        return raw / total
    return raw.copy()


def tanh_c(raw: np.ndarray, c: float) -> np.ndarray:
    """tanh squash divided by a constant c >= K."""
    raw = np.asarray(raw, dtype=np.float64)
    if c < raw.shape[-1]:
        raise SchemeConfigError(
            f"tanh_c divisor c={c} violates c >= K (K={raw.shape[-1]})"
        )
    return np.tanh(raw) / c


def tanh_gamma_abs_sum_star(
    raw: np.ndarray,
    gamma: float,
    gamma_min: float = 1.0,
    gamma_max: Optional[float] = None,
) -> np.ndarray:
    """tanh squash divided by gamma, with an abs_sum_star safety fallback.

    The fallback makes any positive gamma safe; the bounds keep the learned
    parameter in a numerically sane range (default [1, 2K]).
    """
    raw = np.asarray(raw, dtype=np.float64)
    k = raw.shape[-1]
    gmax = 2.0 * k if gamma_max is None else gamma_max
    if not (gamma_min <= gamma <= gmax) or gamma <= 0:
        raise SchemeConfigError(f"gamma={gamma} outside [{gamma_min}, {gmax}]")
    return abs_sum_star(np.tanh(raw) / gamma)


def confidence_scale(weights: np.ndarray, neighbor_conf: np.ndarray) -> np.ndarray:
    """Elementwise damping of weights by neighbor confidence in [0, 1]."""
    weights = np.asarray(weights, dtype=np.float64)
    conf = np.asarray(neighbor_conf, dtype=np.float64)
    if conf.shape != weights.shape:
        raise ValueError(f"confidence shape {conf.shape} != weights {weights.shape}")
    if np.any(conf < 0.0) or np.any(conf > 1.0):
        raise ValueError("neighbor confidence must lie in [0, 1]")
    return weights * conf


def reference_weight(weights: np.ndarray) -> float:
    """Self-weight 1 - sum(w): the share of its own value a pixel keeps."""
    return float(1.0 - np.asarray(weights, dtype=np.float64).sum())


def stability_margin(weights: np.ndarray) -> float:
    """1 - sum(|w|); non-negative iff one propagation step is contractive."""
    return float(1.0 - np.abs(np.asarray(weights, dtype=np.float64)).sum())


def apply_scheme(
    scheme: NormScheme,
    raw: np.ndarray,
    neighbor_conf: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Run one scheme on a single K-vector, optionally confidence-scaled.

    Confidence multiplies the pre-normalization vector (raw affinities for
    the abs-sum family, tanh(raw)/divisor for the tanh family); the
    scheme's own renormalization then runs on the scaled vector.
    """
    raw = np.asarray(raw, dtype=np.float64)
    scheme.check_for_k(raw.shape[-1])

    if scheme.variant in (ABS_SUM, ABS_SUM_STAR):
        pre = raw
    elif scheme.variant == TANH_C:
        pre = np.tanh(raw) / scheme.c
    else:
        pre = np.tanh(raw) / scheme.gamma

    if neighbor_conf is not None:
        pre = confidence_scale(pre, neighbor_conf)

    if scheme.variant == ABS_SUM:
        return abs_sum(pre)
    if scheme.variant == TANH_C:
        return pre
    return abs_sum_star(pre)


def normalize_batch(
    scheme: NormScheme,
    raw: np.ndarray,
    neighbor_conf: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized apply_scheme over (..., K) stacks.

    Returns (weights, fired, zero_sum):
      weights  (..., K) normalized weights
      fired    (...)    True where the scheme's renormalization divided
      zero_sum (...)    True where abs_sum hit an all-zero vector; those
                        weights are emitted as zeros and the caller decides
                        how to substitute (propagation uses identity).

    Kept separate from the per-vector ops on purpose so tests can check
    one against the other.
    """
    raw = np.asarray(raw, dtype=np.float64)
    k = raw.shape[-1]
    scheme.check_for_k(k)

    if scheme.variant in (ABS_SUM, ABS_SUM_STAR):
        pre = raw.astype(np.float64, copy=True)
    elif scheme.variant == TANH_C:
        pre = np.tanh(raw) / scheme.c
    else:
        pre = np.tanh(raw) / scheme.gamma

    if neighbor_conf is not None:
        conf = np.asarray(neighbor_conf, dtype=np.float64)
        if conf.shape != raw.shape:
            raise ValueError(f"confidence shape {conf.shape} != raw {raw.shape}")
        if np.any(conf < 0.0) or np.any(conf > 1.0):
            raise ValueError("neighbor confidence must lie in [0, 1]")
        pre = pre * conf

    total = np.abs(pre).sum(axis=-1)
    base_shape = raw.shape[:-1]
    zero_sum = np.zeros(base_shape, dtype=bool)

    if scheme.variant == ABS_SUM:
        fired = np.ones(base_shape, dtype=bool)
        zero_sum = total == 0.0
        safe = np.where(zero_sum, 1.0, total)
        weights = pre / safe[..., None]
        weights[zero_sum] = 0.0
    elif scheme.variant == TANH_C:
        fired = np.zeros(base_shape, dtype=bool)
        weights = pre
    else:
        fired = total > 1.0
        scale = np.where(fired, total, 1.0)
        weights = pre / scale[..., None]

    return weights, fired, zero_sum


def mc_normalization_probability(
    k: int, scheme: NormScheme, samples: int, seed: int
) -> float:
    """Fraction of standard-normal raw K-vectors whose renormalization fires.

    Draws iid N(0,1) entries. Deterministic given (seed, samples, k); the
    draw is chunked so large sample counts stay memory-friendly.
    """
    if samples < 1:
        raise ValueError(f"samples must be >= 1, got {samples}")
    scheme.check_for_k(k)
    if scheme.variant == ABS_SUM:
        return 1.0
    if scheme.variant == TANH_C:
        return 0.0

    rng = np.random.default_rng(seed)
    chunk = 1 << 18
    hits = 0
    remaining = samples
    while remaining > 0:
        n = min(chunk, remaining)
        raw = rng.standard_normal((n, k))
        if scheme.variant == ABS_SUM_STAR:
            total = np.abs(raw).sum(axis=1)
        else:
            total = np.abs(np.tanh(raw)).sum(axis=1) / scheme.gamma
        hits += int((total > 1.0).sum())
        remaining -= n
    return hits / samples


def sample_normalized_pairs(
    scheme: NormScheme, samples: int, seed: int
) -> np.ndarray:
    """Normalized (w1, w2) pairs from standard-normal raw draws, K = 2.

    Feeds scatter plots of where each scheme places weights relative to
    the unit L1 ball. Returns an array of shape (samples, 2).
    """
    if samples < 1:
        raise ValueError(f"samples must be >= 1, got {samples}")
    scheme.check_for_k(2)
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((samples, 2))
    weights, _, _ = normalize_batch(scheme, raw)
    return weights
