"""Normalization schemes: frozen examples, stability, and the dual routes."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlprop.norms import (
    ABS_SUM,
    ABS_SUM_STAR,
    TANH_C,
    TANH_GAMMA,
    NormScheme,
    SchemeConfigError,
    ZeroAffinitySum,
    abs_sum,
    abs_sum_star,
    apply_scheme,
    confidence_scale,
    mc_normalization_probability,
    normalize_batch,
    reference_weight,
    sample_normalized_pairs,
    stability_margin,
    tanh_c,
    tanh_gamma_abs_sum_star,
)
from oracle_helpers import normalize_ref

ALL_SCHEMES = [
    NormScheme(ABS_SUM),
    NormScheme(ABS_SUM_STAR),
    NormScheme(TANH_C, c=8.0),
    NormScheme(TANH_GAMMA, gamma=1.7),
]


class TestAbsSum:
    def test_already_normalized_vector_unchanged(self):
        out = abs_sum(np.array([0.3, 0.7]))
        np.testing.assert_allclose(out, [0.3, 0.7], atol=1e-15)

    def test_signed_vector(self):
        np.testing.assert_array_equal(abs_sum(np.array([1.0, -1.0])), [0.5, -0.5])

    def test_four_neighbors(self):
        np.testing.assert_array_equal(
            abs_sum(np.array([2.0, 0.0, 0.0, 2.0])), [0.5, 0.0, 0.0, 0.5]
        )

    def test_lands_exactly_on_unit_sphere(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            out = abs_sum(rng.normal(size=5))
            assert abs(np.abs(out).sum() - 1.0) < 1e-12

    def test_zero_vector_is_an_error(self):
        with pytest.raises(ZeroAffinitySum):
            abs_sum(np.zeros(4))


class TestAbsSumStar:
    def test_inside_ball_passes_through(self):
        vec = np.array([0.3, -0.5])
        np.testing.assert_array_equal(abs_sum_star(vec), vec)

    def test_outside_ball_normalizes(self):
        np.testing.assert_array_equal(abs_sum_star(np.array([2.0, -2.0])), [0.5, -0.5])

    def test_exact_boundary_is_not_renormalized(self):
        vec = np.array([0.6, 0.4])  # L1 exactly 1.0: the condition is strict
        np.testing.assert_array_equal(abs_sum_star(vec), vec)

    def test_zero_vector_passes_through(self):
        np.testing.assert_array_equal(abs_sum_star(np.zeros(3)), np.zeros(3))

    def test_idempotent(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            out = abs_sum_star(rng.normal(size=4) * 3.0)
            np.testing.assert_allclose(abs_sum_star(out), out, atol=1e-15)


class TestTanhC:
    def test_example_values(self):
        out = tanh_c(np.array([0.5, -1.0]), c=2.0)
        assert out[0] == pytest.approx(math.tanh(0.5) / 2.0, abs=1e-15)
        assert out[1] == pytest.approx(math.tanh(-1.0) / 2.0, abs=1e-15)

    def test_c_below_k_rejected(self):
        with pytest.raises(SchemeConfigError):
            tanh_c(np.zeros(4), c=3.0)

    def test_saturation_bounds_each_weight(self):
        out = tanh_c(np.array([100.0, -100.0, 0.0]), c=3.0)
        np.testing.assert_allclose(out, [1 / 3, -1 / 3, 0.0], atol=1e-12)

    def test_sum_bound_follows_from_c(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            out = tanh_c(rng.normal(size=6) * 5.0, c=6.0)
            assert np.abs(out).sum() <= 1.0 + 1e-12


class TestTanhGamma:
    def test_small_gamma_triggers_fallback(self):
        # tanh(3)/1.25 per entry gives L1 about 1.59: the fallback divides.
        out = tanh_gamma_abs_sum_star(np.array([3.0, 3.0]), gamma=1.25)
        np.testing.assert_allclose(out, [0.5, 0.5], atol=1e-12)
        assert np.abs(out).sum() == pytest.approx(1.0, abs=1e-12)

    def test_gamma_at_k_never_fires(self):
        rng = np.random.default_rng(3)
        raw = rng.normal(size=(100, 8)) * 4.0
        for row in raw:
            got = tanh_gamma_abs_sum_star(row, gamma=8.0)
            np.testing.assert_array_equal(got, np.tanh(row) / 8.0)

    def test_gamma_below_floor_rejected(self):
        with pytest.raises(SchemeConfigError):
            tanh_gamma_abs_sum_star(np.zeros(2), gamma=0.5)

    def test_gamma_above_ceiling_rejected(self):
        with pytest.raises(SchemeConfigError):
            tanh_gamma_abs_sum_star(np.zeros(2), gamma=100.0)

    def test_custom_bounds_can_loosen_the_floor(self):
        out = tanh_gamma_abs_sum_star(np.array([0.1, -0.1]), gamma=0.5, gamma_min=0.25)
        assert np.abs(out).sum() <= 1.0 + 1e-12


class TestSchemeConfig:
    def test_unknown_variant(self):
        with pytest.raises(SchemeConfigError):
            NormScheme("median")

    def test_tanh_c_requires_c(self):
        with pytest.raises(SchemeConfigError):
            NormScheme(TANH_C)

    def test_tanh_gamma_requires_gamma(self):
        with pytest.raises(SchemeConfigError):
            NormScheme(TANH_GAMMA)

    def test_check_for_k(self):
        NormScheme(TANH_C, c=8.0).check_for_k(8)
        with pytest.raises(SchemeConfigError):
            NormScheme(TANH_C, c=8.0).check_for_k(9)
        with pytest.raises(SchemeConfigError):
            NormScheme(TANH_GAMMA, gamma=0.5).check_for_k(2)
        with pytest.raises(SchemeConfigError):
            NormScheme(ABS_SUM).check_for_k(0)

    def test_gamma_max_resolves_to_twice_k(self):
        s = NormScheme(TANH_GAMMA, gamma=1.5)
        assert s.resolved_gamma_max(4) == 8.0
        assert NormScheme(TANH_GAMMA, gamma=1.5, gamma_max=3.0).resolved_gamma_max(4) == 3.0


class TestConfidenceScale:
    def test_example(self):
        out = confidence_scale(np.array([1.0, 0.5]), np.array([0.4, 0.4]))
        np.testing.assert_allclose(out, [0.4, 0.2], atol=1e-15)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            confidence_scale(np.ones(2), np.array([0.5, 1.5]))
        with pytest.raises(ValueError):
            confidence_scale(np.ones(2), np.array([-0.1, 0.5]))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            confidence_scale(np.ones(3), np.ones(2))

    def test_zero_confidence_kills_weight(self):
        out = confidence_scale(np.array([0.9, -0.9]), np.array([0.0, 1.0]))
        np.testing.assert_array_equal(out, [0.0, -0.9])


class TestReferenceAndMargin:
    def test_reference_weight_examples(self):
        assert reference_weight(np.array([0.4])) == pytest.approx(0.6, abs=1e-15)
        assert reference_weight(np.zeros(4)) == 1.0
        # negative weights push the self-weight above one
        assert reference_weight(np.array([-0.2, -0.3])) == pytest.approx(1.5, abs=1e-15)

    def test_stability_margin_examples(self):
        assert stability_margin(np.array([0.5, 0.5])) == pytest.approx(0.0, abs=1e-15)
        assert stability_margin(np.array([-0.6, 0.6])) == pytest.approx(-0.2, abs=1e-15)
        assert stability_margin(np.zeros(3)) == 1.0


class TestApplyScheme:
    def test_confidence_applies_before_renormalization(self):
        # abs_sum: scaling then dividing by the new L1 keeps the sphere.
        scheme = NormScheme(ABS_SUM)
        out = apply_scheme(scheme, np.array([1.0, 1.0]), np.array([1.0, 0.0]))
        np.testing.assert_array_equal(out, [1.0, 0.0])

    def test_confidence_on_tanh_c_is_final(self):
        # tanh_c has no renormalization stage, so damping is the last word.
        scheme = NormScheme(TANH_C, c=2.0)
        out = apply_scheme(scheme, np.array([1.0, 1.0]), np.array([0.5, 1.0]))
        want = np.tanh(1.0) / 2.0
        np.testing.assert_allclose(out, [want * 0.5, want], atol=1e-15)

    def test_confidence_can_prevent_the_fallback(self):
        scheme = NormScheme(TANH_GAMMA, gamma=1.25)
        hot = apply_scheme(scheme, np.array([3.0, 3.0]))
        np.testing.assert_allclose(hot, [0.5, 0.5], atol=1e-12)
        damped = apply_scheme(scheme, np.array([3.0, 3.0]), np.array([1.0, 0.0]))
        # with the second neighbor muted the L1 stays below 1: no division
        assert damped[0] == pytest.approx(math.tanh(3.0) / 1.25, abs=1e-12)
        assert damped[1] == 0.0

    def test_matches_scalar_reference(self):
        rng = np.random.default_rng(4)
        for scheme in ALL_SCHEMES:
            for _ in range(25):
                raw = rng.normal(size=4) * 2.0
                conf = rng.uniform(0.0, 1.0, size=4)
                if scheme.variant == ABS_SUM and np.abs(raw * conf).sum() == 0.0:
                    continue
                got = apply_scheme(scheme, raw, conf)
                want = normalize_ref(
                    scheme.variant, raw.tolist(), c=scheme.c,
                    gamma=scheme.gamma, conf=conf.tolist(),
                )
                np.testing.assert_allclose(got, want, atol=1e-14)


class TestNormalizeBatch:
    def test_agrees_with_per_vector_route(self):
        rng = np.random.default_rng(5)
        for scheme in ALL_SCHEMES:
            for k in (1, 3, 8):
                if scheme.variant == TANH_C and scheme.c < k:
                    scheme = NormScheme(TANH_C, c=float(k))
                raw = rng.normal(size=(4, 5, k)) * 2.0
                conf = rng.uniform(0.0, 1.0, size=(4, 5, k))
                for use_conf in (None, conf):
                    weights, fired, zero = normalize_batch(scheme, raw, use_conf)
                    assert not zero.any()
                    for i in range(4):
                        for j in range(5):
                            nc = None if use_conf is None else use_conf[i, j]
                            want = apply_scheme(scheme, raw[i, j], nc)
                            np.testing.assert_allclose(
                                weights[i, j], want, atol=1e-14,
                                err_msg=f"{scheme.variant} k={k} at ({i},{j})",
                            )

    def test_fired_flag_matches_definition(self):
        rng = np.random.default_rng(6)
        raw = rng.normal(size=(6, 6, 3))
        weights, fired, _ = normalize_batch(NormScheme(ABS_SUM_STAR), raw)
        want = np.abs(raw).sum(axis=-1) > 1.0
        np.testing.assert_array_equal(fired, want)
        # tanh_c never fires; abs_sum always does
        _, fired_c, _ = normalize_batch(NormScheme(TANH_C, c=3.0), raw)
        assert not fired_c.any()
        _, fired_a, _ = normalize_batch(NormScheme(ABS_SUM), raw)
        assert fired_a.all()

    def test_zero_sum_pixels_get_zero_weights(self):
        raw = np.zeros((2, 2, 4))
        raw[0, 0] = [1.0, 1.0, 0.0, 0.0]
        weights, _, zero = normalize_batch(NormScheme(ABS_SUM), raw)
        assert zero.sum() == 3
        assert not zero[0, 0]
        np.testing.assert_array_equal(weights[0, 1], np.zeros(4))
        np.testing.assert_array_equal(weights[0, 0], [0.5, 0.5, 0.0, 0.0])

    def test_confidence_validation(self):
        raw = np.ones((2, 2, 2))
        with pytest.raises(ValueError):
            normalize_batch(NormScheme(ABS_SUM), raw, np.full((2, 2, 2), 1.5))
        with pytest.raises(ValueError):
            normalize_batch(NormScheme(ABS_SUM), raw, np.ones((2, 2, 3)))


@settings(max_examples=80, deadline=None)
@given(
    data=st.lists(st.floats(-6.0, 6.0), min_size=1, max_size=9),
    variant_idx=st.integers(0, 3),
)
def test_every_scheme_respects_the_stability_budget(data, variant_idx):
    raw = np.array(data)
    k = raw.size
    scheme = [
        NormScheme(ABS_SUM),
        NormScheme(ABS_SUM_STAR),
        NormScheme(TANH_C, c=float(k)),
        NormScheme(TANH_GAMMA, gamma=1.0),
    ][variant_idx]
    if scheme.variant == ABS_SUM and np.abs(raw).sum() == 0.0:
        return
    out = apply_scheme(scheme, raw)
    assert stability_margin(out) >= -1e-12


@settings(max_examples=50, deadline=None)
@given(
    data=st.lists(st.floats(-4.0, 4.0), min_size=2, max_size=6),
    conf=st.lists(st.floats(0.0, 1.0), min_size=6, max_size=6),
)
def test_confidence_never_breaks_stability(data, conf):
    raw = np.array(data)
    nc = np.array(conf[: raw.size])
    for scheme in ALL_SCHEMES:
        if scheme.variant == ABS_SUM and np.abs(raw * nc).sum() == 0.0:
            continue
        out = apply_scheme(scheme, raw, nc)
        assert stability_margin(out) >= -1e-12


class TestMonteCarlo:
    def test_abs_sum_always_fires(self):
        for k in (1, 2, 4, 8):
            assert mc_normalization_probability(k, NormScheme(ABS_SUM), 100, 0) == 1.0

    def test_tanh_c_never_fires(self):
        assert mc_normalization_probability(4, NormScheme(TANH_C, c=4.0), 100, 0) == 0.0

    def test_deterministic_given_seed(self):
        scheme = NormScheme(ABS_SUM_STAR)
        a = mc_normalization_probability(4, scheme, 50_000, seed=9)
        b = mc_normalization_probability(4, scheme, 50_000, seed=9)
        assert a == b
        c = mc_normalization_probability(4, scheme, 50_000, seed=10)
        assert a != c

    def test_k1_matches_the_gaussian_tail(self):
        # P(|z| > 1) for one standard normal is about 0.3173
        p = mc_normalization_probability(1, NormScheme(ABS_SUM_STAR), 100_000, 0)
        assert p == pytest.approx(0.3173, abs=0.01)

    def test_chunking_does_not_change_the_estimate(self):
        # crossing the internal chunk boundary must not disturb the stream
        scheme = NormScheme(ABS_SUM_STAR)
        small = mc_normalization_probability(2, scheme, (1 << 18) + 17, seed=3)
        assert 0.5 < small < 0.9

    def test_rejects_bad_sample_count(self):
        with pytest.raises(ValueError):
            mc_normalization_probability(2, NormScheme(ABS_SUM_STAR), 0, 0)


class TestNormalizedPairs:
    def test_shape_and_budget(self):
        pairs = sample_normalized_pairs(NormScheme(ABS_SUM_STAR), 500, seed=0)
        assert pairs.shape == (500, 2)
        assert (np.abs(pairs).sum(axis=1) <= 1.0 + 1e-12).all()

    def test_abs_sum_pairs_live_on_the_sphere(self):
        pairs = sample_normalized_pairs(NormScheme(ABS_SUM), 300, seed=1)
        np.testing.assert_allclose(np.abs(pairs).sum(axis=1), 1.0, atol=1e-12)

    def test_star_boundary_fraction_tracks_the_mc_probability(self):
        scheme = NormScheme(ABS_SUM_STAR)
        pairs = sample_normalized_pairs(scheme, 40_000, seed=2)
        on_sphere = np.isclose(np.abs(pairs).sum(axis=1), 1.0, atol=1e-9).mean()
        p = mc_normalization_probability(2, scheme, 40_000, seed=7)
        assert on_sphere == pytest.approx(p, abs=0.02)
