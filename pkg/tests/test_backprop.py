"""Reverse-mode gradients: loss values, exactness, and the FD harness."""

import numpy as np
import pytest

from nlprop import (
    AffinityField,
    ConfidenceMap,
    Field2D,
    NeighborField,
    NormScheme,
    SparseDepth,
)
from nlprop.backprop import (
    CheckInstance,
    LossSpec,
    backward,
    forward_loss,
    gradcheck,
    loss,
)
from nlprop.norms import ABS_SUM, ABS_SUM_STAR, TANH_C, TANH_GAMMA
from nlprop.propagation import (
    CSPN_3X3,
    NON_LOCAL,
    NeighborMode,
    PropagationConfig,
    pattern_cspn,
    pattern_neighbor_field,
    propagate,
)


def _instance(seed=0, h=6, w=6, k=4, scheme=None, use_conf=True):
    rng = np.random.default_rng(seed)
    scheme = scheme or NormScheme(TANH_GAMMA, gamma=1.7)
    x0 = Field2D(rng.uniform(0.5, 3.0, size=(h, w)))
    gt = Field2D(rng.uniform(0.5, 3.0, size=(h, w)))
    offsets = rng.integers(-2, 3, size=(h, w, k, 2)) + rng.uniform(
        0.1, 0.9, size=(h, w, k, 2)
    )
    raw = AffinityField(rng.normal(size=(h, w, k)) * 1.2)
    conf = ConfidenceMap(rng.uniform(0.3, 1.0, size=(h, w))) if use_conf else None
    config = PropagationConfig(
        steps=3, scheme=scheme, use_confidence=use_conf,
        neighbor_mode=NeighborMode(NON_LOCAL, field=NeighborField(offsets)),
    )
    valid = rng.uniform(size=(h, w)) < 0.8
    valid[0, 0] = True
    return x0, gt, raw, conf, config, LossSpec(rho=2, valid_mask=valid)


class TestLoss:
    def test_l1_example(self):
        gt = Field2D([[1.0, 2.0]])
        pred = Field2D([[1.0, 3.0]])
        spec = LossSpec(rho=1, valid_mask=np.ones((1, 2), dtype=bool))
        assert loss(pred, gt, spec) == 0.5

    def test_l2_example(self):
        gt = Field2D([[1.0, 2.0]])
        pred = Field2D([[1.0, 3.0]])
        spec = LossSpec(rho=2, valid_mask=np.ones((1, 2), dtype=bool))
        assert loss(pred, gt, spec) == 0.5

    def test_mask_restricts_the_mean(self):
        gt = Field2D([[1.0, 2.0]])
        pred = Field2D([[0.0, 2.0]])
        only_first = LossSpec(rho=2, valid_mask=np.array([[True, False]]))
        assert loss(pred, gt, only_first) == 1.0

    def test_rho_validation(self):
        with pytest.raises(ValueError):
            LossSpec(rho=3, valid_mask=np.ones((1, 1), dtype=bool))

    def test_empty_mask_rejected(self):
        with pytest.raises(ValueError):
            LossSpec(rho=2, valid_mask=np.zeros((2, 2), dtype=bool))

    def test_shape_mismatch(self):
        spec = LossSpec(rho=2, valid_mask=np.ones((2, 2), dtype=bool))
        with pytest.raises(ValueError):
            loss(Field2D(np.ones((2, 3))), Field2D(np.ones((2, 2))), spec)


class TestBackwardForwardParity:
    def test_loss_value_matches_propagate(self):
        x0, gt, raw, conf, config, spec = _instance(1)
        value, _ = backward(x0, config, raw, conf, gt, spec)
        pred = propagate(x0, config, raw, conf).final
        assert value == pytest.approx(loss(pred, gt, spec), rel=1e-12)

    def test_forward_loss_helper_agrees(self):
        x0, gt, raw, conf, config, spec = _instance(2)
        value, _ = backward(x0, config, raw, conf, gt, spec)
        helper = forward_loss(
            x0.values,
            config.neighbor_mode.field.offsets,
            raw.raw,
            conf.values,
            config.scheme.gamma,
            gt.values,
            spec,
            config.scheme,
            config.steps,
        )
        assert helper == pytest.approx(value, rel=1e-12)

    def test_replace_seeds_parity(self):
        x0, gt, raw, conf, config, spec = _instance(3)
        mask = np.zeros(x0.shape, dtype=bool)
        mask[1, 1] = mask[3, 4] = True
        sparse = SparseDepth(depth=Field2D(np.where(mask, 2.0, 0.0)), mask=mask)
        config = PropagationConfig(
            steps=config.steps, scheme=config.scheme,
            use_confidence=config.use_confidence,
            neighbor_mode=config.neighbor_mode, replace_seeds=True,
        )
        value, _ = backward(x0, config, raw, conf, gt, spec, sparse=sparse)
        pred = propagate(x0, config, raw, conf, sparse=sparse).final
        assert value == pytest.approx(loss(pred, gt, spec), rel=1e-12)


class TestGradientStructure:
    def test_gradients_are_linear_in_the_cotangent(self):
        x0, gt, raw, conf, config, spec = _instance(4)
        _, b1 = backward(x0, config, raw, conf, gt, spec, cotangent=1.0)
        _, b2 = backward(x0, config, raw, conf, gt, spec, cotangent=2.0)
        np.testing.assert_allclose(b2.d_x0, 2.0 * b1.d_x0, rtol=1e-12)
        np.testing.assert_allclose(b2.d_raw_aff, 2.0 * b1.d_raw_aff, rtol=1e-12)
        np.testing.assert_allclose(b2.d_offsets, 2.0 * b1.d_offsets, rtol=1e-12)
        np.testing.assert_allclose(b2.d_conf, 2.0 * b1.d_conf, rtol=1e-12)
        assert b2.d_gamma == pytest.approx(2.0 * b1.d_gamma, rel=1e-12)

    def test_zero_weights_make_x0_gradient_the_loss_gradient(self):
        # With all-zero raw affinities under tanh_c the prediction is x0
        # itself, so d_x0 must be the plain l2 loss gradient.
        rng = np.random.default_rng(5)
        h = w = 5
        x0 = Field2D(rng.uniform(1.0, 2.0, size=(h, w)))
        gt = Field2D(rng.uniform(1.0, 2.0, size=(h, w)))
        raw = AffinityField(np.zeros((h, w, 8)))
        config = PropagationConfig(
            steps=4, scheme=NormScheme(TANH_C, c=8.0), use_confidence=False,
            neighbor_mode=NeighborMode(CSPN_3X3),
        )
        spec = LossSpec(rho=2, valid_mask=np.ones((h, w), dtype=bool))
        value, bundle = backward(x0, config, raw, None, gt, spec)
        want = 2.0 * (x0.values - gt.values) / (h * w)
        np.testing.assert_allclose(bundle.d_x0, want, atol=1e-12)
        np.testing.assert_array_equal(bundle.d_offsets, 0.0)
        assert value == pytest.approx(((gt.values - x0.values) ** 2).mean(), rel=1e-12)

    def test_zero_confidence_gates_the_affinity_gradient(self):
        x0, gt, raw, _, config, spec = _instance(6, scheme=NormScheme(ABS_SUM_STAR))
        conf = ConfidenceMap(np.zeros(x0.shape))
        value, bundle = backward(x0, config, raw, conf, gt, spec)
        np.testing.assert_array_equal(bundle.d_raw_aff, 0.0)
        # the confidence direction itself still feels the loss
        assert np.abs(bundle.d_conf).max() > 0.0

    def test_gamma_gradient_zero_for_other_schemes(self):
        x0, gt, raw, conf, config, spec = _instance(7, scheme=NormScheme(ABS_SUM))
        _, bundle = backward(x0, config, raw, conf, gt, spec)
        assert bundle.d_gamma == 0.0

    def test_confidence_gradient_zero_when_disabled(self):
        x0, gt, raw, _, config, spec = _instance(8, use_conf=False)
        _, bundle = backward(x0, config, raw, None, gt, spec)
        np.testing.assert_array_equal(bundle.d_conf, 0.0)


class TestGradcheck:
    @pytest.mark.parametrize(
        "scheme,use_conf,rho,steps",
        [
            (NormScheme(ABS_SUM), True, 2, 3),
            (NormScheme(ABS_SUM), False, 1, 1),
            (NormScheme(ABS_SUM_STAR), True, 1, 3),
            (NormScheme(ABS_SUM_STAR), False, 2, 1),
            (NormScheme(TANH_C, c=4.0), True, 2, 1),
            (NormScheme(TANH_C, c=4.0), False, 1, 3),
            (NormScheme(TANH_GAMMA, gamma=1.7), True, 2, 3),
            (NormScheme(TANH_GAMMA, gamma=1.2), False, 1, 3),
        ],
        ids=lambda v: str(getattr(v, "variant", v)),
    )
    def test_analytic_matches_finite_differences(self, scheme, use_conf, rho, steps):
        instance = CheckInstance(
            scheme=scheme, use_confidence=use_conf, rho=rho, steps=steps
        )
        report = gradcheck(instance, tol=1e-5, seed=0)
        assert report.passed, "\n".join(report.lines())
        for group in report.groups:
            assert group.max_rel_err < 1e-5

    def test_replace_seeds_path(self):
        report = gradcheck(CheckInstance(replace_seeds=True), tol=1e-5, seed=1)
        assert report.passed, "\n".join(report.lines())

    def test_groups_match_the_configuration(self):
        report = gradcheck(CheckInstance(), seed=2)
        names = {g.name for g in report.groups}
        assert names == {"x0", "raw_aff", "offsets", "conf", "gamma"}
        no_conf = gradcheck(
            CheckInstance(scheme=NormScheme(ABS_SUM), use_confidence=False), seed=2
        )
        assert {g.name for g in no_conf.groups} == {"x0", "raw_aff", "offsets"}

    def test_detects_a_corrupted_affinity_gradient(self):
        report = gradcheck(CheckInstance(), seed=3, corrupt=("raw_aff", 11, 1e-3))
        assert not report.passed
        bad = {g.name: g for g in report.groups}["raw_aff"]
        assert not bad.passed
        assert bad.max_rel_err > 1e-5

    def test_detects_a_corrupted_value_gradient(self):
        report = gradcheck(CheckInstance(), seed=4, corrupt=("x0", 5, 1e-3))
        assert not report.passed

    def test_detects_a_corrupted_offset_gradient(self):
        report = gradcheck(CheckInstance(), seed=5, corrupt=("offsets", 2, 1e-3))
        assert not report.passed

    def test_report_lines_are_printable(self):
        report = gradcheck(CheckInstance(steps=1), seed=6)
        lines = report.lines()
        assert lines[-1] == "overall: ok"
        assert any("max_rel_err" in line for line in lines)
