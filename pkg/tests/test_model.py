"""Flat trainable parameterization of equal-weight mixtures."""

import numpy as np
import pytest

from gmmatch.model import (
    SCALE_FLOOR,
    ThetaModel,
    diag_derivative,
    diag_forward,
    diag_inverse,
)


class TestDiagMap:
    def test_round_trip(self):
        raw = np.linspace(-5, 5, 21)
        np.testing.assert_allclose(diag_inverse(diag_forward(raw)), raw, atol=1e-9)

    def test_positive_with_floor(self):
        vals = diag_forward(np.array([-50.0, -5.0, 0.0, 5.0]))
        assert np.all(vals >= SCALE_FLOOR)

    def test_derivative_matches_fd(self):
        raw = np.array([-2.0, 0.3, 1.7])
        h = 1e-6
        fd = (diag_forward(raw + h) - diag_forward(raw - h)) / (2 * h)
        np.testing.assert_allclose(diag_derivative(raw), fd, rtol=1e-8)


class TestThetaModel:
    def make(self):
        means = np.array([[-1.0, 0.5], [2.0, -0.3], [0.0, 0.0]])
        scales = np.array(
            [np.diag([0.5, 0.8]), [[1.2, 0.0], [0.4, 0.9]], np.eye(2)]
        )
        return ThetaModel.from_means_scales(means, scales), means, scales

    def test_param_length(self):
        model, _, _ = self.make()
        # K*D means plus K*D*(D+1)/2 triangle entries
        assert model.n_params == 3 * 2 + 3 * 3
        assert len(model.params) == model.n_params

    def test_equal_weights(self):
        model, _, _ = self.make()
        np.testing.assert_allclose(model.weights, 1.0 / 3.0)

    def test_materialize_round_trip(self):
        model, means, scales = self.make()
        m, s = model.materialize()
        np.testing.assert_allclose(m, means, atol=1e-12)
        np.testing.assert_allclose(s, scales, atol=1e-12)

    def test_to_gmm_valid(self):
        model, _, _ = self.make()
        g = model.to_gmm()
        assert g.n_components == 3 and g.dim == 2

    def test_diagonal_positivity_for_any_params(self):
        model, _, _ = self.make()
        rng = np.random.default_rng(0)
        for _ in range(10):
            params = rng.normal(scale=10.0, size=model.n_params)
            _, s = model.materialize(params)
            assert np.all(s[:, [0, 1], [0, 1]] >= SCALE_FLOOR)

    def test_flatten_grad_chain_rule(self):
        # d materialize / d params via flatten_grad agrees with finite
        # differences of an arbitrary smooth functional of (means, scales)
        model, _, _ = self.make()
        w_m = np.random.default_rng(1).normal(size=(3, 2))
        w_s = np.tril(np.random.default_rng(2).normal(size=(3, 2, 2)))

        def f(params):
            m, s = model.materialize(params)
            return float(np.sum(w_m * m) + np.sum(w_s * s))

        grad = model.flatten_grad(w_m, w_s)
        h = 1e-6
        p0 = model.params
        for j in range(model.n_params):
            e = np.zeros_like(p0)
            e[j] = h
            fd = (f(p0 + e) - f(p0 - e)) / (2 * h)
            assert grad[j] == pytest.approx(fd, abs=1e-6)
