"""Closed-form Gaussian dual activations against direct Monte Carlo integration.

The dual of an activation phi is (V, Vdot) with

    V(a, b, c)    = E[phi(u) phi(v)],
    Vdot(a, b, c) = E[phi'(u) phi'(v)],   (u, v) ~ N(0, [[a, c], [c, b]]).

The Monte Carlo oracle below integrates these expectations directly with
antithetic Gaussian draws, so every closed form is checked against an
implementation-independent estimate of the same integral.
"""

import numpy as np
import pytest
from scipy.special import erf as erf_fn

from kernelsdf import dual_activation, apply_activation, activation_derivative


def mc_dual(a, b, c, kind, n_draws=400_000, seed=0):
    """Monte Carlo estimate of (V, Vdot) for a bivariate normal with cov [[a,c],[c,b]]."""
    rng = np.random.default_rng(seed)
    half = rng.standard_normal((n_draws // 2, 2))
    g = np.vstack([half, -half])
    cov = np.array([[a, c], [c, b]], dtype=float)
    u, v = (g @ np.linalg.cholesky(cov).T).T
    pu, pv = apply_activation(u, kind), apply_activation(v, kind)
    du, dv = activation_derivative(u, kind), activation_derivative(v, kind)
    return float(np.mean(pu * pv)), float(np.mean(du * dv))


class TestReluDual:
    def test_standard_uncorrelated(self):
        """At a=b=1, c=0 the arc-cosine formulas give V=1/(2*pi) and Vdot=1/4."""
        v, vdot = dual_activation(1.0, 1.0, 0.0, "relu")
        np.testing.assert_allclose(v, 1.0 / (2.0 * np.pi), rtol=1e-12)
        np.testing.assert_allclose(vdot, 0.25, rtol=1e-12)

    def test_perfectly_correlated(self):
        """At a=b=c=1 (rho=1): V = E[relu(u)^2] = 1/2 and Vdot = E[1{u>0}] = 1/2.

        The correlation clamp keeps rho strictly inside (-1, 1), which costs
        about 1e-7 of relative accuracy exactly at the boundary.
        """
        v, vdot = dual_activation(1.0, 1.0, 1.0, "relu")
        np.testing.assert_allclose(v, 0.5, rtol=5e-6)
        np.testing.assert_allclose(vdot, 0.5, rtol=5e-6)

    def test_anticorrelated(self):
        """At rho=-1, relu(u) relu(-u) = 0 almost surely, so V = Vdot = 0."""
        v, vdot = dual_activation(2.0, 2.0, -2.0, "relu")
        np.testing.assert_allclose(v, 0.0, atol=1e-6)
        np.testing.assert_allclose(vdot, 0.0, atol=1e-6)

    def test_scaling_in_amplitude(self):
        """V scales like sqrt(a*b) at fixed correlation; Vdot is scale-free."""
        v1, vd1 = dual_activation(1.0, 1.0, 0.3, "relu")
        v2, vd2 = dual_activation(4.0, 9.0, 0.3 * 6.0, "relu")
        np.testing.assert_allclose(v2, 6.0 * v1, rtol=1e-12)
        np.testing.assert_allclose(vd2, vd1, rtol=1e-12)

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_monte_carlo(self, seed):
        """Random covariances: closed form within MC error of the direct integral."""
        rng = np.random.default_rng(100 + seed)
        a, b = rng.uniform(0.1, 3.0, size=2)
        rho = rng.uniform(-0.9, 0.9)
        c = rho * np.sqrt(a * b)
        v_mc, vd_mc = mc_dual(a, b, c, "relu", seed=seed)
        v, vdot = dual_activation(a, b, c, "relu")
        np.testing.assert_allclose(v, v_mc, atol=2e-2 * np.sqrt(a * b))
        np.testing.assert_allclose(vdot, vd_mc, atol=2e-2)


class TestErfDual:
    def test_zero_correlation(self):
        """Independent inputs factorize: V = E[erf(u)] E[erf(v)] = 0 by symmetry."""
        v, vdot = dual_activation(1.0, 2.0, 0.0, "erf")
        np.testing.assert_allclose(v, 0.0, atol=1e-15)

    def test_variance_formula(self):
        """V(a,a,a) = (2/pi) arcsin(2a / (1+2a)) — the erf self-similarity."""
        for a in (0.2, 1.0, 5.0):
            v, _ = dual_activation(a, a, a, "erf")
            expected = (2.0 / np.pi) * np.arcsin(2.0 * a / (1.0 + 2.0 * a))
            np.testing.assert_allclose(v, expected, rtol=1e-12)

    def test_derivative_at_zero_correlation(self):
        """Vdot(a,b,0) = (4/pi) / sqrt((1+2a)(1+2b)) — product of scalar means."""
        v, vdot = dual_activation(0.5, 2.0, 0.0, "erf")
        np.testing.assert_allclose(vdot, (4.0 / np.pi) / np.sqrt(2.0 * 5.0), rtol=1e-12)

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_monte_carlo(self, seed):
        """Random covariances: closed form within MC error of the direct integral."""
        rng = np.random.default_rng(200 + seed)
        a, b = rng.uniform(0.1, 3.0, size=2)
        rho = rng.uniform(-0.9, 0.9)
        c = rho * np.sqrt(a * b)
        v_mc, vd_mc = mc_dual(a, b, c, "erf", seed=seed)
        v, vdot = dual_activation(a, b, c, "erf")
        np.testing.assert_allclose(v, v_mc, atol=1e-2)
        np.testing.assert_allclose(vdot, vd_mc, atol=1e-2)

    def test_bounded_by_one(self):
        """|V| <= 1 since |erf| <= 1; holds even at extreme variances."""
        for a in (1e-6, 1.0, 1e6):
            v, _ = dual_activation(a, a, a, "erf")
            assert abs(v) <= 1.0


class TestLinearDual:
    def test_identity_dual(self):
        """The identity activation has V = c and Vdot = 1 exactly."""
        v, vdot = dual_activation(1.3, 0.7, -0.25, "linear")
        assert v == -0.25
        assert vdot == 1.0


class TestArrayBroadcasting:
    def test_array_matches_scalar_loop(self):
        """Vectorized evaluation equals an elementwise scalar loop bit-for-bit."""
        rng = np.random.default_rng(7)
        a = rng.uniform(0.05, 2.0, size=(3, 4))
        b = rng.uniform(0.05, 2.0, size=(3, 4))
        rho = rng.uniform(-0.95, 0.95, size=(3, 4))
        c = rho * np.sqrt(a * b)
        for kind in ("relu", "erf"):
            v_arr, vd_arr = dual_activation(a, b, c, kind)
            for i in range(3):
                for j in range(4):
                    v_s, vd_s = dual_activation(a[i, j], b[i, j], c[i, j], kind)
                    assert v_arr[i, j] == v_s
                    assert vd_arr[i, j] == vd_s

    def test_scalar_inputs_return_floats(self):
        v, vdot = dual_activation(1.0, 1.0, 0.5, "relu")
        assert isinstance(v, float) and isinstance(vdot, float)


class TestDomainHandling:
    def test_degenerate_variance_is_zero(self):
        """A zero-variance marginal kills both expectations for relu."""
        v, vdot = dual_activation(0.0, 1.0, 0.0, "relu")
        assert v == 0.0 and vdot == 0.0

    def test_negative_variance_rejected(self):
        with pytest.raises(ValueError):
            dual_activation(-1.0, 1.0, 0.0, "relu")

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            dual_activation(np.nan, 1.0, 0.0, "erf")

    def test_unknown_activation_rejected(self):
        with pytest.raises(ValueError):
            dual_activation(1.0, 1.0, 0.0, "tanh")

    def test_correlation_clamp_keeps_results_finite(self):
        """|c| slightly above sqrt(a*b) (rounding slop) still yields finite values."""
        v, vdot = dual_activation(1.0, 1.0, 1.0 + 1e-15, "relu")
        assert np.isfinite(v) and np.isfinite(vdot)


class TestPointwiseActivations:
    def test_relu_and_derivative(self):
        x = np.array([-2.0, 0.0, 3.0])
        np.testing.assert_array_equal(apply_activation(x, "relu"), [0.0, 0.0, 3.0])
        np.testing.assert_array_equal(activation_derivative(x, "relu"), [0.0, 0.0, 1.0])

    def test_erf_and_derivative(self):
        x = np.array([-1.0, 0.0, 0.5])
        np.testing.assert_allclose(apply_activation(x, "erf"), erf_fn(x), rtol=1e-15)
        expected = 2.0 / np.sqrt(np.pi) * np.exp(-x * x)
        np.testing.assert_allclose(activation_derivative(x, "erf"), expected, rtol=1e-15)

    def test_linear_passthrough(self):
        x = np.array([-1.0, 2.0])
        np.testing.assert_array_equal(apply_activation(x, "linear"), x)
        np.testing.assert_array_equal(activation_derivative(x, "linear"), [1.0, 1.0])
