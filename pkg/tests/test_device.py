import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from trilinear_cim.device import (
    CapacitorStack,
    DeviceParams,
    FitError,
    GVSample,
    band_average_eta,
    ctgox,
    delta_vth,
    eta_bg,
    fit_alpha_m,
    fit_residual_norm,
    gamma_tg,
    gds_full,
    gds_linear,
    load_gv_samples,
    save_gv_samples,
)

P = DeviceParams()


def synth(g0=50.0, params=P, volts=np.linspace(-1, 1, 21), noise=0.0, seed=0):
    rng = np.random.default_rng(seed)
    return [GVSample(float(v), float(gds_full(g0, v, params) + noise * rng.normal())) for v in volts]


class TestStack:
    def test_equal_caps_halve(self):
        assert ctgox(CapacitorStack(2, 2, 1, 1)) == pytest.approx(1.0)

    def test_series_arithmetic(self):
        assert ctgox(CapacitorStack(3, 6, 1, 1)) == pytest.approx(2.0)

    def test_series_limit(self):
        assert ctgox(CapacitorStack(1e9 * 5.0, 5.0, 1, 1)) == pytest.approx(5.0, rel=1e-6)

    def test_gamma_equal_caps(self):
        assert gamma_tg(CapacitorStack(2, 2, 1, 1)) == pytest.approx(0.5)

    def test_gamma_vanishes_without_back_gate(self):
        assert gamma_tg(CapacitorStack(2, 2, 1, 1e-12)) < 1e-9

    @given(st.floats(0.1, 10), st.floats(0.1, 10), st.floats(0.1, 10), st.floats(0.1, 10), st.floats(0.5, 4))
    def test_gamma_scale_invariant(self, a, b, c, d, k):
        assert gamma_tg(CapacitorStack(a, b, c, d)) == pytest.approx(gamma_tg(CapacitorStack(k * a, k * b, k * c, k * d)))

    def test_stack_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            CapacitorStack(0, 1, 1, 1)


class TestThresholdShift:
    def test_arithmetic(self):
        assert delta_vth(0.5, 1.0) == pytest.approx(-0.5)

    def test_zero_bias(self):
        assert delta_vth(0.3, 0.0) == 0

    @given(st.floats(0.01, 1), st.floats(0.01, 5))
    def test_sign(self, g, v):
        assert delta_vth(g, v) < 0


class TestEta:
    def test_band_top(self):
        assert eta_bg(69.0, P) == pytest.approx(0.15932, abs=1e-5)

    def test_large_g0_limit(self):
        assert eta_bg(1e12, P) == pytest.approx(P.alpha, rel=1e-9)

    def test_monotone_over_band(self):
        e = eta_bg(np.arange(29.0, 70.0), P)
        assert np.all(np.diff(e) < 0)

    def test_fixed_constant(self):
        assert band_average_eta(29, 69, P, "fixed-constant") == 0.157

    def test_uniform_grid_mean(self):
        expect = P.alpha + P.m_coeff * math.log(69 / 29) / 40
        assert band_average_eta(29, 69, P, "uniform-grid-mean") == pytest.approx(expect, rel=1e-4)
        assert expect == pytest.approx(0.1704, abs=1e-4)

    def test_point_band(self):
        assert band_average_eta(40, 40 + 1e-6, P, "uniform-grid-mean") == pytest.approx(eta_bg(40.0, P), abs=1e-3)

    def test_default_eta_bar_sits_outside_band(self):
        # 0.157 is just below eta_bg(69 uS); reported, not enforced
        assert not P.eta_bar_in_band


class TestConductance:
    def test_zero_bias_identity(self):
        assert gds_linear(50.0, 0.0, 0.157) == 50.0
        assert gds_full(50.0, 0.0, P) == pytest.approx(50.0)

    def test_linear_example(self):
        assert gds_linear(50.0, 1.0, 0.157) == pytest.approx(57.85)

    @given(st.floats(29, 69), st.floats(-1, 1))
    def test_linear_in_bias(self, g0, v):
        d1 = gds_linear(g0, v, 0.157) - g0
        d2 = gds_linear(g0, 2 * v, 0.157) - g0
        assert d2 == pytest.approx(2 * d1, abs=1e-12)

    @given(st.floats(29, 69), st.floats(-1, 1))
    def test_dropped_second_order_term(self, g0, v):
        diff = gds_full(g0, v, P) - gds_linear(g0, v, eta_bg(g0, P))
        assert diff == pytest.approx(P.m_coeff * P.alpha * v * v, rel=1e-9, abs=1e-12)

    def test_dropped_term_example(self):
        diff = gds_full(29.0, 1.0, P) - gds_linear(29.0, 1.0, eta_bg(29.0, P))
        assert diff == pytest.approx(0.211, abs=5e-4)


class TestFit:
    def test_noiseless_recovery(self):
        a, m = fit_alpha_m(synth(), 50.0)
        assert a == pytest.approx(0.137, rel=1e-6)
        assert m == pytest.approx(1.54, rel=1e-6)

    def test_noisy_recovery(self):
        # the quadratic coefficient M*alpha is only ~0.2 uS/V^2, so the sweep must be
        # wide and dense for 0.1 uS noise to stay under 5% (3 sigma ~ 3%)
        samples = synth(noise=0.1, volts=np.linspace(-2, 2, 2001), seed=3)
        a, m = fit_alpha_m(samples, 50.0)
        assert a == pytest.approx(0.137, rel=0.05)
        assert m == pytest.approx(1.54, rel=0.05)
        assert fit_residual_norm(samples, 50.0, a, m) > 0

    def test_underdetermined(self):
        with pytest.raises(FitError):
            fit_alpha_m(synth(volts=[0.0, 1.0]), 50.0)

    def test_pure_slope_when_m_vanishes(self):
        # with M = 0 the model is a line of slope alpha * g0
        g0, alpha = 50.0, 0.2
        samples = [GVSample(v, g0 * (1 + alpha * v)) for v in np.linspace(-1, 1, 11)]
        a, m = fit_alpha_m(samples, g0)
        assert a == pytest.approx(alpha, rel=1e-6)
        assert abs(m) < 1e-6

    def test_file_round_trip(self, tmp_path):
        path = tmp_path / "gv.csv"
        save_gv_samples(path, synth())
        assert load_gv_samples(path) == synth()

    def test_params_validation(self):
        with pytest.raises(ValueError):
            DeviceParams(band_lo=70.0)
        with pytest.raises(ValueError):
            DeviceParams(eta_method="median")
