"""Bounded transformation, funnels and the three-stage cascade."""

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glyctube.gstc import (PSI_MAX_SLOPE, FunnelSpec, GstcConfig,
                           GstcController, glucose_error, gstc_step, psi,
                           stage1_x_ref, stage2_i_ref, stage3_control)

finite = st.floats(allow_nan=False, allow_infinity=False,
                   min_value=-1e6, max_value=1e6)


class TestPsi:
    def test_endpoints_and_midpoint(self):
        assert psi(0.0) == 0.0
        assert psi(1.0) == 1.0
        assert psi(0.5) == 0.5
        assert psi(-3.0) == 0.0
        assert psi(7.0) == 1.0

    @given(finite)
    def test_range(self, s):
        assert 0.0 <= psi(s) <= 1.0

    @given(st.floats(min_value=-2.0, max_value=2.0), st.floats(min_value=1e-6, max_value=0.1))
    def test_monotone(self, s, h):
        assert psi(s + h) >= psi(s)

    @given(st.floats(min_value=-2.0, max_value=2.0))
    def test_slope_bounded(self, s):
        h = 1e-6
        slope = (psi(s + h) - psi(s - h)) / (2 * h)
        assert slope <= PSI_MAX_SLOPE + 1e-6


class TestFunnel:
    def test_example_value(self):
        spec = FunnelSpec(p=2.0, q=0.5, mu=0.1)
        rho, rho_dot = spec.radius(10.0)
        assert rho == pytest.approx(1.5 * math.exp(-1.0) + 0.5, rel=1e-9)
        assert rho == pytest.approx(1.05182, abs=1e-5)
        assert rho_dot < 0.0

    def test_limits(self):
        spec = FunnelSpec(p=2.0, q=0.5, mu=0.1)
        assert spec.radius(0.0)[0] == 2.0
        assert spec.radius(1e6)[0] == pytest.approx(0.5, abs=1e-12)

    @given(st.floats(min_value=0.0, max_value=1e4))
    def test_radius_between_q_and_p(self, t):
        spec = FunnelSpec(p=0.035, q=0.005, mu=0.05)
        rho, _ = spec.radius(t)
        assert 0.005 <= rho <= 0.035

    def test_validation(self):
        with pytest.raises(ValueError):
            FunnelSpec(p=0.5, q=2.0, mu=0.1)
        with pytest.raises(ValueError):
            FunnelSpec(p=2.0, q=0.5, mu=0.0)


class TestGlucoseError:
    def test_example(self):
        assert glucose_error(72.5, -10.0, 100.0) == pytest.approx(0.5)

    def test_band_edges(self):
        assert glucose_error(-10.0, -10.0, 100.0) == pytest.approx(-1.0)
        assert glucose_error(100.0, -10.0, 100.0) == pytest.approx(1.0)

    def test_rejects_degenerate_band(self):
        with pytest.raises(ValueError):
            glucose_error(0.0, 10.0, -10.0)


class TestStages:
    def test_stage1_example(self):
        assert stage1_x_ref(0.5, 0.04) == pytest.approx(0.02)

    def test_stage1_saturates_at_kappa1(self):
        assert stage1_x_ref(glucose_error(100.0, -10.0, 100.0), 0.04) == 0.04

    def test_stage2_example(self):
        fx = FunnelSpec(p=0.035, q=0.005, mu=0.05)
        rho, _ = fx.radius(12.0)
        i_ref, e_x = stage2_i_ref(0.5 * rho, 0.0, fx, 12.0, 60.0)
        assert e_x == pytest.approx(0.5)
        assert i_ref == pytest.approx(30.0)

    def test_stage3_saturated(self):
        fi = FunnelSpec(p=55.0, q=5.0, mu=0.05)
        rho, _ = fi.radius(0.0)
        u, e_i = stage3_control(2.0 * rho, 0.0, fi, 0.0, 144.0)
        assert u == 144.0

    def test_stage3_half(self):
        fi = FunnelSpec(p=55.0, q=5.0, mu=0.05)
        rho, _ = fi.radius(3.0)
        u, e_i = stage3_control(0.5 * rho, 0.0, fi, 3.0, 144.0)
        assert u == pytest.approx(72.0)

    def test_stage3_zero_at_reference(self):
        fi = FunnelSpec(p=55.0, q=5.0, mu=0.05)
        u, e_i = stage3_control(10.0, 10.0, fi, 0.0, 144.0)
        assert u == 0.0


class TestConfig:
    def test_invariants(self):
        with pytest.raises(ValueError):
            GstcConfig(g_lower=10.0)
        with pytest.raises(ValueError):
            GstcConfig(kappa1=0.01)  # below funnel_x.p = 0.035
        with pytest.raises(ValueError):
            GstcConfig(kappa2=50.0)  # below funnel_i.p = 55
        with pytest.raises(ValueError):
            GstcConfig(u_bar=0.0)


class TestCascade:
    def test_basal_estimates_give_zero_input(self):
        u, diag = gstc_step((0.0, 0.0, 0.0), 0.0, GstcConfig())
        assert u == 0.0
        assert diag["e_g"] == pytest.approx(-45.0 / 55.0)

    def test_deterministic(self):
        a = gstc_step((30.0, 0.01, 12.0), 5.0, GstcConfig())
        b = gstc_step((30.0, 0.01, 12.0), 5.0, GstcConfig())
        assert a == b

    def test_nonfinite_estimate_rejected(self):
        with pytest.raises(ValueError):
            gstc_step((math.nan, 0.0, 0.0), 0.0, GstcConfig())
        with pytest.raises(ValueError):
            gstc_step((0.0, math.inf, 0.0), 0.0, GstcConfig())

    @given(finite, finite, finite, st.floats(min_value=0.0, max_value=4320.0))
    @settings(max_examples=300)
    def test_output_ranges(self, g, x, i, t):
        cfg = GstcConfig()
        u, diag = gstc_step((g, x, i), t, cfg)
        assert 0.0 <= u <= cfg.u_bar
        assert 0.0 <= diag["x_ref"] <= cfg.kappa1
        assert 0.0 <= diag["i_ref"] <= cfg.kappa2

    @given(st.floats(min_value=-200.0, max_value=200.0),
           st.floats(min_value=1e-3, max_value=10.0))
    def test_u_nondecreasing_in_reference_gap(self, i_hat, gap):
        cfg = GstcConfig()
        u_low, _ = gstc_step((100.0, 0.0, i_hat), 0.0, cfg)
        u_high, _ = gstc_step((100.0, 0.0, i_hat - gap), 0.0, cfg)
        assert u_high >= u_low

    @given(st.floats(min_value=-60.0, max_value=150.0),
           st.floats(min_value=0.1, max_value=20.0))
    def test_x_ref_nondecreasing_in_glucose(self, g, dg):
        cfg = GstcConfig()
        _, lo = gstc_step((g, 0.0, 0.0), 0.0, cfg)
        _, hi = gstc_step((g + dg, 0.0, 0.0), 0.0, cfg)
        assert hi["x_ref"] >= lo["x_ref"]

    def test_lipschitz_in_estimates(self):
        # slope bound: max psi slope * gain / min funnel radius, per stage
        cfg = GstcConfig()
        base = (40.0, 0.01, 20.0)
        u0, _ = gstc_step(base, 100.0, cfg)
        h = 1e-5
        bound_i = cfg.u_bar * PSI_MAX_SLOPE / cfg.funnel_i.q
        u1, _ = gstc_step((base[0], base[1], base[2] + h), 100.0, cfg)
        assert abs(u1 - u0) / h <= bound_i * (1 + 1e-6)

    def test_controller_object_matches_function(self):
        ctrl = GstcController()
        u_fn, diag_fn = gstc_step((30.0, 0.005, 10.0), 7.0, ctrl.config)
        u_obj, diag_obj = ctrl.step(7.0, 30.0, 0.005, 10.0, 1.0)
        assert u_obj == u_fn and diag_obj == diag_fn
