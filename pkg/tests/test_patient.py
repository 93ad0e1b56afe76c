"""Plant parameters, uncertainty boxes, meal kernel."""

import math

import numpy as np
import pytest

from glyctube.patient import (Absorption, MealEvent, MealProtocol, ParamBounds,
                              PatientParams, PerturbationSpec, PlantState,
                              derivatives, disturbance_bound, meal_rate,
                              nominal_params, patient2_params, sample_patient)


class TestParams:
    def test_nominal_values(self):
        p = nominal_params()
        assert p.s_g == 0.028
        assert p.p2 == 0.025
        assert p.p3 == 1.3e-5
        assert p.n == pytest.approx(0.09259, abs=1e-5)
        assert p.v == 12.0
        assert p.g_b == 80.0
        assert p.i_b == 7.0

    def test_patient2_is_p3_tripled(self):
        p = patient2_params()
        assert p.p3 == pytest.approx(3.9e-5)
        assert p.s_g == nominal_params().s_g

    def test_positivity_enforced(self):
        with pytest.raises(ValueError):
            PatientParams(s_g=-0.01, p2=0.025, p3=1.3e-5, n=0.09, v=12,
                          g_b=80, i_b=7)
        with pytest.raises(ValueError):
            PatientParams(s_g=0.028, p2=0.025, p3=0.0, n=0.09, v=12,
                          g_b=80, i_b=7)

    def test_basal_infusion(self):
        p = nominal_params()
        assert p.basal_infusion == pytest.approx(p.n * p.i_b * p.v)


class TestBounds:
    def test_box_around_p3(self):
        b = ParamBounds.around(nominal_params(), 0.30)
        lo, hi = b.p3
        assert lo == pytest.approx(0.91e-5)
        assert hi == pytest.approx(1.69e-5)

    def test_contains(self):
        base = nominal_params()
        b = ParamBounds.around(base, 0.30)
        assert b.contains(base)
        outside = PatientParams(s_g=base.s_g * 1.5, p2=base.p2, p3=base.p3,
                                n=base.n, v=base.v, g_b=base.g_b, i_b=base.i_b)
        assert not b.contains(outside)

    def test_invalid_interval(self):
        with pytest.raises(ValueError):
            ParamBounds(s_g=(0.03, 0.02), p2=(0.01, 0.02),
                        p3=(1e-5, 2e-5), n=(0.05, 0.1))


class TestDerivatives:
    def test_glucose_decay_rate(self):
        # state (50, 0, 0), u = 0, d = 0 -> dg = -0.028 * 50
        rates = derivatives(PlantState(g=50.0), nominal_params(), u=0.0, d=0.0)
        assert rates.g == pytest.approx(-1.4)
        assert rates.x == 0.0

    def test_basal_fixed_point(self):
        p = nominal_params()
        rates = derivatives(PlantState(), p, u=p.basal_infusion, d=0.0)
        assert abs(rates.g) < 1e-14
        assert abs(rates.x) < 1e-14
        assert abs(rates.i) < 1e-14


class TestMealKernel:
    def test_zero_before_first_event(self):
        protocol = MealProtocol(events=(MealEvent(100.0, 50.0),))
        assert meal_rate(protocol, 50.0) == 0.0
        assert meal_rate(protocol, 100.0) == 0.0

    def test_analytic_peak(self):
        ab = Absorption()
        protocol = MealProtocol(events=(MealEvent(0.0, 70.0),), absorption=ab)
        peak = 1000.0 * 70.0 * ab.a_g / (ab.dist_vol * ab.tau * math.e)
        assert meal_rate(protocol, ab.tau) == pytest.approx(peak, rel=1e-12)

    def test_peak_with_tau_40(self):
        ab = Absorption(tau=40.0)
        protocol = MealProtocol(events=(MealEvent(0.0, 70.0),), absorption=ab)
        assert meal_rate(protocol, 40.0) == pytest.approx(4.6, abs=0.05)

    def test_superposition(self):
        ab = Absorption()
        e1, e2 = MealEvent(10.0, 40.0), MealEvent(30.0, 60.0)
        both = MealProtocol(events=(e1, e2), absorption=ab)
        only1 = MealProtocol(events=(e1,), absorption=ab)
        only2 = MealProtocol(events=(e2,), absorption=ab)
        for t in (15.0, 45.0, 120.0, 400.0):
            assert meal_rate(both, t) == pytest.approx(
                meal_rate(only1, t) + meal_rate(only2, t), rel=1e-12)

    def test_disturbance_bound_empty(self):
        assert disturbance_bound(MealProtocol()) == 0.0

    def test_disturbance_bound_dominates_single_peak(self):
        ab = Absorption()
        protocol = MealProtocol(events=(MealEvent(0.0, 70.0),), absorption=ab)
        peak = 1000.0 * 70.0 * ab.a_g / (ab.dist_vol * ab.tau * math.e)
        d_bar = disturbance_bound(protocol)
        assert peak <= d_bar <= 1.06 * peak

    def test_disturbance_bound_nonoverlapping(self):
        ab = Absorption()
        protocol = MealProtocol(events=(MealEvent(0.0, 30.0),
                                        MealEvent(2000.0, 70.0)),
                                absorption=ab)
        peak = 1000.0 * 70.0 * ab.a_g / (ab.dist_vol * ab.tau * math.e)
        assert disturbance_bound(protocol) == pytest.approx(1.05 * peak, rel=1e-3)

    def test_event_validation(self):
        with pytest.raises(ValueError):
            MealEvent(-1.0, 50.0)
        with pytest.raises(ValueError):
            MealEvent(0.0, 0.0)
        with pytest.raises(ValueError):
            MealProtocol(events=(MealEvent(100.0, 50.0), MealEvent(50.0, 50.0)))


class TestSampling:
    def test_zero_perturbation_identity(self):
        base = nominal_params()
        rng = np.random.default_rng(0)
        spec = PerturbationSpec(rate_frac=0.0, basal_frac=0.0)
        assert sample_patient(spec, base, rng) == base

    def test_samples_within_box(self):
        base = nominal_params()
        rng = np.random.default_rng(7)
        spec = PerturbationSpec(rate_frac=0.30, basal_frac=0.10)
        box = ParamBounds.around(base, 0.30)
        p3s = []
        for _ in range(10_000):
            s = sample_patient(spec, base, rng)
            assert box.contains(s)
            assert abs(s.g_b - base.g_b) <= 0.10 * base.g_b + 1e-12
            assert s.n == base.n and s.v == base.v
            p3s.append(s.p3)
        p3s = np.array(p3s)
        assert p3s.min() >= 0.91e-5 and p3s.max() <= 1.69e-5
        assert abs(p3s.mean() - base.p3) <= 0.01 * base.p3

    def test_invalid_fraction(self):
        with pytest.raises(ValueError):
            PerturbationSpec(rate_frac=1.0)
