"""Closed-loop engine: integration accuracy, traces, determinism."""

import math

import numpy as np
import pytest

from glyctube.engine import (SIGMA_COLUMNS, TRACE_COLUMNS, SimConfig, SimTrace,
                             cgm_sample, integrate_step, run_closed_loop,
                             tube_violations)
from glyctube.estimator import EkfConfig
from glyctube.gstc import GstcController
from glyctube.patient import (MealEvent, MealProtocol, PlantState,
                              nominal_params)
from glyctube.scenarios import three_day_protocol


class TestSimConfig:
    def test_n_steps(self):
        assert SimConfig(duration=4320.0).n_steps == 4320
        assert SimConfig(duration=60.0, ts_control=0.5).n_steps == 120

    def test_divisibility_enforced(self):
        with pytest.raises(ValueError):
            SimConfig(ts_control=1.0, dt_plant=0.3)
        with pytest.raises(ValueError):
            SimConfig(duration=100.5, ts_control=1.0)
        with pytest.raises(ValueError):
            SimConfig(cgm_noise_sigma=-1.0)


class TestCgm:
    def test_noise_free(self):
        rng = np.random.default_rng(0)
        assert cgm_sample(20.0, 80.0, 0.0, rng) == 100.0

    def test_noise_sd(self):
        rng = np.random.default_rng(1)
        z = np.array([cgm_sample(0.0, 80.0, 2.0, rng) for _ in range(100_000)])
        assert np.std(z) == pytest.approx(2.0, rel=0.02)
        assert np.mean(z) == pytest.approx(80.0, abs=0.05)


class TestIntegration:
    def test_basal_fixed_point(self):
        p = nominal_params()
        state = integrate_step(PlantState(), p, p.basal_infusion,
                               MealProtocol(), 0.0, 60.0, 0.1)
        assert abs(state.g) < 1e-12
        assert abs(state.x) < 1e-12
        assert abs(state.i) < 1e-12

    def test_insulin_free_decay(self):
        # with u at the basal rate, i and x stay 0 and g decays as
        # 50 * exp(-s_g t); closed form after 60 min
        p = nominal_params()
        state = PlantState(g=50.0)
        for k in range(60):
            state = integrate_step(state, p, p.basal_infusion,
                                   MealProtocol(), float(k), 1.0, 0.1)
        exact = 50.0 * math.exp(-0.028 * 60.0)
        assert exact == pytest.approx(9.3187, abs=5e-4)
        assert abs(state.g - exact) / exact < 1e-8

    def test_halving_dt_is_order4(self):
        p = nominal_params()
        protocol = MealProtocol(events=(MealEvent(0.0, 60.0),))

        def endpoint(dt):
            return integrate_step(PlantState(g=20.0), p, 30.0, protocol,
                                  0.0, 120.0, dt).g

        ref = endpoint(0.05)
        e1 = abs(endpoint(4.0) - ref)
        e2 = abs(endpoint(2.0) - ref)
        assert e1 / e2 == pytest.approx(16.0, rel=0.35)


class TestTrace:
    def test_column_access(self, nominal_trace):
        assert nominal_trace.t_min[0] == 0.0
        assert nominal_trace.g_abs[0] == 80.0
        with pytest.raises(AttributeError):
            _ = nominal_trace.not_a_column

    def test_csv_round_trip(self, tmp_path, nominal_trace):
        path = tmp_path / "trace.csv"
        nominal_trace.to_csv(path, include_sigma=True)
        back = SimTrace.from_csv(path)
        assert np.array_equal(back.data, nominal_trace.data)

    def test_csv_header_contract(self, tmp_path, nominal_trace):
        path = tmp_path / "trace.csv"
        nominal_trace.to_csv(path)
        header = path.read_text().splitlines()[0].split(",")
        assert tuple(header) == TRACE_COLUMNS
        nominal_trace.to_csv(path, include_sigma=True)
        header = path.read_text().splitlines()[0].split(",")
        assert tuple(header) == TRACE_COLUMNS + SIGMA_COLUMNS


class TestClosedLoop:
    def test_fused_equals_generic(self):
        sim = SimConfig(duration=600.0, cgm_noise_sigma=2.0, seed=3)
        args = (nominal_params(), GstcController(), three_day_protocol(),
                sim, EkfConfig())
        fused = run_closed_loop(*args, fast=True)
        generic = run_closed_loop(*args, fast=False)
        assert np.array_equal(fused.data, generic.data)

    def test_deterministic_given_seed(self):
        sim = SimConfig(duration=300.0, cgm_noise_sigma=2.0, seed=11)
        args = (nominal_params(), GstcController(), three_day_protocol(),
                sim, EkfConfig())
        a = run_closed_loop(*args, fast=True)
        b = run_closed_loop(*args, fast=True)
        assert np.array_equal(a.data, b.data)

    def test_seed_changes_noise(self):
        base = dict(duration=300.0, cgm_noise_sigma=2.0)
        args = (nominal_params(), GstcController(), three_day_protocol())
        a = run_closed_loop(*args, SimConfig(seed=1, **base), EkfConfig())
        b = run_closed_loop(*args, SimConfig(seed=2, **base), EkfConfig())
        assert not np.array_equal(a.z_cgm, b.z_cgm)

    def test_fast_rejects_other_controllers(self):
        class Dummy:
            def reset(self):
                pass

        with pytest.raises(ValueError):
            run_closed_loop(nominal_params(), Dummy(), three_day_protocol(),
                            SimConfig(duration=10.0), EkfConfig(), fast=True)

    def test_input_clamped(self, nominal_trace):
        assert nominal_trace.u.min() >= 0.0
        assert nominal_trace.u.max() <= 144.0

    def test_nominal_run_is_safe(self, nominal_trace):
        # the nominal tuning is not feasibility-certified, so only the
        # glucose band is guaranteed; funnel excursions are reported but
        # not bounded here
        viol = tube_violations(nominal_trace)
        assert viol["glucose"] == 0

    def test_generic_records_step_time(self):
        sim = SimConfig(duration=120.0)
        trace = run_closed_loop(nominal_params(), GstcController(),
                                three_day_protocol(), sim, EkfConfig(),
                                fast=False)
        assert math.isfinite(trace.mean_step_time_ms)
        assert trace.mean_step_time_ms > 0.0


class TestTubeViolations:
    def test_counts_glucose_excursions(self):
        data = np.zeros((5, 21))
        data[:, 2] = [80.0, 60.0, 190.0, 100.0, 70.0]  # g_abs
        data[:, 11] = 1.0  # rho_x
        data[:, 12] = 1.0  # rho_i
        viol = tube_violations(SimTrace(data=data))
        assert viol["glucose"] == 2
        assert not viol["ok"]

    def test_funnel_checks_skipped_without_diagnostics(self):
        data = np.full((3, 21), np.nan)
        data[:, 2] = 100.0
        viol = tube_violations(SimTrace(data=data))
        assert "x_funnel" not in viol
        assert viol["ok"]
