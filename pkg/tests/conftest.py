"""Shared fixtures: kernel warm-up and cached reference runs."""

import numpy as np
import pytest

from glyctube.engine import SimConfig, run_closed_loop
from glyctube.estimator import EkfConfig
from glyctube.gstc import GstcController
from glyctube.patient import nominal_params
from glyctube.scenarios import three_day_protocol


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Trigger JIT compilation of every kernel before any timed assertion."""
    sim = SimConfig(duration=10.0, ts_control=1.0, dt_plant=0.1, seed=0)
    ekf = EkfConfig()
    protocol = three_day_protocol()
    patient = nominal_params()
    run_closed_loop(patient, GstcController(), protocol, sim, ekf, fast=True)
    run_closed_loop(patient, GstcController(), protocol, sim, ekf, fast=False)


@pytest.fixture(scope="session")
def nominal_trace():
    """The 72-hour, 10-meal nominal closed loop (fused path)."""
    sim = SimConfig(duration=4320.0, ts_control=1.0, dt_plant=0.1, seed=0)
    return run_closed_loop(nominal_params(), GstcController(),
                           three_day_protocol(), sim, EkfConfig(), fast=True)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
