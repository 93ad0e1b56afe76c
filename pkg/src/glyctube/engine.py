"""Fixed-step closed-loop execution and trace recording."""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import estimator as est
from . import kernels
from .gstc import GstcController
from .patient import MealProtocol, PatientParams, PlantState

TRACE_COLUMNS = ("t_min", "g_true", "g_abs", "z_cgm", "g_hat", "x_true", "x_hat",
                 "i_true", "i_hat", "x_ref", "i_ref", "rho_x", "rho_i",
                 "e_g", "e_x", "e_i", "u", "d")
SIGMA_COLUMNS = ("sigma_11", "sigma_22", "sigma_33")


class SimulationError(RuntimeError):
    pass


@dataclass
class SimConfig:
    duration: float = 4320.0     # min (72 h)
    ts_control: float = 1.0      # control/estimation period (min)
    dt_plant: float = 0.1        # integrator substep (min)
    cgm_noise_sigma: float = 0.0  # mg/dL
    seed: int = 0

    def __post_init__(self):
        sub = self.ts_control / self.dt_plant
        if abs(sub - round(sub)) > 1e-9:
            raise ValueError("dt_plant must divide ts_control exactly")
        steps = self.duration / self.ts_control
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("duration must be a multiple of ts_control")
        if self.cgm_noise_sigma < 0:
            raise ValueError("cgm_noise_sigma must be >= 0")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.ts_control))


@dataclass
class SimTrace:
    """Per-control-step record of the full closed loop.

    ``data`` is (n_steps, 21): the 18 contract columns followed by the three
    covariance diagnostics.  Column order matches TRACE_COLUMNS + SIGMA_COLUMNS.
    """
    data: np.ndarray
    mean_step_time_ms: float = math.nan
    meal_starts: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __getattr__(self, name):
        cols = TRACE_COLUMNS + SIGMA_COLUMNS
        if name in cols:
            return self.data[:, cols.index(name)]
        raise AttributeError(name)

    def __len__(self):
        return self.data.shape[0]

    def to_csv(self, path, include_sigma: bool = False):
        cols = TRACE_COLUMNS + (SIGMA_COLUMNS if include_sigma else ())
        n = len(cols)
        with open(path, "w") as f:
            f.write(",".join(cols) + "\n")
            for row in self.data[:, :n]:
                f.write(",".join(repr(float(v)) for v in row) + "\n")

    @classmethod
    def from_csv(cls, path) -> "SimTrace":
        with open(path) as f:
            header = f.readline().strip().split(",")
            rows = [[float(v) for v in line.split(",")] for line in f if line.strip()]
        arr = np.full((len(rows), 21), math.nan)
        cols = TRACE_COLUMNS + SIGMA_COLUMNS
        for j, name in enumerate(header):
            arr[:, cols.index(name)] = [r[j] for r in rows]
        return cls(data=arr)


def integrate_step(state: PlantState, params: PatientParams, u: float,
                   protocol: MealProtocol, t0: float, ts_control: float,
                   dt_plant: float) -> PlantState:
    """RK4 plant integration over one control period with u held constant."""
    starts, carbs = protocol.arrays()
    ab = protocol.absorption
    g, x, i = kernels.rk4_span(state.g, state.x, state.i,
                               params.s_g, params.p2, params.p3, params.n,
                               params.v, params.g_b, params.i_b, u,
                               starts, carbs, ab.a_g, ab.tau, ab.dist_vol,
                               t0, ts_control, dt_plant)
    if not all(map(math.isfinite, (g, x, i))):
        raise SimulationError(f"non-finite plant state after t={t0}")
    return PlantState(g=g, x=x, i=i)


def cgm_sample(g: float, g_b: float, sigma: float, rng: np.random.Generator) -> float:
    """Absolute CGM reading with unbiased Gaussian noise, no quantization."""
    z = g + g_b
    if sigma > 0:
        z += sigma * rng.normal()
    return z


def run_closed_loop(patient: PatientParams, controller, protocol: MealProtocol,
                    sim_config: SimConfig, ekf_config: est.EkfConfig,
                    initial_state: PlantState = PlantState(),
                    fast: bool | None = None) -> SimTrace:
    """Simulate the closed loop and record the full trace.

    Each control step: sample CGM, EKF predict (with the previously applied
    input) + update, controller step on the estimates, clamp u to [0, u_bar],
    integrate the plant one control period.  Deterministic given the seed.

    ``fast=True`` routes a GSTC controller through the fused kernel (identical
    arithmetic, no per-step Python dispatch); other controllers always use the
    generic loop.
    """
    n = sim_config.n_steps
    noise = _noise_array(sim_config, n)
    if fast is None:
        fast = False
    if fast and not isinstance(controller, GstcController):
        raise ValueError("fast path supports only the GSTC controller")

    if fast:
        return _run_fused(patient, controller, protocol, sim_config,
                          ekf_config, initial_state, noise)
    return _run_generic(patient, controller, protocol, sim_config,
                        ekf_config, initial_state, noise)


def _noise_array(sim_config: SimConfig, n: int) -> np.ndarray:
    rng = np.random.default_rng(sim_config.seed)
    if sim_config.cgm_noise_sigma > 0:
        return sim_config.cgm_noise_sigma * rng.standard_normal(n)
    return np.zeros(n)


def _run_fused(patient, controller, protocol, sim_config, ekf_config,
               initial_state, noise) -> SimTrace:
    cfg = controller.config
    nom = ekf_config.nominal
    starts, carbs = protocol.arrays()
    ab = protocol.absorption
    ekf0 = est.initial_state()
    out = np.empty((sim_config.n_steps, 21))
    status = kernels.run_gstc_loop(
        sim_config.n_steps, sim_config.ts_control, sim_config.dt_plant,
        initial_state.g, initial_state.x, initial_state.i,
        patient.s_g, patient.p2, patient.p3, patient.n, patient.v,
        patient.g_b, patient.i_b,
        nom.s_g, nom.p2, nom.p3, nom.n, nom.v, nom.g_b, nom.i_b,
        ekf_config.q, ekf_config.r, ekf0.x_hat, ekf0.sigma,
        cfg.g_lower, cfg.g_upper, cfg.kappa1, cfg.kappa2, cfg.u_bar,
        cfg.funnel_x.p, cfg.funnel_x.q, cfg.funnel_x.mu,
        cfg.funnel_i.p, cfg.funnel_i.q, cfg.funnel_i.mu,
        starts, carbs, ab.a_g, ab.tau, ab.dist_vol,
        noise, out)
    if status != 0:
        raise SimulationError(f"non-finite state at step {status - 1}")
    return SimTrace(data=out, meal_starts=starts)


def _run_generic(patient, controller, protocol, sim_config, ekf_config,
                 initial_state, noise) -> SimTrace:
    n = sim_config.n_steps
    ts = sim_config.ts_control
    starts, carbs = protocol.arrays()
    ab = protocol.absorption
    out = np.full((n, 21), math.nan)
    controller.reset()
    u_bar = getattr(getattr(controller, "config", None), "u_bar", 144.0)

    state = initial_state
    ekf = est.initial_state()
    u_prev = 0.0
    ctrl_time = 0.0

    for k in range(n):
        t = k * ts
        z = state.g + patient.g_b + noise[k]

        if k > 0:
            ekf = est.predict(ekf, u_prev, ekf_config)
        ekf = est.update(ekf, z, ekf_config)

        tic = time.perf_counter()
        u, diag = controller.step(t, ekf.x_hat[0], ekf.x_hat[1], ekf.x_hat[2], ts)
        ctrl_time += time.perf_counter() - tic
        if not math.isfinite(u):
            raise SimulationError(f"controller returned non-finite u at step {k}")
        u = min(max(u, 0.0), u_bar)

        d = kernels.meal_rate(t, starts, carbs, ab.a_g, ab.tau, ab.dist_vol)
        out[k, 0] = t
        out[k, 1] = state.g
        out[k, 2] = state.g + patient.g_b
        out[k, 3] = z
        out[k, 4] = ekf.x_hat[0]
        out[k, 5] = state.x
        out[k, 6] = ekf.x_hat[1]
        out[k, 7] = state.i
        out[k, 8] = ekf.x_hat[2]
        out[k, 9] = diag.get("x_ref", math.nan)
        out[k, 10] = diag.get("i_ref", math.nan)
        out[k, 11] = diag.get("rho_x", math.nan)
        out[k, 12] = diag.get("rho_i", math.nan)
        out[k, 13] = diag.get("e_g", math.nan)
        out[k, 14] = diag.get("e_x", math.nan)
        out[k, 15] = diag.get("e_i", math.nan)
        out[k, 16] = u
        out[k, 17] = d
        out[k, 18] = ekf.sigma[0, 0]
        out[k, 19] = ekf.sigma[1, 1]
        out[k, 20] = ekf.sigma[2, 2]

        state = integrate_step(state, patient, u, protocol, t, ts,
                               sim_config.dt_plant)
        u_prev = u

    return SimTrace(data=out, mean_step_time_ms=1000.0 * ctrl_time / n,
                    meal_starts=starts)


def tube_violations(trace: SimTrace, g_abs_lower: float = 70.0,
                    g_abs_upper: float = 180.0) -> dict:
    """Runtime check of the safety-tube invariants over a trace.

    Counts steps where absolute glucose leaves [lower, upper] and where the
    X/I tracking errors leave their funnels.  Funnel checks are skipped for
    traces without funnel diagnostics (non-GSTC controllers).
    """
    g_viol = int(np.sum((trace.g_abs < g_abs_lower) | (trace.g_abs > g_abs_upper)))
    res = {"glucose": g_viol}
    if np.all(np.isfinite(trace.rho_x)):
        res["x_funnel"] = int(np.sum(np.abs(trace.x_ref - trace.x_hat) >= trace.rho_x))
        res["i_funnel"] = int(np.sum(np.abs(trace.i_ref - trace.i_hat) >= trace.rho_i))
    res["ok"] = all(v == 0 for k, v in res.items() if k != "ok")
    return res
