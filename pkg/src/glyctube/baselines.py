"""Comparator controllers: PID with a predictive safety clamp, sliding-mode,
and a linear MPC solved by a self-contained projected-gradient QP.

These follow the standard textbook forms; their tunings are config defaults,
not reproduction targets.  All of them conform to the engine's controller
step interface and consume estimates only.
"""

from dataclasses import dataclass, field

import numpy as np

from .patient import PatientParams, nominal_params


@dataclass
class PidCbfConfig:
    kp: float = 0.05
    ki: float = 5e-5
    kd: float = 0.35
    integral_clamp: float = 4000.0   # anti-windup bound on the error integral
    cbf_floor: float = 78.0          # absolute glucose safety floor (mg/dL)
    cbf_horizon: float = 30.0        # prediction time (min)
    target: float = 110.0            # absolute glucose setpoint (mg/dL)
    u_bar: float = 144.0
    nominal: PatientParams = field(default_factory=nominal_params)

    def __post_init__(self):
        if min(self.kp, self.ki, self.kd) < 0:
            raise ValueError("PID gains must be >= 0")
        if self.cbf_floor <= 54:
            raise ValueError("cbf_floor must exceed 54 mg/dL")


def _predict_min_glucose(g, x, i, u, horizon, params: PatientParams) -> float:
    """Euler rollout (1-min substeps, no meal) of absolute glucose under u."""
    h = 1.0
    steps = max(1, int(round(horizon / h)))
    g_min = g + params.g_b
    for _ in range(steps):
        dg = -params.s_g * g - x * (g + params.g_b)
        dx = -params.p2 * x + params.p3 * i
        di = -params.n * (i + params.i_b) + u / params.v
        g += h * dg
        x = max(0.0, x + h * dx)
        i += h * di
        g_min = min(g_min, g + params.g_b)
    return g_min


class PidCbfController:
    name = "pid_cbf"

    def __init__(self, config: PidCbfConfig | None = None):
        self.config = config if config is not None else PidCbfConfig()
        self.reset()

    def reset(self):
        self._integral = 0.0
        self._prev_err = None

    def step(self, t, g_hat, x_hat, i_hat, dt):
        cfg = self.config
        err = (g_hat + cfg.nominal.g_b) - cfg.target
        self._integral = min(max(self._integral + err * dt, -cfg.integral_clamp),
                             cfg.integral_clamp)
        rate = 0.0 if self._prev_err is None else (err - self._prev_err) / dt
        self._prev_err = err

        u_pid = cfg.kp * err + cfg.ki * self._integral + cfg.kd * rate
        u = min(max(u_pid, 0.0), cfg.u_bar)

        # predictive safety layer: shrink u until the glucose forecast clears
        # the floor (clamp-only; never raises the PID command)
        if _predict_min_glucose(g_hat, x_hat, i_hat, u, cfg.cbf_horizon,
                                cfg.nominal) < cfg.cbf_floor:
            lo, hi = 0.0, u
            for _ in range(20):
                mid = 0.5 * (lo + hi)
                if _predict_min_glucose(g_hat, x_hat, i_hat, mid,
                                        cfg.cbf_horizon, cfg.nominal) >= cfg.cbf_floor:
                    lo = mid
                else:
                    hi = mid
            u = lo
        return u, {}


@dataclass
class SmcConfig:
    lambda_: float = 0.05       # sliding-surface slope (1/min)
    eta: float = 25.0           # reaching gain (mU/min)
    boundary_layer: float = 4.0  # saturation width (mg/dL/min units of s)
    target: float = 110.0
    u_bar: float = 144.0

    def __post_init__(self):
        if min(self.lambda_, self.eta, self.boundary_layer) <= 0:
            raise ValueError("SMC parameters must be positive")


class SmcController:
    name = "smc"

    def __init__(self, config: SmcConfig | None = None, g_b: float = 80.0):
        self.config = config if config is not None else SmcConfig()
        self.g_b = g_b
        self.reset()

    def reset(self):
        self._prev_g = None

    def step(self, t, g_hat, x_hat, i_hat, dt):
        cfg = self.config
        g_abs = g_hat + self.g_b
        g_rate = 0.0 if self._prev_g is None else (g_hat - self._prev_g) / dt
        self._prev_g = g_hat
        s = g_rate + cfg.lambda_ * (g_abs - cfg.target)
        sat = min(max(s / cfg.boundary_layer, -1.0), 1.0)
        u = min(max(cfg.eta * sat, 0.0), cfg.u_bar)
        return u, {}


@dataclass
class LmpcConfig:
    horizon: int = 30
    q_weight: float = 1.0
    r_weight: float = 0.05
    target: float = 110.0     # absolute glucose (mg/dL)
    max_iters: int = 200
    step_size: float | None = None  # None -> 1/L from the condensed Hessian
    tol: float = 1e-6
    u_bar: float = 144.0
    nominal: PatientParams = field(default_factory=nominal_params)

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.q_weight <= 0 or self.r_weight <= 0:
            raise ValueError("cost weights must be positive")


def condensed_matrices(config: LmpcConfig, ts: float):
    """Condense the basal-linearized model into glucose-prediction form.

    Returns (M, a_pow, g_base) such that predicted glucose deviations over
    the horizon are g = Phi(x0) + M u, with Phi(x0)[k] = e1' A^(k+1) x0 +
    g_base[k] collecting the affine basal-insulin term.
    """
    p = config.nominal
    n = config.horizon
    a = np.array([[1 - ts * p.s_g, -ts * p.g_b, 0.0],
                  [0.0, 1 - ts * p.p2, ts * p.p3],
                  [0.0, 0.0, 1 - ts * p.n]])
    b = np.array([0.0, 0.0, ts / p.v])
    c = np.array([0.0, 0.0, -ts * p.n * p.i_b])

    a_pow = [np.eye(3)]
    for _ in range(n):
        a_pow.append(a @ a_pow[-1])

    m = np.zeros((n, n))
    g_base = np.zeros(n)
    for k in range(n):  # glucose at step k+1
        acc = np.zeros(3)
        for j in range(k + 1):
            m[k, j] = (a_pow[k - j] @ b)[0]
            acc += a_pow[k - j] @ c
        g_base[k] = acc[0]
    return m, a_pow, g_base


def projected_gradient_qp(m, bias, q_weight, r_weight, u_bar, u0,
                          max_iters, tol, step_size=None):
    """Minimize q||M u + bias||^2 + r||u||^2 over the box [0, u_bar]^N.

    Fixed-step projected gradient with step 1/L by default, which guarantees
    a non-increasing cost.  Returns (u, costs, converged).
    """
    mt_m = m.T @ m
    if step_size is None:
        lip = 2.0 * (q_weight * np.linalg.norm(mt_m, 2) + r_weight)
        step_size = 1.0 / lip
    u = np.clip(u0, 0.0, u_bar)

    def cost(uv):
        res = m @ uv + bias
        return q_weight * res @ res + r_weight * uv @ uv

    costs = [cost(u)]
    converged = False
    for _ in range(max_iters):
        grad = 2.0 * q_weight * (m.T @ (m @ u + bias)) + 2.0 * r_weight * u
        u_new = np.clip(u - step_size * grad, 0.0, u_bar)
        costs.append(cost(u_new))
        if np.abs(u_new - u).max() < tol:
            u = u_new
            converged = True
            break
        u = u_new
    return u, costs, converged


class LmpcController:
    name = "lmpc"

    def __init__(self, config: LmpcConfig | None = None):
        self.config = config if config is not None else LmpcConfig()
        self.reset()

    def reset(self):
        self._warm = None
        self._ts = None
        self._mats = None
        self.last_converged = True

    def _ensure_mats(self, ts):
        if self._mats is None or self._ts != ts:
            self._mats = condensed_matrices(self.config, ts)
            self._ts = ts

    def step(self, t, g_hat, x_hat, i_hat, dt):
        cfg = self.config
        self._ensure_mats(dt)
        m, a_pow, g_base = self._mats
        n = cfg.horizon

        x0 = np.array([g_hat, x_hat, i_hat])
        phi = np.array([(a_pow[k + 1] @ x0)[0] for k in range(n)]) + g_base
        bias = phi + (cfg.nominal.g_b - cfg.target)

        if self._warm is None:
            u0 = np.zeros(n)
        else:
            u0 = np.concatenate([self._warm[1:], self._warm[-1:]])
        u_seq, costs, converged = projected_gradient_qp(
            m, bias, cfg.q_weight, cfg.r_weight, cfg.u_bar, u0,
            cfg.max_iters, cfg.tol, cfg.step_size)
        self._warm = u_seq
        self.last_converged = converged
        return float(u_seq[0]), {"qp_converged": converged,
                                 "qp_cost": costs[-1]}


CONTROLLER_NAMES = ("gstc", "pid_cbf", "smc", "lmpc")
