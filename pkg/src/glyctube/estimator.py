"""Extended Kalman filter on the Euler-discretized Bergman model.

The filter runs with nominal (population-average) parameters, never sees the
meal signal, and uses a Joseph-form measurement update.  Its stationary
covariance supplies the 3-sigma estimation bounds consumed by the feasibility
conditions.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .patient import ParamBounds, PatientParams, nominal_params


class CovarianceError(RuntimeError):
    """Raised when the innovation variance collapses or Sigma fails to settle."""


def default_q() -> np.ndarray:
    # state magnitudes differ by ~5 orders; diagonal scaled to squared
    # typical per-step increments
    return np.diag([1.0, 1e-8, 0.1])


@dataclass
class EkfConfig:
    q: np.ndarray = field(default_factory=default_q)
    r: float = 4.0  # (mg/dL)^2, sigma_cgm = 2 default
    ts: float = 1.0  # min
    nominal: PatientParams = field(default_factory=nominal_params)

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64)
        if self.q.shape != (3, 3):
            raise ValueError("q must be 3x3")
        if not np.allclose(self.q, self.q.T):
            raise ValueError("q must be symmetric")
        if np.linalg.eigvalsh(self.q).min() < -1e-12:
            raise ValueError("q must be PSD")
        if self.r <= 0:
            raise ValueError("r must be positive")


@dataclass
class EkfState:
    x_hat: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.x_hat = np.asarray(self.x_hat, dtype=np.float64).reshape(3)
        self.sigma = np.asarray(self.sigma, dtype=np.float64).reshape(3, 3)

    def validate(self):
        if not np.allclose(self.sigma, self.sigma.T, atol=1e-9):
            raise ValueError("sigma must be symmetric")
        if np.linalg.eigvalsh(self.sigma).min() < -1e-12:
            raise ValueError("sigma must be PSD")


def initial_state(sigma0_diag=(25.0, 1e-4, 25.0)) -> EkfState:
    return EkfState(x_hat=np.zeros(3), sigma=np.diag(sigma0_diag))


def predict(state: EkfState, u: float, config: EkfConfig) -> EkfState:
    """A-priori step: Euler model propagation, Sigma- = F Sigma F' + Q."""
    p = config.nominal
    xh, sig = kernels.ekf_predict(state.x_hat, state.sigma, u, config.ts,
                                  p.s_g, p.p2, p.p3, p.n, p.v, p.g_b, p.i_b,
                                  config.q)
    return EkfState(x_hat=xh, sigma=sig)


def update(state: EkfState, z: float, config: EkfConfig) -> EkfState:
    """Joseph-form fusion of an absolute CGM reading."""
    xh, sig, s = kernels.ekf_update(state.x_hat, state.sigma, z,
                                    config.nominal.g_b, config.r)
    if s <= 0:
        raise CovarianceError(f"innovation variance {s} <= 0 (covariance corrupted)")
    return EkfState(x_hat=xh, sigma=sig)


def run_to_stationarity(config: EkfConfig, u: float | None = None,
                        max_steps: int = 100_000,
                        tol: float = 1e-10, window: int = 100) -> np.ndarray:
    """Iterate predict/update at the basal operating point until Sigma settles.

    Convergence requires the max-norm step change to stay below ``tol`` for
    ``window`` consecutive steps.  The Jacobian is state-dependent, so the
    filter is pinned to the basal trajectory (z = G_b, basal infusion) and
    stationarity is approximate.
    """
    if u is None:
        u = config.nominal.basal_infusion
    state = initial_state()
    quiet = 0
    prev = state.sigma.copy()
    for _ in range(max_steps):
        state = update(predict(state, u, config), config.nominal.g_b, config)
        delta = np.abs(state.sigma - prev).max()
        prev = state.sigma.copy()
        quiet = quiet + 1 if delta < tol else 0
        if quiet >= window:
            return state.sigma
    raise CovarianceError(
        f"covariance did not settle within {max_steps} steps; last Sigma:\n{prev}")


def stationary_bounds(converged_sigma: np.ndarray) -> tuple[float, float, float]:
    """3-sigma bounds (delta_g, delta_x, delta_i) from a converged covariance."""
    s = np.asarray(converged_sigma, dtype=np.float64)
    if not np.allclose(s, s.T, atol=1e-9):
        raise ValueError("covariance must be symmetric")
    if np.linalg.eigvalsh(s).min() < -1e-12:
        raise ValueError("covariance must be PSD")
    d = np.sqrt(np.clip(np.diag(s), 0.0, None))
    return 3.0 * d[0], 3.0 * d[1], 3.0 * d[2]


@dataclass(frozen=True)
class UncertaintyBounds:
    """Certified estimation bounds and their worst-case rates."""
    delta_g: float
    delta_x: float
    delta_i: float
    ddelta_g: float = 0.0
    ddelta_x: float = 0.0
    ddelta_i: float = 0.0

    def __post_init__(self):
        for name in ("delta_g", "delta_x", "delta_i",
                     "ddelta_g", "ddelta_x", "ddelta_i"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def derivative_bounds(param_bounds: ParamBounds,
                      deltas: tuple[float, float, float],
                      d_bar: float, x_upper: float,
                      g_upper_abs_excursion: float,
                      g_b: float) -> tuple[float, float, float]:
    """Worst-case rates (ddelta_i, ddelta_x, ddelta_g) of the error bounds."""
    delta_g, delta_x, delta_i = deltas
    n_hi = param_bounds.n[1]
    p2_hi = param_bounds.p2[1]
    p3_hi = param_bounds.p3[1]
    sg_hi = param_bounds.s_g[1]

    ddelta_i = n_hi * delta_i
    ddelta_x = p3_hi * delta_i + p2_hi * delta_x
    ddelta_g = (sg_hi + x_upper) * delta_g + (g_upper_abs_excursion + g_b) * delta_x + d_bar
    return ddelta_i, ddelta_x, ddelta_g


def certified_bounds(config: EkfConfig, param_bounds: ParamBounds,
                     d_bar: float, x_upper: float,
                     g_upper: float) -> UncertaintyBounds:
    """Full pipeline: stationary 3-sigma bounds plus their derivative bounds."""
    sigma = run_to_stationarity(config)
    delta_g, delta_x, delta_i = stationary_bounds(sigma)
    ddelta_i, ddelta_x, ddelta_g = derivative_bounds(
        param_bounds, (delta_g, delta_x, delta_i), d_bar, x_upper,
        g_upper, config.nominal.g_b)
    return UncertaintyBounds(delta_g=delta_g, delta_x=delta_x, delta_i=delta_i,
                             ddelta_g=ddelta_g, ddelta_x=ddelta_x, ddelta_i=ddelta_i)
