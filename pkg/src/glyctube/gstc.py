"""Glycemic Safety Tube controller: bounded transformation, funnels, cascade."""

import math
from dataclasses import dataclass, field

from . import kernels
from .kernels import PSI_MAX_SLOPE


def psi(s: float) -> float:
    """Bounded transformation: cubic smoothstep, 0 below 0 and 1 above 1."""
    return kernels.psi(s)


@dataclass(frozen=True)
class FunnelSpec:
    """Exponential tube rho(t) = exp(-mu t)(p - q) + q."""
    p: float   # initial radius
    q: float   # steady-state radius
    mu: float  # decay rate (1/min)

    def __post_init__(self):
        if not (0 < self.q < self.p):
            raise ValueError("funnel requires 0 < q < p")
        if self.mu <= 0:
            raise ValueError("mu must be positive")

    def radius(self, t: float) -> tuple[float, float]:
        """(rho(t), rho_dot(t))."""
        return kernels.funnel(self.p, self.q, self.mu, t)


def funnel_radius(spec: FunnelSpec, t: float) -> tuple[float, float]:
    return spec.radius(t)


@dataclass(frozen=True)
class GstcConfig:
    """Gains, funnels and bounds of the three-stage cascade.

    Glucose bounds are deviations from basal: the clinical band [70, 180]
    mg/dL with G_b = 80 gives g_lower = -10, g_upper = 100.  The default
    gains are the shipped nominal tuning; the feasibility module can
    re-synthesize them for other scenarios.
    """
    g_lower: float = -10.0
    g_upper: float = 100.0
    kappa1: float = 0.04   # remote-action gain (1/min)
    kappa2: float = 60.0   # plasma-insulin gain (mU/L)
    u_bar: float = 144.0   # pump limit (mU/min)
    funnel_x: FunnelSpec = field(default_factory=lambda: FunnelSpec(0.035, 0.005, 0.05))
    funnel_i: FunnelSpec = field(default_factory=lambda: FunnelSpec(55.0, 5.0, 0.05))

    def __post_init__(self):
        if not (self.g_lower < 0 < self.g_upper):
            raise ValueError("need g_lower < 0 < g_upper")
        if self.kappa1 <= self.funnel_x.p:
            raise ValueError("kappa1 must exceed the X-funnel initial radius")
        if self.kappa2 <= self.funnel_i.p:
            raise ValueError("kappa2 must exceed the I-funnel initial radius")
        if self.u_bar <= 0:
            raise ValueError("u_bar must be positive")


def glucose_error(g_est: float, g_lower: float, g_upper: float) -> float:
    """Normalize glucose deviation onto [-1, 1] over the safe band."""
    if g_upper <= g_lower:
        raise ValueError("g_upper must exceed g_lower")
    mid = 0.5 * (g_upper + g_lower)
    half = 0.5 * (g_upper - g_lower)
    return (g_est - mid) / half


def stage1_x_ref(e_g: float, kappa1: float) -> float:
    return kappa1 * psi(e_g)


def stage2_i_ref(x_ref: float, x_hat: float, funnel_x: FunnelSpec,
                 t: float, kappa2: float) -> tuple[float, float]:
    rho_x, _ = funnel_x.radius(t)
    e_x = (x_ref - x_hat) / rho_x
    return kappa2 * psi(e_x), e_x


def stage3_control(i_ref: float, i_hat: float, funnel_i: FunnelSpec,
                   t: float, u_bar: float) -> tuple[float, float]:
    rho_i, _ = funnel_i.radius(t)
    e_i = (i_ref - i_hat) / rho_i
    return u_bar * psi(e_i), e_i


def gstc_step(estimates: tuple[float, float, float], t: float,
              config: GstcConfig) -> tuple[float, dict]:
    """Full cascade: (g_hat, x_hat, i_hat) at time t -> (u, diagnostics)."""
    g_hat, x_hat, i_hat = estimates
    if not all(map(math.isfinite, (g_hat, x_hat, i_hat))):
        raise ValueError(f"non-finite estimate at t={t}: {estimates}")
    u, e_g, e_x, e_i, x_ref, i_ref, rho_x, rho_i = kernels.gstc_core(
        g_hat, x_hat, i_hat, t,
        config.g_lower, config.g_upper, config.kappa1, config.kappa2,
        config.u_bar,
        config.funnel_x.p, config.funnel_x.q, config.funnel_x.mu,
        config.funnel_i.p, config.funnel_i.q, config.funnel_i.mu)
    return u, {"e_g": e_g, "e_x": e_x, "e_i": e_i,
               "x_ref": x_ref, "i_ref": i_ref,
               "rho_x": rho_x, "rho_i": rho_i}


class GstcController:
    """Stateless controller object conforming to the engine step interface."""

    name = "gstc"

    def __init__(self, config: GstcConfig | None = None):
        self.config = config if config is not None else GstcConfig()

    def reset(self):
        pass

    def step(self, t: float, g_hat: float, x_hat: float, i_hat: float,
             dt: float) -> tuple[float, dict]:
        return gstc_step((g_hat, x_hat, i_hat), t, self.config)


__all__ = ["psi", "PSI_MAX_SLOPE", "FunnelSpec", "GstcConfig", "glucose_error",
           "stage1_x_ref", "stage2_i_ref", "stage3_control", "gstc_step",
           "funnel_radius", "GstcController"]
