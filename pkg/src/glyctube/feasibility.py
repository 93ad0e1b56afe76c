"""The six feasibility conditions: evaluation, margins, gain synthesis."""

import itertools
from dataclasses import dataclass, field

import numpy as np

from .estimator import UncertaintyBounds
from .gstc import PSI_MAX_SLOPE, FunnelSpec, GstcConfig
from .patient import ParamBounds

CONDITIONS = ("FC1a", "FC1b", "FC2a", "FC2b", "FC3a", "FC3b")


@dataclass(frozen=True)
class RefRateBounds:
    """Certified suprema of the reference rates, with the audit breakdown."""
    sup_xref_rate: float  # 1/min^2
    sup_iref_rate: float  # mU/L/min
    breakdown: dict = field(default_factory=dict, compare=False)


def ref_rate_bounds(config: GstcConfig, param_bounds: ParamBounds,
                    d_bar: float, g_b: float,
                    deltas: UncertaintyBounds | None = None) -> RefRateBounds:
    """Chain-rule worst-case bounds on |d/dt X_ref| and |d/dt I_ref|.

    Conservative over-approximations: the X_ref rate uses the worst glucose
    rate inside the safe band; the I_ref rate uses a quotient-rule expansion
    of d/dt(e_X) with the funnel at its steady-state radius.
    """
    dx = deltas.delta_x if deltas is not None else 0.0
    di = deltas.delta_i if deltas is not None else 0.0
    fx = config.funnel_x
    fi = config.funnel_i

    half = 0.5 * (config.g_upper - config.g_lower)
    x_upper = config.kappa1 + fx.p + dx
    sup_g_rate = (param_bounds.s_g[1] * max(abs(config.g_lower), config.g_upper)
                  + x_upper * (config.g_upper + g_b) + d_bar)
    sup_eg_rate = sup_g_rate / half
    sup_xref = config.kappa1 * PSI_MAX_SLOPE * sup_eg_rate

    sup_x_rate = (param_bounds.p3[1] * (config.kappa2 + fi.p + di)
                  + param_bounds.p2[1] * x_upper)
    sup_ex_rate = ((sup_xref + sup_x_rate) / fx.q
                   + fx.p * fx.mu * (fx.p - fx.q) / fx.q ** 2)
    sup_iref = config.kappa2 * PSI_MAX_SLOPE * sup_ex_rate

    return RefRateBounds(
        sup_xref_rate=sup_xref, sup_iref_rate=sup_iref,
        breakdown={"x_upper": x_upper, "sup_g_rate": sup_g_rate,
                   "sup_eg_rate": sup_eg_rate, "sup_x_rate": sup_x_rate,
                   "sup_ex_rate": sup_ex_rate, "psi_max_slope": PSI_MAX_SLOPE})


@dataclass(frozen=True)
class FeasibilityInputs:
    param_bounds: ParamBounds
    d_bar: float
    bounds: UncertaintyBounds
    config: GstcConfig
    i_b: float
    v: float
    g_b: float
    sup_xref_rate: float
    sup_iref_rate: float

    @classmethod
    def build(cls, param_bounds: ParamBounds, d_bar: float,
              bounds: UncertaintyBounds, config: GstcConfig,
              i_b: float, v: float, g_b: float) -> "FeasibilityInputs":
        """Fill the reference-rate suprema from their certified bounds."""
        rr = ref_rate_bounds(config, param_bounds, d_bar, g_b, bounds)
        return cls(param_bounds=param_bounds, d_bar=d_bar, bounds=bounds,
                   config=config, i_b=i_b, v=v, g_b=g_b,
                   sup_xref_rate=rr.sup_xref_rate, sup_iref_rate=rr.sup_iref_rate)


@dataclass(frozen=True)
class FeasibilityReport:
    lhs: dict
    rhs: dict
    margins: dict
    passed: bool
    binding: str

    @property
    def min_margin(self) -> float:
        return min(self.margins.values())

    def rows(self):
        for c in CONDITIONS:
            yield {"condition": c, "lhs": float(self.lhs[c]),
                   "rhs": float(self.rhs[c]),
                   "margin": float(self.margins[c]),
                   "pass": bool(self.margins[c] > 0)}

    def normalized_margins(self) -> dict:
        return {c: self.margins[c] / (abs(self.rhs[c]) + 1.0) for c in CONDITIONS}


def check(inputs: FeasibilityInputs) -> FeasibilityReport:
    """Evaluate FC1a-FC3b; margin = LHS - RHS, pass iff all margins > 0."""
    pb = inputs.param_bounds
    b = inputs.bounds
    cfg = inputs.config
    fx, fi = cfg.funnel_x, cfg.funnel_i

    lhs = {}
    rhs = {}

    lhs["FC1a"] = (cfg.kappa1 - fx.p - b.delta_x) * (cfg.g_upper + inputs.g_b)
    rhs["FC1a"] = inputs.d_bar

    lhs["FC1b"] = -pb.s_g[0] * cfg.g_lower
    rhs["FC1b"] = (fx.p + b.delta_x) * (cfg.g_lower + inputs.g_b)

    rhs_x = inputs.sup_xref_rate + fx.mu * (fx.p - fx.q) + b.ddelta_x
    lhs["FC2a"] = (pb.p3[0] * (cfg.kappa2 - fi.p - b.delta_i)
                   - pb.p2[1] * (cfg.kappa1 - fx.q + b.delta_x))
    rhs["FC2a"] = rhs_x
    lhs["FC2b"] = pb.p2[0] * (fx.q - b.delta_x) - pb.p3[1] * (fi.p + b.delta_i)
    rhs["FC2b"] = rhs_x

    rhs_i = inputs.sup_iref_rate + fi.mu * (fi.p - fi.q) + b.ddelta_i
    lhs["FC3a"] = (cfg.u_bar / inputs.v
                   - pb.n[1] * (cfg.kappa2 - fi.q + b.delta_i + inputs.i_b))
    rhs["FC3a"] = rhs_i
    lhs["FC3b"] = pb.n[0] * (fi.q - b.delta_i + inputs.i_b)
    rhs["FC3b"] = rhs_i

    margins = {c: lhs[c] - rhs[c] for c in CONDITIONS}
    binding = min(CONDITIONS, key=lambda c: margins[c])
    return FeasibilityReport(lhs=lhs, rhs=rhs, margins=margins,
                             passed=all(m > 0 for m in margins.values()),
                             binding=binding)


@dataclass(frozen=True)
class GridSpec:
    """Search ranges for gain synthesis; q radii are fractions of p radii."""
    kappa1: tuple[float, float] = (0.005, 0.2)
    kappa2: tuple[float, float] = (1.0, 500.0)
    p_x: tuple[float, float] = (0.001, 0.05)
    q_x_frac: tuple[float, float] = (0.2, 0.9)
    mu_x: tuple[float, float] = (0.001, 0.2)
    p_i: tuple[float, float] = (0.05, 60.0)
    q_i_frac: tuple[float, float] = (0.2, 0.9)
    mu_i: tuple[float, float] = (0.001, 0.2)
    points: int = 4
    rounds: int = 3

    def ranges(self):
        return (self.kappa1, self.kappa2, self.p_x, self.q_x_frac, self.mu_x,
                self.p_i, self.q_i_frac, self.mu_i)


def _config_from_point(pt, g_lower, g_upper, u_bar) -> GstcConfig | None:
    k1, k2, p_x, qx_f, mu_x, p_i, qi_f, mu_i = pt
    q_x = qx_f * p_x
    q_i = qi_f * p_i
    if not (0 < q_x < p_x < k1 and 0 < q_i < p_i < k2):
        return None
    return GstcConfig(g_lower=g_lower, g_upper=g_upper, kappa1=k1, kappa2=k2,
                      u_bar=u_bar,
                      funnel_x=FunnelSpec(p_x, q_x, mu_x),
                      funnel_i=FunnelSpec(p_i, q_i, mu_i))


def synthesize_gains(param_bounds: ParamBounds, d_bar: float,
                     bounds: UncertaintyBounds,
                     g_lower: float, g_upper: float,
                     i_b: float, v: float, g_b: float, u_bar: float,
                     search: GridSpec = GridSpec()
                     ) -> tuple[GstcConfig, FeasibilityReport]:
    """Coarse-to-fine grid search maximizing the minimum normalized margin.

    Returns the best passing configuration, or the least-violating one with
    a failing report if no grid point satisfies all six conditions.  Ties are
    broken toward smaller kappa2, then smaller kappa1 (less aggressive
    insulin).
    """
    if search.points < 2 or search.rounds < 1:
        raise ValueError("grid spec needs >= 2 points per dim and >= 1 round")

    ranges = list(search.ranges())
    best = None  # (score, kappa2, kappa1, config, report)

    for _ in range(search.rounds):
        axes = [np.linspace(lo, hi, search.points) for lo, hi in ranges]
        for pt in itertools.product(*axes):
            cfg = _config_from_point(pt, g_lower, g_upper, u_bar)
            if cfg is None:
                continue
            rep = check(FeasibilityInputs.build(param_bounds, d_bar, bounds,
                                                cfg, i_b, v, g_b))
            score = min(rep.normalized_margins().values())
            key = (score, -cfg.kappa2, -cfg.kappa1)
            if best is None or key > (best[0], -best[1], -best[2]):
                best = (score, cfg.kappa2, cfg.kappa1, cfg, rep)
        # zoom each axis around the best point found so far
        _, _, _, cfg, _ = best
        center = (cfg.kappa1, cfg.kappa2, cfg.funnel_x.p,
                  cfg.funnel_x.q / cfg.funnel_x.p, cfg.funnel_x.mu,
                  cfg.funnel_i.p, cfg.funnel_i.q / cfg.funnel_i.p,
                  cfg.funnel_i.mu)
        new_ranges = []
        for (lo, hi), c in zip(ranges, center):
            half = (hi - lo) / (search.points - 1)
            new_ranges.append((max(lo, c - half), min(hi, c + half)))
        ranges = new_ranges

    if best is None:
        raise ValueError("empty search grid: no valid configuration candidates")
    return best[3], best[4]
