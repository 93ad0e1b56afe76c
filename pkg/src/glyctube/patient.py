"""Bergman minimal-model plant: parameters, uncertainty boxes, meals."""

from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels


@dataclass(frozen=True)
class PatientParams:
    """True physiology of one virtual patient.

    Units: s_g, p2, n in 1/min; p3 in (mU/L)^-1 min^-2; v in L;
    g_b in mg/dL; i_b in mU/L.
    """
    s_g: float
    p2: float
    p3: float
    n: float
    v: float
    g_b: float
    i_b: float

    def __post_init__(self):
        for name in ("s_g", "p2", "p3", "n", "v", "g_b", "i_b"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")

    @property
    def basal_infusion(self) -> float:
        """Infusion rate (mU/min) holding plasma insulin at its basal value."""
        return self.n * self.i_b * self.v


@dataclass(frozen=True)
class ParamBounds:
    """Closed uncertainty intervals for the four uncertain rate parameters."""
    s_g: tuple[float, float]
    p2: tuple[float, float]
    p3: tuple[float, float]
    n: tuple[float, float]

    def __post_init__(self):
        for name in ("s_g", "p2", "p3", "n"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise ValueError(f"{name} bounds must satisfy 0 < lower <= upper")

    @classmethod
    def around(cls, base: PatientParams, frac: float) -> "ParamBounds":
        """Symmetric +/-frac box around a base parameter set."""
        def box(x):
            return (x * (1 - frac), x * (1 + frac))
        return cls(s_g=box(base.s_g), p2=box(base.p2), p3=box(base.p3), n=box(base.n))

    def contains(self, p: PatientParams) -> bool:
        return all(lo <= getattr(p, name) <= hi
                   for name, (lo, hi) in (("s_g", self.s_g), ("p2", self.p2),
                                          ("p3", self.p3), ("n", self.n)))


@dataclass(frozen=True)
class PlantState:
    """Deviation state: glucose (mg/dL), remote action (1/min), insulin (mU/L)."""
    g: float = 0.0
    x: float = 0.0
    i: float = 0.0


@dataclass(frozen=True)
class MealEvent:
    start_time: float  # minutes from scenario start
    carbs: float       # grams

    def __post_init__(self):
        if self.start_time < 0:
            raise ValueError("start_time must be >= 0")
        if self.carbs <= 0:
            raise ValueError("carbs must be > 0")


@dataclass(frozen=True)
class Absorption:
    """Single-compartment rise-and-decay kernel s*exp(-s/tau)/tau^2."""
    a_g: float = 0.8        # bioavailability fraction
    tau: float = 52.0       # time-to-peak constant (min)
    dist_vol: float = 112.0  # glucose distribution volume (dL)

    def __post_init__(self):
        if not (0 < self.a_g <= 1):
            raise ValueError("a_g must be in (0, 1]")
        if self.tau <= 0 or self.dist_vol <= 0:
            raise ValueError("tau and dist_vol must be positive")


@dataclass(frozen=True)
class MealProtocol:
    events: tuple[MealEvent, ...] = ()
    absorption: Absorption = field(default_factory=Absorption)

    def __post_init__(self):
        starts = [e.start_time for e in self.events]
        if starts != sorted(starts):
            raise ValueError("events must be sorted by start_time")

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        starts = np.array([e.start_time for e in self.events], dtype=np.float64)
        carbs = np.array([e.carbs for e in self.events], dtype=np.float64)
        return starts, carbs


def nominal_params(g_b: float = 80.0, i_b: float = 7.0) -> PatientParams:
    """Population-average Bergman parameters with caller-supplied basal pair."""
    return PatientParams(s_g=0.028, p2=0.025, p3=1.3e-5, n=5.0 / 54.0, v=12.0,
                         g_b=g_b, i_b=i_b)


def patient2_params(g_b: float = 80.0, i_b: float = 7.0) -> PatientParams:
    """Insulin-sensitive mismatch patient: nominal with p3 tripled."""
    base = nominal_params(g_b=g_b, i_b=i_b)
    return replace(base, p3=3 * base.p3)


def derivatives(state: PlantState, params: PatientParams,
                u: float, d: float) -> PlantState:
    """Continuous-time state rates for infusion u (mU/min) and meal rate d."""
    dg, dx, di = kernels.plant_rhs(state.g, state.x, state.i,
                                   params.s_g, params.p2, params.p3, params.n,
                                   params.v, params.g_b, params.i_b, u, d)
    return PlantState(g=dg, x=dx, i=di)


def meal_rate(protocol: MealProtocol, t: float) -> float:
    """Glucose appearance rate d(t) in mg/dL/min."""
    starts, carbs = protocol.arrays()
    ab = protocol.absorption
    return kernels.meal_rate(t, starts, carbs, ab.a_g, ab.tau, ab.dist_vol)


def disturbance_bound(protocol: MealProtocol, step: float = 0.1,
                      safety_factor: float = 1.05) -> float:
    """Upper bound on sup_t d(t) by dense sampling with a safety factor."""
    if not protocol.events:
        return 0.0
    ab = protocol.absorption
    starts, carbs = protocol.arrays()
    # the per-event kernel decays after ~tau; 10 tau past the last meal covers the tail
    t_end = starts[-1] + 10.0 * ab.tau
    ts = np.arange(0.0, t_end + step, step)
    rates = np.zeros_like(ts)
    for j in range(starts.size):
        s = ts - starts[j]
        mask = s > 0
        rates[mask] += (1000.0 * carbs[j] * ab.a_g / ab.dist_vol) \
            * s[mask] * np.exp(-s[mask] / ab.tau) / ab.tau ** 2
    return safety_factor * float(rates.max())


@dataclass(frozen=True)
class PerturbationSpec:
    """Uniform perturbation fractions for virtual-patient sampling."""
    rate_frac: float = 0.30   # s_g, p2, p3
    basal_frac: float = 0.10  # g_b, i_b

    def __post_init__(self):
        if not (0 <= self.rate_frac < 1 and 0 <= self.basal_frac < 1):
            raise ValueError("perturbation fractions must be in [0, 1)")


def sample_patient(spec: PerturbationSpec, base: PatientParams,
                   rng: np.random.Generator) -> PatientParams:
    """Draw a virtual patient uniformly within the perturbation box.

    s_g, p2, p3 vary by +/-rate_frac, g_b and i_b by +/-basal_frac;
    n and v stay at their base values.
    """
    def draw(x, frac):
        return x * (1.0 + frac * rng.uniform(-1.0, 1.0))
    return PatientParams(
        s_g=draw(base.s_g, spec.rate_frac),
        p2=draw(base.p2, spec.rate_frac),
        p3=draw(base.p3, spec.rate_frac),
        n=base.n,
        v=base.v,
        g_b=draw(base.g_b, spec.basal_frac),
        i_b=draw(base.i_b, spec.basal_frac),
    )
