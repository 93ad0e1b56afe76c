"""Meal protocols, uncertainty scenarios and Monte Carlo batch execution."""

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import engine, metrics
from .baselines import (LmpcConfig, LmpcController, PidCbfConfig,
                        PidCbfController, SmcConfig, SmcController)
from .estimator import EkfConfig
from .gstc import FunnelSpec, GstcConfig, GstcController
from .patient import (Absorption, MealEvent, MealProtocol, ParamBounds,
                      PatientParams, PerturbationSpec, nominal_params,
                      sample_patient)

SCENARIO_KINDS = ("nominal", "mc_parameters", "mc_meals", "mc_combined")

# three-day clock: day 1 regular, day 2 busy with an afternoon snack,
# day 3 late dinner
THREE_DAY_MEALS = (
    (480.0, 50.0), (780.0, 70.0), (1140.0, 40.0),              # day 1
    (1920.0, 50.0), (2190.0, 65.0), (2400.0, 25.0), (2610.0, 45.0),  # day 2
    (3360.0, 55.0), (3660.0, 70.0), (4140.0, 50.0),            # day 3
)


def three_day_protocol(absorption: Absorption | None = None) -> MealProtocol:
    """The 72-hour, 10-meal benchmark protocol."""
    events = tuple(MealEvent(start_time=t, carbs=c) for t, c in THREE_DAY_MEALS)
    return MealProtocol(events=events,
                        absorption=absorption if absorption is not None else Absorption())


@dataclass(frozen=True)
class Perturbations:
    param_frac: float = 0.30
    basal_frac: float = 0.10
    meal_time_min: float = 60.0
    meal_carbs_g: float = 15.0

    def __post_init__(self):
        if min(self.param_frac, self.basal_frac,
               self.meal_time_min, self.meal_carbs_g) < 0:
            raise ValueError("perturbation fields must be non-negative")


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str = "nominal"
    n_runs: int = 1
    perturbations: Perturbations = field(default_factory=Perturbations)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")


MIN_CARBS = 5.0  # grams; perturbed meals are floored here


def perturb_protocol(base: MealProtocol, spec: Perturbations,
                     rng: np.random.Generator) -> MealProtocol:
    """Uniform jitter of meal times and carb content within the spec ranges."""
    events = []
    for e in base.events:
        t = max(0.0, e.start_time + spec.meal_time_min * rng.uniform(-1.0, 1.0))
        c = max(MIN_CARBS, e.carbs + spec.meal_carbs_g * rng.uniform(-1.0, 1.0))
        events.append((t, c))
    events.sort()
    return MealProtocol(events=tuple(MealEvent(start_time=t, carbs=c)
                                     for t, c in events),
                        absorption=base.absorption)


@dataclass
class RunOutcome:
    index: int
    report: metrics.GlycemicReport | None
    safe: bool
    error: str | None = None


@dataclass
class MonteCarloSummary:
    aggregate: dict
    outcomes: list[RunOutcome]
    worst_run: int
    n_failed: int

    @property
    def all_safe(self) -> bool:
        return all(o.safe for o in self.outcomes)


def derive_seeds(root_seed: int, n_runs: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(root_seed).spawn(n_runs)


def _single_run(index, child, spec, base_patient, base_protocol, controller_factory,
                sim_config, ekf_config):
    rng = np.random.default_rng(child)
    patient = base_patient
    protocol = base_protocol
    if spec.kind in ("mc_parameters", "mc_combined"):
        patient = sample_patient(
            PerturbationSpec(rate_frac=spec.perturbations.param_frac,
                             basal_frac=spec.perturbations.basal_frac),
            base_patient, rng)
    if spec.kind in ("mc_meals", "mc_combined"):
        protocol = perturb_protocol(base_protocol, spec.perturbations, rng)

    run_sim = replace(sim_config,
                      seed=int(child.generate_state(1, np.uint64)[0]))
    controller = controller_factory()
    try:
        trace = engine.run_closed_loop(
            patient, controller, protocol, run_sim, ekf_config,
            fast=isinstance(controller, GstcController))
    except engine.SimulationError as exc:
        return RunOutcome(index=index, report=None, safe=False, error=str(exc))
    report = metrics.compute_report(trace)
    u_bar = getattr(controller.config, "u_bar", 144.0)
    safe = (report.tir_70_180 == 100.0
            and float(trace.u.max()) <= u_bar and float(trace.u.min()) >= 0.0)
    return RunOutcome(index=index, report=report, safe=safe)


def run_monte_carlo(spec: ScenarioSpec, base_patient: PatientParams,
                    base_protocol: MealProtocol, controller_factory,
                    sim_config: engine.SimConfig,
                    ekf_config: EkfConfig) -> MonteCarloSummary:
    """Execute n_runs independent closed loops and aggregate their reports.

    Seeds derive deterministically from the scenario seed by run index; a
    single-run abort is recorded and the batch continues.  Parallelism is
    capped by the GLYCTUBE_THREADS environment variable (default 1).
    """
    children = derive_seeds(spec.seed, spec.n_runs)
    jobs = [(i, children[i]) for i in range(spec.n_runs)]

    def work(job):
        i, child = job
        return _single_run(i, child, spec, base_patient, base_protocol,
                           controller_factory, sim_config, ekf_config)

    threads = int(os.environ.get("GLYCTUBE_THREADS", "1"))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(work, jobs))
    else:
        outcomes = [work(j) for j in jobs]
    outcomes.sort(key=lambda o: o.index)

    reports = [o.report for o in outcomes if o.report is not None]
    agg = metrics.aggregate(reports) if reports else {"n": 0}
    worst = min(outcomes,
                key=lambda o: (o.report.tir_70_180, -o.report.max_g)
                if o.report is not None else (-1.0, 0.0))
    return MonteCarloSummary(aggregate=agg, outcomes=outcomes,
                             worst_run=worst.index,
                             n_failed=sum(o.report is None for o in outcomes))


# --- scenario file schema -------------------------------------------------

@dataclass
class Scenario:
    """Fully-resolved scenario: everything one batch needs to execute."""
    patient: PatientParams
    bounds: ParamBounds
    protocol: MealProtocol
    controller: dict            # {"type": name, **config fields}
    ekf: EkfConfig
    sim: engine.SimConfig
    spec: ScenarioSpec
    search: dict | None = None  # optional gain-synthesis grid ranges

    def make_controller(self):
        return build_controller(self.controller, self.ekf.nominal)


def build_controller(cfg: dict, nominal: PatientParams):
    kind = cfg.get("type", "gstc")
    kwargs = {k: v for k, v in cfg.items() if k != "type"}
    if kind == "gstc":
        for key in ("funnel_x", "funnel_i"):
            if key in kwargs and isinstance(kwargs[key], dict):
                kwargs[key] = FunnelSpec(**kwargs[key])
        return GstcController(GstcConfig(**kwargs))
    if kind == "pid_cbf":
        return PidCbfController(PidCbfConfig(nominal=nominal, **kwargs))
    if kind == "smc":
        return SmcController(SmcConfig(**kwargs), g_b=nominal.g_b)
    if kind == "lmpc":
        return LmpcController(LmpcConfig(nominal=nominal, **kwargs))
    raise ValueError(f"unknown controller type {kind!r}; "
                     f"known: gstc, pid_cbf, smc, lmpc")


def scenario_to_dict(sc: Scenario) -> dict:
    doc = {
        "patient": asdict(sc.patient),
        "bounds": {"s_g": list(sc.bounds.s_g), "p2": list(sc.bounds.p2),
                   "p3": list(sc.bounds.p3), "n": list(sc.bounds.n)},
        "protocol": {
            "events": [{"start_time": e.start_time, "carbs": e.carbs}
                       for e in sc.protocol.events],
            "absorption": asdict(sc.protocol.absorption),
        },
        "controller": sc.controller,
        "estimator": {"q_diag": list(np.diag(sc.ekf.q)), "r": sc.ekf.r},
        "sim": asdict(sc.sim),
        "scenario": {"kind": sc.spec.kind, "n_runs": sc.spec.n_runs,
                     "seed": sc.spec.seed,
                     "perturbations": asdict(sc.spec.perturbations)},
    }
    if sc.search is not None:
        doc["search"] = sc.search
    return doc


def scenario_from_dict(doc: dict) -> Scenario:
    patient = PatientParams(**doc["patient"])

    bdoc = doc.get("bounds", {"frac": 0.30})
    if "frac" in bdoc:
        bounds = ParamBounds.around(patient, bdoc["frac"])
    else:
        bounds = ParamBounds(s_g=tuple(bdoc["s_g"]), p2=tuple(bdoc["p2"]),
                             p3=tuple(bdoc["p3"]), n=tuple(bdoc["n"]))

    pdoc = doc.get("protocol", {})
    absorption = Absorption(**pdoc.get("absorption", {}))
    events = tuple(MealEvent(**e) for e in pdoc.get("events", ()))
    protocol = MealProtocol(events=events, absorption=absorption)

    edoc = doc.get("estimator", {})
    ekf = EkfConfig(q=np.diag(edoc.get("q_diag", [1.0, 1e-8, 0.1])),
                    r=edoc.get("r", 4.0),
                    ts=doc.get("sim", {}).get("ts_control", 1.0),
                    nominal=nominal_params(g_b=patient.g_b, i_b=patient.i_b)
                    if edoc.get("nominal") is None
                    else PatientParams(**edoc["nominal"]))

    sim = engine.SimConfig(**doc.get("sim", {}))

    sdoc = doc.get("scenario", {})
    pert = Perturbations(**sdoc.get("perturbations", {}))
    spec = ScenarioSpec(kind=sdoc.get("kind", "nominal"),
                        n_runs=sdoc.get("n_runs", 1),
                        perturbations=pert, seed=sdoc.get("seed", 0))

    return Scenario(patient=patient, bounds=bounds, protocol=protocol,
                    controller=doc.get("controller", {"type": "gstc"}),
                    ekf=ekf, sim=sim, spec=spec,
                    search=doc.get("search"))


def load_scenario(path) -> Scenario:
    with open(path) as f:
        doc = json.load(f)
    return scenario_from_dict(doc)


def save_scenario(sc: Scenario, path):
    with open(path, "w") as f:
        json.dump(scenario_to_dict(sc), f, indent=2)
        f.write("\n")
