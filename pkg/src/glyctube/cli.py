"""Command-line entry point: simulate, montecarlo, feasibility, synthesize, compare."""

import argparse
import json
import sys
from pathlib import Path

from . import engine, estimator, feasibility, metrics, scenarios
from .baselines import CONTROLLER_NAMES
from .gstc import GstcConfig
from .patient import disturbance_bound

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SAFETY = 2
EXIT_INFEASIBLE = 3


def _parse_override(text: str):
    if "=" not in text:
        raise ValueError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def _apply_overrides(doc: dict, overrides):
    for text in overrides or ():
        key, value = _parse_override(text)
        node = doc
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value


def _load(args) -> scenarios.Scenario:
    path = Path(args.scenario)
    if not path.exists():
        raise FileNotFoundError(f"scenario file not found: {path}")
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise ValueError(f"malformed scenario {path}: line {exc.lineno}: "
                             f"{exc.msg}") from exc
    _apply_overrides(doc, getattr(args, "set", None))
    if getattr(args, "seed", None) is not None:
        doc.setdefault("sim", {})["seed"] = args.seed
        doc.setdefault("scenario", {})["seed"] = args.seed
    if getattr(args, "runs", None) is not None:
        doc.setdefault("scenario", {})["n_runs"] = args.runs
    return scenarios.scenario_from_dict(doc)


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _run_single(sc: scenarios.Scenario):
    controller = sc.make_controller()
    return engine.run_closed_loop(sc.patient, controller, sc.protocol,
                                  sc.sim, sc.ekf), controller


def cmd_simulate(args) -> int:
    sc = _load(args)
    out = _outdir(args)
    trace, controller = _run_single(sc)
    report = metrics.compute_report(trace)
    trace.to_csv(out / "trace.csv", include_sigma=args.sigma_columns)
    with open(out / "report.json", "w") as f:
        json.dump(report.as_dict(), f, indent=2)

    viol = engine.tube_violations(trace)
    u_bar = getattr(controller.config, "u_bar", 144.0)
    u_ok = trace.u.min() >= 0.0 and trace.u.max() <= u_bar
    safe = viol["glucose"] == 0 and u_ok

    summary = [
        f"controller: {controller.name}",
        f"duration: {sc.sim.duration} min, ts={sc.sim.ts_control} min",
        f"TIR [70,180]: {report.tir_70_180:.2f} %",
        f"TBR <70: {report.tbr_54_70 + report.tbr_54:.2f} %",
        f"glucose min/max: {report.min_g:.2f} / {report.max_g:.2f} mg/dL",
        f"max u: {report.max_u:.2f} mU/min (limit {u_bar})",
        f"eA1c: {metrics.estimated_a1c(report.mean_g):.2f} %",
        f"safety bounds held: {safe}",
    ]
    (out / "summary.txt").write_text("\n".join(summary) + "\n")
    print("\n".join(summary))
    return EXIT_OK if safe else EXIT_SAFETY


def cmd_montecarlo(args) -> int:
    sc = _load(args)
    out = _outdir(args)
    summary = scenarios.run_monte_carlo(sc.spec, sc.patient, sc.protocol,
                                        sc.make_controller, sc.sim, sc.ekf)
    per_run = []
    for o in summary.outcomes:
        entry = {"run": o.index, "safe": o.safe, "error": o.error}
        if o.report is not None:
            entry["report"] = o.report.as_dict()
        per_run.append(entry)
    doc = {"scenario_kind": sc.spec.kind, "n_runs": sc.spec.n_runs,
           "aggregate": summary.aggregate, "worst_run": summary.worst_run,
           "n_failed": summary.n_failed, "runs": per_run}
    with open(out / "summary.json", "w") as f:
        json.dump(doc, f, indent=2)

    agg = summary.aggregate
    print(f"{sc.spec.kind}: {sc.spec.n_runs} runs, worst run {summary.worst_run}")
    for name in ("tir_70_180", "titr_70_140", "mean_g", "sd_g", "cv",
                 "peak_postprandial", "max_u"):
        if name in agg:
            print(f"  {name}: {agg[name]['mean']:.2f} +/- {agg[name]['sd']:.2f}")
    return EXIT_OK if summary.all_safe else EXIT_SAFETY


def _feasibility_inputs(sc: scenarios.Scenario, cfg: GstcConfig):
    d_bar = disturbance_bound(sc.protocol)
    sigma = estimator.run_to_stationarity(sc.ekf)
    dg, dx, di = estimator.stationary_bounds(sigma)
    x_upper = cfg.kappa1 + cfg.funnel_x.p + dx
    ddi, ddx, ddg = estimator.derivative_bounds(
        sc.bounds, (dg, dx, di), d_bar, x_upper, cfg.g_upper, sc.patient.g_b)
    bounds = estimator.UncertaintyBounds(delta_g=dg, delta_x=dx, delta_i=di,
                                         ddelta_g=ddg, ddelta_x=ddx, ddelta_i=ddi)
    return d_bar, bounds


def cmd_feasibility(args) -> int:
    sc = _load(args)
    out = _outdir(args)
    if sc.controller.get("type", "gstc") != "gstc":
        print("feasibility analysis requires a gstc controller", file=sys.stderr)
        return EXIT_USAGE
    cfg = sc.make_controller().config
    d_bar, bounds = _feasibility_inputs(sc, cfg)
    inputs = feasibility.FeasibilityInputs.build(
        sc.bounds, d_bar, bounds, cfg, sc.patient.i_b, sc.patient.v,
        sc.patient.g_b)
    report = feasibility.check(inputs)

    rows = list(report.rows())
    with open(out / "feasibility.json", "w") as f:
        json.dump({"conditions": rows, "pass": report.passed,
                   "binding": report.binding}, f, indent=2)
    print(f"{'condition':<6} {'lhs':>14} {'rhs':>14} {'margin':>14} pass")
    for r in rows:
        print(f"{r['condition']:<6} {r['lhs']:>14.6g} {r['rhs']:>14.6g} "
              f"{r['margin']:>14.6g} {str(r['pass']):>5}")
    print(f"overall: {'PASS' if report.passed else 'FAIL'} "
          f"(binding: {report.binding})")
    return EXIT_OK if report.passed else EXIT_INFEASIBLE


def cmd_synthesize(args) -> int:
    sc = _load(args)
    out = _outdir(args)
    base_cfg = sc.make_controller().config if sc.controller.get("type", "gstc") == "gstc" \
        else GstcConfig()
    d_bar, bounds = _feasibility_inputs(sc, base_cfg)
    search = feasibility.GridSpec()
    if sc.search is not None:
        kwargs = {k: tuple(v) if isinstance(v, list) else v
                  for k, v in sc.search.items()}
        search = feasibility.GridSpec(**kwargs)
    cfg, report = feasibility.synthesize_gains(
        sc.bounds, d_bar, bounds, base_cfg.g_lower, base_cfg.g_upper,
        sc.patient.i_b, sc.patient.v, sc.patient.g_b, base_cfg.u_bar,
        search=search)
    doc = {"type": "gstc", "g_lower": cfg.g_lower, "g_upper": cfg.g_upper,
           "kappa1": cfg.kappa1, "kappa2": cfg.kappa2, "u_bar": cfg.u_bar,
           "funnel_x": {"p": cfg.funnel_x.p, "q": cfg.funnel_x.q,
                        "mu": cfg.funnel_x.mu},
           "funnel_i": {"p": cfg.funnel_i.p, "q": cfg.funnel_i.q,
                        "mu": cfg.funnel_i.mu},
           "feasible": report.passed, "binding": report.binding,
           "min_margin": report.min_margin}
    with open(out / "synthesized_controller.json", "w") as f:
        json.dump(doc, f, indent=2)
    print(json.dumps(doc, indent=2))
    return EXIT_OK if report.passed else EXIT_INFEASIBLE


def cmd_compare(args) -> int:
    sc = _load(args)
    out = _outdir(args)
    names = [n.strip() for n in args.controllers.split(",") if n.strip()]
    for n in names:
        if n not in CONTROLLER_NAMES:
            print(f"unknown controller {n!r}; known: {', '.join(CONTROLLER_NAMES)}",
                  file=sys.stderr)
            return EXIT_USAGE

    reports = {}
    for n in names:
        ctrl_doc = sc.controller if sc.controller.get("type", "gstc") == n \
            else {"type": n}
        controller = scenarios.build_controller(ctrl_doc, sc.ekf.nominal)
        trace = engine.run_closed_loop(sc.patient, controller, sc.protocol,
                                       sc.sim, sc.ekf)
        trace.to_csv(out / f"trace_{n}.csv")
        reports[n] = metrics.compute_report(trace)

    table = metrics.format_table(reports)
    (out / "comparison.txt").write_text(table + "\n")
    with open(out / "comparison.json", "w") as f:
        json.dump({n: r.as_dict() for n, r in reports.items()}, f, indent=2)
    print(table)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glyctube",
        description="Closed-loop insulin-delivery simulation and analysis")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("scenario", help="scenario JSON file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a scenario field (dotted key)")

    p = sub.add_parser("simulate", help="run one closed loop")
    common(p)
    p.add_argument("--sigma-columns", action="store_true",
                   help="append covariance diagnostics to the trace CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("montecarlo", help="run a Monte Carlo batch")
    common(p)
    p.add_argument("--runs", type=int, default=None)
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("feasibility", help="evaluate the six feasibility margins")
    common(p)
    p.set_defaults(func=cmd_feasibility)

    p = sub.add_parser("synthesize", help="search for a passing controller config")
    common(p)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("compare", help="run several controllers on one scenario")
    common(p)
    p.add_argument("--controllers", default="gstc,pid_cbf,smc,lmpc")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
