"""Backend benchmark: numba-compiled kernels vs the pure-numpy fallback.

Runs the same 72-hour closed loop in a subprocess per backend (the backend
is frozen at import time by GLYCTUBE_DISABLE_NUMBA, so each measurement
needs a fresh interpreter) and prints wall times plus the fused/generic
split.  Usage::

    python -m glyctube.benchmark [--duration MIN] [--repeats N]
"""

import argparse
import json
import os
import subprocess
import sys

_WORKER = r"""
import json, sys, time
import glyctube
from glyctube.engine import SimConfig, run_closed_loop
from glyctube.estimator import EkfConfig
from glyctube.gstc import GstcController
from glyctube.patient import nominal_params
from glyctube.scenarios import three_day_protocol

duration = float(sys.argv[1])
repeats = int(sys.argv[2])

patient = nominal_params()
protocol = three_day_protocol()
sim = SimConfig(duration=duration, ts_control=1.0, dt_plant=0.1, seed=0)
ekf = EkfConfig()

# warm-up: trigger any JIT compilation outside the timed region
warm = SimConfig(duration=10.0, ts_control=1.0, dt_plant=0.1, seed=0)
run_closed_loop(patient, GstcController(), protocol, warm, ekf, fast=True)
run_closed_loop(patient, GstcController(), protocol, warm, ekf, fast=False)

out = {"backend": glyctube.backend_name(), "n_steps": sim.n_steps}
for label, fast in (("fused", True), ("generic", False)):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        trace = run_closed_loop(patient, GstcController(), protocol, sim, ekf,
                                fast=fast)
        best = min(best, time.perf_counter() - t0)
    out[label + "_s"] = best
    out[label + "_us_per_step"] = 1e6 * best / sim.n_steps
    out["checksum_" + label] = float(trace.g_abs.sum())
print(json.dumps(out))
"""


def run_backend(disable_numba: bool, duration: float, repeats: int) -> dict:
    env = dict(os.environ, GLYCTUBE_DISABLE_NUMBA="1" if disable_numba else "0")
    proc = subprocess.run([sys.executable, "-c", _WORKER,
                           str(duration), str(repeats)],
                          env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="glyctube.benchmark",
        description="Compare the numba and pure-numpy kernel backends")
    parser.add_argument("--duration", type=float, default=4320.0,
                        help="simulated minutes per run (default 72 h)")
    parser.add_argument("--repeats", type=int, default=3,
                        help="timing repeats, best-of (default 3)")
    args = parser.parse_args(argv)

    results = [run_backend(False, args.duration, args.repeats),
               run_backend(True, args.duration, args.repeats)]

    print(f"{'backend':<8} {'path':<8} {'wall [s]':>10} {'us/step':>10}")
    for res in results:
        for path in ("fused", "generic"):
            print(f"{res['backend']:<8} {path:<8} "
                  f"{res[path + '_s']:>10.4f} "
                  f"{res[path + '_us_per_step']:>10.2f}")
    same = all(results[0]["checksum_" + p] == results[1]["checksum_" + p]
               for p in ("fused", "generic"))
    print(f"traces identical across backends: {same}")
    if results[1]["fused_s"] > 0:
        print(f"numba speedup (fused): "
              f"{results[1]['fused_s'] / results[0]['fused_s']:.1f}x")
    return 0 if same else 1


if __name__ == "__main__":
    sys.exit(main())
