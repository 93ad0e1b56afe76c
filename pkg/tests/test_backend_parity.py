"""Bit-identical results between the numba and pure-numpy kernel backends."""

import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np

from glyctube import backend_name
from glyctube.engine import SimConfig, run_closed_loop
from glyctube.estimator import EkfConfig
from glyctube.gstc import GstcController
from glyctube.patient import nominal_params
from glyctube.scenarios import three_day_protocol

_WORKER = """
import json, sys
import numpy as np
import glyctube
from glyctube.engine import SimConfig, run_closed_loop
from glyctube.estimator import EkfConfig
from glyctube.gstc import GstcController
from glyctube.patient import nominal_params
from glyctube.scenarios import three_day_protocol

sim = SimConfig(duration=600.0, cgm_noise_sigma=2.0, seed=17)
args = (nominal_params(), GstcController(), three_day_protocol(), sim, EkfConfig())
fused = run_closed_loop(*args, fast=True)
generic = run_closed_loop(*args, fast=False)
np.save(sys.argv[1], fused.data)
print(json.dumps({"backend": glyctube.backend_name(),
                  "paths_identical": bool(np.array_equal(fused.data, generic.data))}))
"""


def _run_backend(tmp_path, disable):
    env = dict(os.environ, GLYCTUBE_DISABLE_NUMBA="1" if disable else "0")
    out = tmp_path / ("numpy.npy" if disable else "numba.npy")
    proc = subprocess.run([sys.executable, "-c", _WORKER, str(out)],
                          env=env, capture_output=True, text=True, check=True,
                          cwd=Path(__file__).resolve().parents[1])
    info = json.loads(proc.stdout.strip().splitlines()[-1])
    return info, np.load(out)


def test_backend_flag_selects_numpy(tmp_path):
    info, _ = _run_backend(tmp_path, disable=True)
    assert info["backend"] == "numpy"


def test_backends_bit_identical(tmp_path):
    info_nb, data_nb = _run_backend(tmp_path, disable=False)
    info_np, data_np = _run_backend(tmp_path, disable=True)
    assert info_nb["backend"] == "numba"
    assert info_nb["paths_identical"]
    assert info_np["paths_identical"]
    assert np.array_equal(data_nb, data_np)


def test_in_process_backend_reports_name():
    assert backend_name() in ("numba", "numpy")


def test_fused_generic_parity_in_process():
    sim = SimConfig(duration=600.0, cgm_noise_sigma=2.0, seed=17)
    args = (nominal_params(), GstcController(), three_day_protocol(), sim,
            EkfConfig())
    fused = run_closed_loop(*args, fast=True)
    generic = run_closed_loop(*args, fast=False)
    assert np.array_equal(fused.data, generic.data)
