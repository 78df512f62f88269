"""The compiled and interpreted kernels must agree bit for bit."""

import json
import os
import subprocess
import sys

import pytest

SCRIPT = r"""
import hashlib, json
from fractions import Fraction
import numpy as np
from fvmc import data_path, _accel
from fvmc.cli import load_mdp
from fvmc.control import RunConfig, run
from fvmc.rng import SeedSpec
from fvmc.stochapprox import FiniteNoise, RmConfig, Schedule, robbins_monro

def digest(a):
    return hashlib.sha256(np.ascontiguousarray(a, dtype=float).tobytes()).hexdigest()

out = {"backend": _accel.backend_name()}
for name, gamma in (("counterexample.json", "2/5"), ("absorbing4.json", None)):
    m = load_mdp(str(data_path(name)), exact=False, gamma=gamma)
    state, trace = run("fva", m, RunConfig(300, stride=100), SeedSpec(7, 1))
    out[name] = [digest(state.q), digest(state.sum_returns), [int(n) for n in state.n_pairs]]
    m = load_mdp(str(data_path(name)), exact=False, gamma=gamma)
    state, trace = run("fva_finite", m, RunConfig(200), SeedSpec(3)) if m.triangle else (None, None)
    if state is not None:
        out[name + ":finite"] = digest(state.q)
for theta in (Schedule.harmonic(2), Schedule.geometric(), Schedule.constant(0.25)):
    path = robbins_monro(RmConfig(theta, FiniteNoise.symmetric(1), 5.0, 5000, seed=4))
    out[theta.kind] = digest(path)
print(json.dumps(out))
"""


def _run(disable):
    env = dict(os.environ)
    env.pop("FVMC_DISABLE_NUMBA", None)
    if disable:
        env["FVMC_DISABLE_NUMBA"] = "1"
    proc = subprocess.run([sys.executable, "-c", SCRIPT], capture_output=True, text=True, env=env, timeout=600)
    assert proc.returncode == 0, proc.stderr
    return json.loads(proc.stdout)


def test_backends_bit_identical():
    pytest.importorskip("numba")
    fast, slow = _run(False), _run(True)
    assert fast.pop("backend") == "numba"
    assert slow.pop("backend") == "python"
    assert fast == slow
