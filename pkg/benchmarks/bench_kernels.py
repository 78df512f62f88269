"""Time the hot kernels under numba and under the pure-Python fallback.

Each backend runs in its own interpreter, since the switch is read at import
time. Usage::

    python benchmarks/bench_kernels.py [--episodes 20000] [--steps 200000]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
from fvmc import _accel, data_path
from fvmc.cli import load_mdp
from fvmc.control import RunConfig, run
from fvmc.rng import SeedSpec
from fvmc.stochapprox import FiniteNoise, RmConfig, Schedule, robbins_monro

episodes, steps = int(sys.argv[1]), int(sys.argv[2])
m = load_mdp(str(data_path("absorbing4.json")), exact=False)

def timed(fn):
    fn(small=True)  # warm-up, includes JIT compilation
    t0 = time.perf_counter()
    fn(small=False)
    return time.perf_counter() - t0

def fva(small):
    run("fva", m, RunConfig(10 if small else episodes, stride=10**9), SeedSpec(1))

def rm(small):
    robbins_monro(RmConfig(Schedule.harmonic(2), FiniteNoise.symmetric(1), 5.0, 10 if small else steps))

print(json.dumps({"backend": _accel.backend_name(), "fva_batch": timed(fva), "robbins_monro_path": timed(rm)}))
"""


def measure(disable, episodes, steps):
    env = dict(os.environ)
    env.pop("FVMC_DISABLE_NUMBA", None)
    if disable:
        env["FVMC_DISABLE_NUMBA"] = "1"
    out = subprocess.run(
        [sys.executable, "-c", WORKER, str(episodes), str(steps)], env=env, capture_output=True, text=True, check=True
    )
    return json.loads(out.stdout)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--episodes", type=int, default=20_000)
    ap.add_argument("--steps", type=int, default=200_000)
    args = ap.parse_args()
    fast = measure(False, args.episodes, args.steps)
    slow = measure(True, args.episodes, args.steps)
    print(f"{'kernel':<22}{fast['backend']:>10}{slow['backend']:>10}{'speedup':>10}")
    for name, size in (("fva_batch", f"{args.episodes} ep"), ("robbins_monro_path", f"{args.steps} st")):
        print(f"{name:<22}{fast[name]:>9.3f}s{slow[name]:>9.3f}s{slow[name] / fast[name]:>9.1f}x   ({size})")


if __name__ == "__main__":
    main()
