"""Compare the numba loop kernels with the vectorized numpy kernels.

    python3 benchmarks/bench_kernels.py [--repeat N]

Also times a full 30-EV global-async scenario in a subprocess for each backend
(the environment flag is read at import time).
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from evcoord import kernels, network as nw

SCENARIO = """
import time
from dataclasses import replace
from evcoord.config import load_config, DEFAULT_CONFIG
from evcoord.scenario import run_scenario
from evcoord.kernels import BACKEND
cfg = replace(load_config(DEFAULT_CONFIG).scenario, policy="global-async")
run_scenario(cfg)
t = time.perf_counter()
run_scenario(cfg)
print(BACKEND, time.perf_counter() - t)
"""


def bench(label, fn, repeat):
    fn()  # compile / warm caches
    per_call = min(timeit.repeat(fn, number=repeat, repeat=5)) / repeat
    print(f"  {label:<28s} {per_call * 1e6:10.2f} us")
    return per_call


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()

    f = nw.load_bundled_feeder()
    sol = nw.solve_load_flow(f, *f.base_injections())
    g, b = f.admittance.real.copy(), f.admittance.imag.copy()
    vm, va = sol.v_mag, sol.v_ang
    pq = np.arange(1, f.n_buses, dtype=np.int64)
    rng = np.random.default_rng(0)
    base = rng.uniform(0.85, 1.0, 33)
    slope = -rng.uniform(0.0, 0.01, 33)

    cases = {
        "injections": (kernels._injections_loops, kernels._injections_numpy, (g, b, vm, va)),
        "polar jacobian": (kernels._jacobian_loops, kernels._jacobian_numpy, (g, b, vm, va, pq)),
        "quadratic best response": (kernels._quadratic_br_loops, kernels._quadratic_br_numpy,
                                    (base, slope, 0.9, 1.1, 0.0, 3.3)),
        "crenel best response": (kernels._crenel_br_loops, kernels._crenel_br_numpy,
                                 (base, slope, 0.9, 1.1, 0.0, 3.3, 331)),
    }
    print(f"active backend: {kernels.BACKEND}")
    for name, (jit_fn, np_fn, a) in cases.items():
        print(name)
        t_jit = bench("numba", lambda: jit_fn(*a), args.repeat)
        t_np = bench("numpy", lambda: np_fn(*a), args.repeat)
        print(f"  {'speed-up':<28s} {t_np / t_jit:10.2f} x")

    print("30-EV global-async night (seconds, second run)")
    for flag in ("0", "1"):
        env = dict(os.environ, EVCOORD_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", SCENARIO], env=env, capture_output=True, text=True, check=True)
        backend, seconds = out.stdout.split()
        print(f"  {backend:<28s} {float(seconds):10.3f}")


if __name__ == "__main__":
    main()
