"""Numba vs pure-numpy timings for the hot kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--e2e]

Both flavours are imported side by side from ``stlcvx.kernels``; the
``STLCVX_DISABLE_NUMBA`` flag only decides which one the package binds.
``--e2e`` also times one SCvx solve of the keep-out scenario under each
setting of that flag, in fresh interpreters.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from stlcvx import kernels
from stlcvx.plant import GEO_MEAN_MOTION, MU_EARTH, PlantParams


def cases(rng):
    a, b = rng.normal(0, 3, (2, 100_000))
    flow_in = rng.normal(0, 2, 1001)
    soc = rng.normal(0, 1, 4 * 5000)
    idx = np.arange(soc.size).reshape(5000, 4)
    x0 = np.array([-2000.0, 500.0, 200.0, 0.0, 0.0, 0.0])
    acc = rng.normal(0, 1e-3, (100, 3))
    r0 = PlantParams().orbit_radius
    return {
        "smooth_eval   (1e5 pairs, k=0.5)":
            lambda f: f(a, b, 0.5, True),
        "flow_recursion (N=1001, k=0.5)":
            lambda f: f(flow_in, 100, 900, True, False, 0.5),
        "project_soc   (5000 cones, d=4)":
            lambda f: f(soc.copy(), idx),
        "rk4_relative  (100 steps x 10)":
            lambda f: f(x0, acc, 50.0, 10, GEO_MEAN_MOTION, MU_EARTH, r0),
    }


KERNELS = ["smooth_eval", "flow_recursion", "project_soc_group", "rk4_relative"]


def best_time(call, repeat):
    number = 1
    while timeit.timeit(call, number=number) < 0.05:
        number *= 2
    return min(timeit.repeat(call, number=number, repeat=repeat)) / number


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    print(f"{'kernel':<36}{'numpy':>12}{'numba':>12}{'speedup':>10}")
    for (label, run), name in zip(cases(rng).items(), KERNELS):
        slow = getattr(kernels, f"{name}_numpy")
        fast = getattr(kernels, f"{name}_numba")
        run(fast)  # compile outside the timing
        t_np = best_time(lambda: run(slow), repeat)
        t_nb = best_time(lambda: run(fast), repeat)
        print(f"{label:<36}{t_np * 1e3:>10.3f}ms{t_nb * 1e3:>10.3f}ms{t_np / t_nb:>9.1f}x")


E2E = """
import time
from stlcvx import scvx
from stlcvx.plant import PlantParams
p = scvx.Problem("eventually (norm(r) >= 2500)", PlantParams(n_steps=101),
                 [-2000, 500, 200, 0, 0, 0], [0] * 6, scvx.ScvxConfig(kappa=5000.0))
t = time.perf_counter()
traj, trace = scvx.run(p)
print(f"{time.perf_counter() - t:.2f} {len(trace)}")
"""


def bench_e2e():
    print("\nkeep-out scenario, N=101 (wall time incl. JIT warm-up)")
    for flag in ("0", "1"):
        env = dict(os.environ, STLCVX_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", E2E], env=env, check=True,
                             capture_output=True, text=True).stdout.split()
        mode = "numpy" if flag == "1" else "numba"
        print(f"  {mode:<6} {float(out[0]):7.2f} s, {out[1]} iterations")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--e2e", action="store_true")
    args = p.parse_args()
    bench_kernels(args.repeat)
    if args.e2e:
        bench_e2e()


if __name__ == "__main__":
    main()
