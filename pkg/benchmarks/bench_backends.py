"""Benchmark of the compiled accelerator against the numpy fallback.

Times the hot inner kernels (triangular convolution, Volterra forward
substitution, step-history accumulation, componentwise power prox) and one
end-to-end scalar trajectory solve on each backend.

Run:  python benchmarks/bench_backends.py [--steps 4096]
"""

import argparse
import time

import numpy as np

from fraflow._accel import numpy_backend

try:
    from fraflow._accel import _core
except ImportError:
    _core = None


def timeit(fn, repeat=5):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(steps):
    rng = np.random.default_rng(0)
    omega = np.sort(np.abs(rng.standard_normal(steps)))[::-1].copy()
    path = rng.standard_normal(steps + 1)
    vec = rng.standard_normal((steps + 1, 32))
    a = np.abs(rng.standard_normal(4096)) * 3.0

    cases = {
        "conv_right (scalar)": lambda m: m.conv_right(omega, path),
        "conv_right (m=32)": lambda m: m.conv_right(omega, vec),
        "volterra_sn": lambda m: m.volterra_sn(omega * 0.01, 16.0),
        "history sweep": lambda m: [m.l1_history(omega, vec, j) for j in range(1, steps + 1, 8)],
        "power_prox q=4": lambda m: m.power_prox_abs(a, 0.3, 4.0),
    }
    rows = []
    for name, fn in cases.items():
        t_np = timeit(lambda: fn(numpy_backend))
        t_cy = timeit(lambda: fn(_core)) if _core is not None else float("nan")
        rows.append((name, t_np, t_cy))
    return rows


def bench_solve(steps):
    import os

    from fraflow.convex import Quadratic, Space
    from fraflow.kernels import TimeGrid, rl_pair
    from fraflow.solver import ProblemSpec, solve_dc_flow

    def run():
        spec = ProblemSpec(Quadratic(Space(1)), None, rl_pair(0.5), np.array([1.0]), None, TimeGrid(1.0, steps))
        solve_dc_flow(spec)

    return timeit(run, repeat=3)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--steps", type=int, default=4096)
    args = parser.parse_args()

    print(f"kernel benchmarks at N = {args.steps}")
    print(f"{'case':<22}{'numpy [ms]':>12}{'cython [ms]':>13}{'speedup':>9}")
    for name, t_np, t_cy in bench_kernels(args.steps):
        speed = t_np / t_cy if t_cy == t_cy else float("nan")
        print(f"{name:<22}{t_np * 1e3:>12.3f}{t_cy * 1e3:>13.3f}{speed:>9.2f}")

    import fraflow

    print(f"\nend-to-end scalar solve (backend: {fraflow.BACKEND}): {bench_solve(args.steps) * 1e3:.1f} ms")
    if _core is None:
        print("compiled core unavailable; numpy fallback only")


if __name__ == "__main__":
    main()
