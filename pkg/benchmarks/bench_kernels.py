#!/usr/bin/env python3
"""Benchmark the compiled calibration kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeats 2000]

Reports per-call latency of the direct and baseline solvers at several crowd
sizes for both backends, plus the wall time of a small Monte Carlo sweep run
through each backend end to end.
"""

import argparse
import timeit

import numpy as np

from posedist import _backend, sim
from posedist.baseline import baseline_from_arrays
from posedist.solver import calibrate_from_arrays


def measurements(person_count, seed=0, noise=0.5):
    rng = np.random.Generator(np.random.PCG64(seed))
    config = sim.SceneConfig(person_count=person_count, noise_std=noise, rng_seed=seed)
    scene = sim.sample_scene(config, rng)
    return sim.project_scene_arrays(scene, noise, None, rng)


def time_call(fn, repeats):
    best = min(timeit.repeat(fn, number=repeats, repeat=3))
    return best / repeats


def bench_calls(repeats):
    print(f"{'solver':<10} {'people':>6} {'python':>12} {'native':>12} {'speedup':>9}")
    for person_count in (3, 10, 30, 100):
        reps = max(10, repeats // person_count)
        top, bot = measurements(person_count)
        for name, fn in (("direct", calibrate_from_arrays), ("baseline", baseline_from_arrays)):
            t_py = time_call(lambda: fn(top, bot, 1.7, backend="python"), reps)
            t_na = time_call(lambda: fn(top, bot, 1.7, backend="native"), reps)
            print(
                f"{name:<10} {person_count:>6} {t_py * 1e6:>10.1f}us {t_na * 1e6:>10.1f}us "
                f"{t_py / t_na:>8.1f}x"
            )


def bench_monte_carlo(trials=300):
    print(f"\nMonte Carlo sweep ({trials} trials x 3 noise levels, both solvers):")
    for backend in ("python", "native"):
        def run():
            for idx, noise in enumerate((0.2, 1.0, 5.0)):
                config = sim.SceneConfig(noise_std=noise, rng_seed=1000 + idx)
                for seq in np.random.SeedSequence(config.rng_seed).spawn(trials):
                    rng = np.random.Generator(np.random.PCG64(seq))
                    scene = sim.sample_scene(config, rng)
                    top, bot = sim.project_scene_arrays(scene, noise, None, rng)
                    for fn in (calibrate_from_arrays, baseline_from_arrays):
                        try:
                            fn(top, bot, 1.7, backend=backend)
                        except Exception:
                            pass

        elapsed = timeit.timeit(run, number=1)
        print(f"  {backend:<8} {elapsed:.2f}s")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=2000)
    args = parser.parse_args()
    if not _backend.native_available():
        raise SystemExit(
            "native kernel not built; install with `pip install -e . --no-build-isolation`"
        )
    print(f"active backend at import: {_backend.active_backend()}\n")
    bench_calls(args.repeats)
    bench_monte_carlo()


if __name__ == "__main__":
    main()
