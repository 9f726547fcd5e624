"""Time the numba kernels against the pure-numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 20] [--steps 50]

Prints one row per kernel (best-of-N wall time per call) plus a short
end-to-end simulation under each backend, and checks that both backends
return the same arrays.
"""
from __future__ import annotations

import argparse
import time
from dataclasses import replace

import numpy as np

from rlccf import _kernels as K
from rlccf.config import reference_config
from rlccf.sim import run


def make_inputs(seed=0, n=4, q=200, m=4, k=16):
    rng = np.random.default_rng(seed)
    probs = rng.dirichlet(np.ones(m), size=q)
    codes = rng.integers(-1, m, size=(n, q, k))
    counts = K.count_answers_np(codes, m)
    p_old = rng.dirichlet(np.ones(m), size=q)
    p_new = p_old * np.exp(rng.normal(scale=0.2, size=(q, m)))
    p_new /= p_new.sum(axis=1, keepdims=True)
    adv = K.group_advantages_np(codes[0] == 1)
    return {
        "sample_codes": (np.cumsum(probs, axis=1), rng.random((q, 64))),
        "count_answers": (codes, m),
        "weighted_vote": (counts, rng.random((n, q))),
        "group_advantages": (codes[0] == 1,),
        "surrogate_gradient": (codes[0], adv, p_new, p_old, 0.2),
        "grand_means": (rng.normal(size=(2048, 16)), rng.normal(size=(2048, 16, 16)), 0.5),
    }


def best_time(fn, args, repeat):
    fn(*args)  # warm-up (triggers compilation for numba)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=0, atol=1e-12)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    parser.add_argument("--steps", type=int, default=50, help="simulation steps per backend")
    args = parser.parse_args(argv)

    if K.NUMBA is None:
        print("numba unavailable; nothing to compare")
        return 1
    inputs = make_inputs()
    print(f"{'kernel':<20}{'numpy us':>12}{'numba us':>12}{'speedup':>10}  equal")
    for name, call in inputs.items():
        t_np = best_time(K.NUMPY[name], call, args.repeat)
        t_nb = best_time(K.NUMBA[name], call, args.repeat)
        eq = same(K.NUMPY[name](*call), K.NUMBA[name](*call))
        print(f"{name:<20}{t_np * 1e6:>12.1f}{t_nb * 1e6:>12.1f}{t_np / t_nb:>10.2f}  {eq}")

    cfg = replace(reference_config(seed=0), steps=args.steps)
    before = K.backend()
    times, traces = {}, {}
    for name in ("numpy", "numba"):
        K.set_backend(name)
        run(replace(cfg, steps=1))  # warm-up
        t0 = time.perf_counter()
        traces[name] = run(cfg).to_lines()
        times[name] = time.perf_counter() - t0
    K.set_backend(before)
    print(f"\nsimulation ({args.steps} steps, reference config): numpy {times['numpy']:.2f}s, "
          f"numba {times['numba']:.2f}s, identical traces: {traces['numpy'] == traces['numba']}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
