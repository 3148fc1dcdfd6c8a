#!/usr/bin/env python3
"""Time the numba kernels against their numpy twins.

Run with ``python3 benchmarks/bench_kernels.py``. Setting ACTSIM_NO_NUMBA=1
makes the "loop" column fall back to the uncompiled loops, which is only useful
to see how slow they are.
"""

import argparse
import time

import numpy as np

from actsim import backend
from actsim.kernels import LOOP_KERNELS, NUMPY_KERNELS


def timeit(fn, args, repeat):
    fn(*args)  # warm-up (numba compiles here)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def efe_case(rng, n_states, horizon, n_actions=2):
    pol = np.array(list(np.ndindex(*(n_actions,) * horizon)), dtype=np.int64)
    b = rng.dirichlet(np.ones(n_states), size=(n_actions, n_states))
    a = rng.dirichlet(np.ones(n_states), size=n_states)
    post = rng.dirichlet(np.ones(n_states))
    log_c = np.log(np.full(n_states, 1.0 / n_states))
    ent = -(a * np.log(a)).sum(axis=1)
    return post, b, pol, 0, a, log_c, ent


def enum_case(rng, n_states, T):
    d = rng.dirichlet(np.ones(n_states))
    b = rng.dirichlet(np.ones(n_states), size=(T - 1, n_states))
    lik = rng.random((T, n_states))
    return d, b, lik


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    cases = [
        ("efe_all", "S=2 H=4 (16 policies)", efe_case(rng, 2, 4)),
        ("efe_all", "S=4 H=8 (256 policies)", efe_case(rng, 4, 8)),
        ("efe_all", "S=16 H=6 (64 policies)", efe_case(rng, 16, 6)),
        ("policy_predictions", "S=16 H=8 (256 policies)", efe_case(rng, 16, 8)[:3] + (3,)),
        ("enumerate_filtered", "S=4 T=6", enum_case(rng, 4, 6)),
        ("enumerate_filtered", "S=4 T=9", enum_case(rng, 4, 9)),
    ]
    print(f"backend in use: {backend()}")
    print(f"{'kernel':<20} {'case':<26} {'numpy ms':>10} {'loop ms':>10} {'speedup':>8}")
    for name, label, case in cases:
        t_np = timeit(NUMPY_KERNELS[name], case, args.repeat)
        t_lp = timeit(LOOP_KERNELS[name], case, args.repeat)
        assert np.allclose(NUMPY_KERNELS[name](*case), LOOP_KERNELS[name](*case), rtol=1e-10, atol=1e-12)
        print(f"{name:<20} {label:<26} {t_np * 1e3:>10.3f} {t_lp * 1e3:>10.3f} {t_np / t_lp:>7.1f}x")


if __name__ == "__main__":
    main()
