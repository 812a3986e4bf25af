"""Time the compiled and pure-numpy sampling kernels on the same inputs.

    python3 benchmarks/bench_backends.py [--n 200000] [--repeat 3]

Both backends are called in one process through the ``backend`` argument, so
``QCHAIN_BACKEND`` does not need to be set.  The first compiled call is timed
separately because it includes JIT compilation (or loading the on-disk cache).
"""

import argparse
import time

import numpy as np

from qchain.analytic import cutoff_limits
from qchain.kernels import sample_parallel, sample_sequential
from qchain.noise import ChainSpec
from qchain.rng import MC_SALT, seed_key

CASES = [
    ("seq 1 rep 200 km", "sequential", 200.0, 1, None),
    ("seq 7 rep 400 km", "sequential", 400.0, 7, None),
    ("seq 7 rep 400 km cut 20 ms", "sequential", 400.0, 7, 0.02),
    ("par 1 rep 200 km", "parallel", 200.0, 1, None),
    ("par 7 rep 400 km", "parallel", 400.0, 7, None),
    ("par 7 rep 400 km cut 20 ms", "parallel", 400.0, 7, 0.02),
]


def run(protocol, chain, n, key, backend):
    if protocol == "sequential":
        m = None if chain.cutoff_s is None else np.array(cutoff_limits(chain).m)
        tau_cut = np.inf if chain.cutoff_s is None else chain.cutoff_s
        return sample_sequential(chain.taus, chain.probs, n, key, rt=2, m=m, tau_cut=tau_cut,
                                 backend=backend)
    return sample_parallel(chain.taus, chain.probs, n, key, rt=2, tau_cut=chain.cutoff_s,
                           policy="classical", backend=backend)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200_000, help="deliveries per call")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    key = seed_key(7, MC_SALT)

    print(f"{'case':30s} {'first (s)':>10s} {'numba (s)':>10s} {'numpy (s)':>10s} {'ratio':>7s}  same")
    for label, proto, total, n_rep, cut in CASES:
        chain = ChainSpec.uniform(total, n_rep, cutoff_s=cut)
        t0 = time.perf_counter()
        run(proto, chain, 10, key, "numba")
        first = time.perf_counter() - t0
        t_nb, a = best_of(lambda: run(proto, chain, args.n, key, "numba"), args.repeat)
        t_np, b = best_of(lambda: run(proto, chain, args.n, key, "numpy"), args.repeat)
        same = np.array_equal(a.duration, b.duration) and np.array_equal(a.idle_skr, b.idle_skr)
        print(f"{label:30s} {first:10.3f} {t_nb:10.4f} {t_np:10.4f} {t_np / t_nb:7.2f}  {same}")


if __name__ == "__main__":
    main()
