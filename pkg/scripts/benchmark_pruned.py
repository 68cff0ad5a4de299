"""Time the pruned and exact engines on simulated negative-binomial series.

    python3 scripts/benchmark_pruned.py --sizes 1000,10000,100000 --kmax 50
"""

import argparse
import time

import numpy as np

from countseg.model import DistributionSpec
from countseg.segmenter import segment_exact, segment_pruned


def series(n, phi, rng):
    t = np.arange(n)
    mu = 6.0 * (1.2 + np.sin(2 * np.pi * t / 7000.0))
    return rng.poisson(rng.gamma(phi, mu / phi))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="1000,10000,100000")
    ap.add_argument("--kmax", type=int, default=50)
    ap.add_argument("--phi", type=float, default=2.0)
    ap.add_argument("--exact-limit", type=int, default=10_000, help="skip the exact engine above this n")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    spec = DistributionSpec.negbin(args.phi)
    rng = np.random.default_rng(args.seed)
    # compile the kernels before timing
    segment_pruned(series(200, args.phi, rng), 3, spec)
    segment_exact(series(200, args.phi, rng), 3, spec)
    print("n,engine,seconds,max_live_candidates")
    for n in (int(s) for s in args.sizes.split(",")):
        y = series(n, args.phi, rng)
        t0 = time.perf_counter()
        table = segment_pruned(y, args.kmax, spec)
        print(f"{n},pruned,{time.perf_counter() - t0:.3f},{max(table.stats['max_live_candidates'])}")
        if n <= args.exact_limit:
            t0 = time.perf_counter()
            segment_exact(y, args.kmax, spec)
            print(f"{n},exact,{time.perf_counter() - t0:.3f},")


if __name__ == "__main__":
    main()
