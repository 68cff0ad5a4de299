"""Monte-Carlo study of the Y_J tail bound for negative-binomial sums.

For each success probability p, compares the empirical upper tail with the
e^-x bound under Poisson constants (v = E) and under sub-gamma constants
(v = E/p, c = 1/p).

    python3 scripts/bound_study.py --reps 200000
"""

import argparse

import numpy as np

from countseg.model import DistributionSpec, TrueSignal
from countseg.simulate import verify_tail_yj


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=100_000)
    ap.add_argument("--length", type=int, default=100)
    ap.add_argument("--phi", type=float, default=2.0)
    ap.add_argument("--ps", default="0.2,0.5,0.8")
    ap.add_argument("--xs", default="1,2,5,8")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    xs = [float(x) for x in args.xs.split(",")]
    spec = DistributionSpec.negbin(args.phi)
    print("p,x,form,empirical,bound,se,passed")
    for p in (float(s) for s in args.ps.split(",")):
        truth = TrueSignal(np.full(args.length, p), spec)
        for corrected in (False, True):
            rep = verify_tail_yj(
                truth, (1, args.length), xs, args.reps, args.seed, as_exponent=True, corrected=corrected
            )
            form = "subgamma" if corrected else "poisson"
            for r in rep.rows:
                if r["side"] == "upper":
                    print(f"{p:g},{r['x']:g},{form},{r['empirical']:.6f},{r['bound']:.6f},{r['se']:.2e},{r['passed']}")


if __name__ == "__main__":
    main()
