"""Compare the closed-form lambda_+ with the Sobolev threshold lambda_1 on the disc, and lambda_0 below both."""
import argparse

from plasmalab.emden import ProblemParams, lambda_plus
from plasmalab.sobolev import lambda0, lambda1


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--grid", type=int, default=2048)
    ap.add_argument("--exponents", type=float, nargs="+", default=[1.5, 2.0, 3.0])
    args = ap.parse_args()
    print(f"{'p':>5} {'lambda_+':>14} {'lambda_1':>14} {'rel gap':>10} {'lambda_0':>12}")
    for p in args.exponents:
        lp = lambda_plus(ProblemParams(2, p))
        l1 = lambda1(p, M=args.grid)
        print(f"{p:5g} {lp:14.9f} {l1:14.9f} {abs(l1 - lp) / lp:10.2e} {lambda0(2, p, args.grid):12.6f}")


if __name__ == "__main__":
    main()
