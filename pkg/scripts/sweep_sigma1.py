"""Print sigma_1 and its minimizing sector along the branch for every tested (N, p)."""
import argparse

import numpy as np

from plasmalab.branch import sweep
from plasmalab.emden import ProblemParams, lambda_plus
from plasmalab.radial import build_grid
from plasmalab.spectrum import potential, sigma1
from plasmalab.verify import CASES


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--grid", type=int, default=512)
    ap.add_argument("--points", type=int, default=13)
    ap.add_argument("--span", type=float, default=3.0, help="sweep end as a multiple of lambda_+")
    args = ap.parse_args()
    for N, p in CASES:
        params = ProblemParams(N, p)
        grid = build_grid(N, args.grid)
        lp = lambda_plus(params)
        trace = sweep(grid, params, np.linspace(0.0, args.span * lp, args.points))
        print(f"\nN={N} p={p:g}  lambda_+={lp:.6f}  (M={args.grid})")
        print(f"{'lam/lam+':>9} {'alpha':>12} {'r_plus':>9} {'sigma1':>12} {'sector':>6} {'mins by sector'}")
        for pt in trace.points:
            pot = potential(grid, params, pt)
            s1, sector, _, mins = sigma1(grid, params, pt, pot=pot)
            print(f"{pt.lam / lp:9.3f} {pt.alpha:12.6f} {pot.r_plus:9.5f} {s1:12.6f} {sector:6d} "
                  + " ".join(f"{m:.4g}" for m in mins))


if __name__ == "__main__":
    main()
