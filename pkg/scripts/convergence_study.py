"""Error contraction factors under grid doubling for torsion energy, lambda_+ and sigma_1."""
import argparse

from plasmalab.verify import CASES, LADDER, convergence_bundle


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--ladder", type=int, nargs="+", default=list(LADDER))
    args = ap.parse_args()
    steps = " ".join(f"{a}->{b}" for a, b in zip(args.ladder, args.ladder[1:]))
    print(f"grid steps: {steps}  (sigma_1 uses successive differences, so one ratio fewer)")
    for N, p in CASES:
        out = convergence_bundle(N, p, args.ladder)
        row = "  ".join(f"{k}: " + " ".join(f"{r:.3f}" for r in out[k]) for k in ("torsion", "lambda_plus", "sigma1"))
        print(f"N={N} p={p:<4g} {row}")


if __name__ == "__main__":
    main()
