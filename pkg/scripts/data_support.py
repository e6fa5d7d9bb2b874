"""Share of true cumulative rule-following probabilities below a threshold at t=12."""
import argparse

from longicausal import reproduce


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-mc", type=int, default=100_000)
    ap.add_argument("--threshold", type=float, default=0.025)
    args = ap.parse_args()
    res = reproduce.support_run(args.n_mc, args.threshold)
    for population, row in res.items():
        cells = "  ".join(f"{r} {100 * v:5.2f}%" for r, v in row.items())
        print(f"{population:10s} {cells}")
    print("reference  " + "  ".join(f"{r} {100 * v:5.2f}%" for r, v in reproduce.SUPPORT_TARGETS.items()))


if __name__ == "__main__":
    main()
