"""Mean number of subjects adherent and uncensored through t=12 per rule and sample size."""
import argparse

from longicausal import reproduce


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--reps", type=int, default=200)
    ap.add_argument("--seed", type=int, default=4)
    args = ap.parse_args()
    res = reproduce.usable_n_run(args.reps, args.seed)
    for n, targets in reproduce.USABLE_N_TARGETS.items():
        row = res[str(n)]
        cells = "  ".join(f"{r} {row[r]:6.1f}" for r in sorted(row))
        refs = ", ".join(f"{r} ~{v}" for r, v in targets.items())
        print(f"n={n:5d}: {cells}   (reference {refs})")


if __name__ == "__main__":
    main()
