"""Baseline and t=12 means of a large observational simulation against the reference summaries."""
import argparse

from longicausal import reproduce


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=1_000_000)
    ap.add_argument("--seed", type=int, default=3)
    args = ap.parse_args()
    means = reproduce.moments_run(args.n, args.seed)
    for name, (target, tol) in {**reproduce.BASELINE_TARGETS, **reproduce.T12_TARGETS}.items():
        ok = abs(means[name] - target) <= tol
        print(f"{name:6s} {means[name]:10.4f}  target {target:8.3f} +-{tol:<6g} {'ok' if ok else 'MISS'}")


if __name__ == "__main__":
    main()
