"""Reduced benchmark (n=1000, Set2, d1-d4, g in {0.01, 0.04}, t=12).

Resumable: replicate records are cached under results/ after every batch.
"""
import argparse
import json
import logging
from dataclasses import replace

from longicausal import reproduce


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--reps", type=int, default=reproduce.ACCEPTANCE_GRID.reps)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--batch", type=int, default=10)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    logging.getLogger("longicausal.benchmark").setLevel(logging.ERROR)
    grid = replace(reproduce.ACCEPTANCE_GRID, reps=args.reps)
    run = reproduce.benchmark_run(grid, threads=args.threads, batch=args.batch)
    print(json.dumps(run.summary["checks"], indent=2))
    for c in run.cells:
        print(f"{c.key.rule} g={c.key.g}: bias {c.bias:+.3f} sd {c.sd:.3f} coverage {c.coverage:.3f} "
              f"usable n {c.mean_usable_n:.0f} failures {c.failures}")


if __name__ == "__main__":
    main()
