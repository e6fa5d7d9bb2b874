"""Nonparametric subject-level bootstrap."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..longdata import LongitudinalDataset

log = logging.getLogger(__name__)

MIN_REPLICATES = 200
MAX_FAILURE_RATE = 0.10


class BootstrapError(RuntimeError):
    pass


@dataclass
class BootstrapResult:
    ci: tuple[float, float]
    replicates: np.ndarray
    failures: int

    @property
    def se(self) -> float:
        return float(np.std(self.replicates, ddof=1)) if len(self.replicates) > 1 else 0.0


def bootstrap_ci(
    estimator: Callable[[LongitudinalDataset], float],
    dataset: LongitudinalDataset,
    B: int,
    seed: int = 0,
    min_replicates: int = MIN_REPLICATES,
) -> BootstrapResult:
    """Percentile 2.5/97.5 interval over ``B`` resamples of subjects.

    Replicates whose estimator raises are dropped; more than 10% failures
    is an error.
    """
    if B < min_replicates:
        raise ValueError(f"B must be >= {min_replicates}")
    rng = np.random.default_rng(seed)
    draws = rng.integers(0, dataset.n, size=(B, dataset.n))
    values, failures = [], 0
    for idx in draws:
        try:
            values.append(float(estimator(dataset.take(idx))))
        except Exception as exc:  # noqa: BLE001 - any estimator failure drops the replicate
            failures += 1
            log.warning("bootstrap replicate failed: %s", exc)
    if failures > MAX_FAILURE_RATE * B:
        raise BootstrapError(f"{failures} of {B} bootstrap replicates failed")
    reps = np.asarray(values)
    lo, hi = np.percentile(reps, [2.5, 97.5])
    return BootstrapResult((float(lo), float(hi)), reps, failures)
