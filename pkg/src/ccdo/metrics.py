"""Modified offline error and solution-set quality."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .g24 import Calibration, CalibrationCache
from .problem import DcopProblem, Evaluation, best_index


@dataclass(frozen=True)
class ErrorTrace:
    """Best-feasible error after every FE (``per_fe``) or generation (``per_gen``)."""

    values: np.ndarray
    source: str = "per_fe"

    def __post_init__(self):
        if self.source not in ("per_fe", "per_gen"):
            raise ValueError(f"unknown trace source {self.source!r}")
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    def __len__(self) -> int:
        return len(self.values)


def e_mo(trace) -> float:
    """Mean of an error trace (an :class:`ErrorTrace` or any 1-D sequence)."""
    values = trace.values if isinstance(trace, ErrorTrace) else np.asarray(trace, dtype=float)
    if values.size == 0:
        raise ValueError("cannot average an empty error trace")
    return float(values.mean())


def error_at(best_found: Optional[Evaluation], calibration: Calibration) -> float:
    """Error of the best solution known in one environment.

    Feasible: objective minus the best feasible value. Nothing feasible
    known: the worst-minus-best gap. An environment with no feasible point at
    all has nothing to miss and scores 0.
    """
    if not calibration.has_feasible:
        return 0.0
    if best_found is None or not best_found.feasible:
        return calibration.worst - calibration.best
    return best_found.objective - calibration.best


def set_quality(
    solutions: np.ndarray,
    sample: np.ndarray,
    problem: DcopProblem,
    cache: Optional[CalibrationCache] = None,
) -> float:
    """Mean error of the best set member over the sampled environments."""
    cache = cache if cache is not None else CalibrationCache()
    errors = []
    for alpha in np.asarray(sample, dtype=float):
        evals = [problem.evaluate(x, alpha) for x in solutions]
        errors.append(error_at(evals[best_index(evals)], cache.get(problem.name, alpha)))
    return float(np.mean(errors))


def per_environment_errors(best: Sequence[Optional[Evaluation]], calibrations: Sequence[Calibration]) -> np.ndarray:
    return np.array([error_at(b, c) for b, c in zip(best, calibrations)])
