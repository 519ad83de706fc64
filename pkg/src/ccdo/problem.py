"""Dynamic constrained problem model, feasibility-first ordering and FE accounting."""
from __future__ import annotations

import sys
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

# (x of shape (..., D_x), alpha of shape (..., D_alpha)) -> (f (...), g (..., k))
ProblemFunction = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]
# (per-axis 1-D coordinate arrays, alpha (D_alpha,)) -> (f grid, g grid (..., k))
GridFunction = Callable[[Sequence[np.ndarray], np.ndarray], tuple[np.ndarray, np.ndarray]]


class BudgetExhausted(Exception):
    """Raised when a budgeted clock is asked for an evaluation past its limit."""


@dataclass(frozen=True)
class Evaluation:
    objective: float
    constraint_values: tuple[float, ...]
    violation: float
    feasible: bool

    @classmethod
    def from_values(cls, objective: float, constraint_values: Sequence[float]) -> "Evaluation":
        g = tuple(float(v) for v in constraint_values)
        violation = float(sum(v for v in g if v > 0.0))
        return cls(float(objective), g, violation, violation == 0.0)

    @property
    def score(self) -> float:
        """Objective when feasible, total violation otherwise."""
        return self.objective if self.feasible else self.violation

    def key(self) -> tuple[int, float]:
        return (0 if self.feasible else 1, self.score)


def compare_solutions(a: Evaluation, b: Evaluation) -> int:
    """Return -1 if ``a`` is better, 1 if ``b`` is better and 0 on a tie.

    Feasible beats infeasible; feasibles are ordered by objective and
    infeasibles by total violation (smaller is better in both cases).
    """
    ka, kb = a.key(), b.key()
    if ka < kb:
        return -1
    if kb < ka:
        return 1
    return 0


def best_index(evaluations: Sequence[Evaluation]) -> int:
    """Index of the first best evaluation under :func:`compare_solutions`."""
    if not evaluations:
        raise ValueError("no evaluations to choose from")
    return min(range(len(evaluations)), key=lambda i: evaluations[i].key())


class FeBudgetClock:
    """Counts objective evaluations and maps the count onto environment indices.

    With ``enforce_budget`` the clock refuses to go past
    ``num_changes * change_frequency`` evaluations and raises
    :class:`BudgetExhausted` instead.
    """

    def __init__(self, change_frequency: int, num_changes: int, enforce_budget: bool = False):
        if change_frequency < 1 or num_changes < 1:
            raise ValueError("change_frequency and num_changes must be positive")
        self.change_frequency = int(change_frequency)
        self.num_changes = int(num_changes)
        self.enforce_budget = enforce_budget
        self.total_fes = 0
        self._lock = threading.Lock()

    @classmethod
    def unbounded(cls) -> "FeBudgetClock":
        """A plain counter that never changes environment and has no budget."""
        return cls(change_frequency=sys.maxsize, num_changes=1)

    @property
    def budget(self) -> int:
        return self.num_changes * self.change_frequency

    @property
    def env_index(self) -> int:
        return min(self.total_fes // self.change_frequency, self.num_changes - 1)

    @property
    def exhausted(self) -> bool:
        return self.enforce_budget and self.total_fes >= self.budget

    def charge(self, n: int = 1) -> int:
        """Atomically add ``n`` evaluations; returns the count before the charge."""
        with self._lock:
            if self.enforce_budget and self.total_fes + n > self.budget:
                raise BudgetExhausted(f"budget of {self.budget} FEs exhausted")
            before = self.total_fes
            self.total_fes += n
            return before


@dataclass
class DcopProblem:
    """A dynamic constrained problem with the environment lifted into parameters.

    ``function`` is vectorized: it maps decision vectors of shape (..., D_x)
    and environment vectors broadcastable against them to objective values
    and the k inequality constraint values (g <= 0 is satisfied).
    """

    name: str
    x_lower: np.ndarray
    x_upper: np.ndarray
    env_lower: np.ndarray
    env_upper: np.ndarray
    function: ProblemFunction
    env_names: tuple[str, ...] = ()
    grid_function: Optional[GridFunction] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x_lower = np.asarray(self.x_lower, dtype=float)
        self.x_upper = np.asarray(self.x_upper, dtype=float)
        self.env_lower = np.asarray(self.env_lower, dtype=float)
        self.env_upper = np.asarray(self.env_upper, dtype=float)

    @property
    def d_x(self) -> int:
        return self.x_lower.size

    @property
    def d_alpha(self) -> int:
        return self.env_lower.size

    @property
    def x_range(self) -> np.ndarray:
        return self.x_upper - self.x_lower

    @property
    def env_range(self) -> np.ndarray:
        return self.env_upper - self.env_lower

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.x_lower, self.x_upper)

    def clip_env(self, alpha: np.ndarray) -> np.ndarray:
        return np.clip(alpha, self.env_lower, self.env_upper)

    def random_solutions(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.x_lower, self.x_upper, size=(n, self.d_x))

    def random_envs(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.env_lower, self.env_upper, size=(n, self.d_alpha))

    def evaluate(self, x, alpha, clock: Optional[FeBudgetClock] = None) -> Evaluation:
        x = np.asarray(x, dtype=float)
        alpha = np.asarray(alpha, dtype=float)
        if x.shape != (self.d_x,) or alpha.shape != (self.d_alpha,):
            raise ValueError(
                f"{self.name}: expected x of shape ({self.d_x},) and alpha of shape "
                f"({self.d_alpha},), got {x.shape} and {alpha.shape}"
            )
        if clock is not None:
            clock.charge(1)
        f, g = self.function(x, alpha)
        return Evaluation.from_values(float(f), np.ravel(g))

    def evaluate_batch(
        self, x: np.ndarray, alpha: np.ndarray, clock: Optional[FeBudgetClock] = None
    ) -> tuple[np.ndarray, np.ndarray]:
        """Evaluate broadcast arrays; returns (objective, violation) arrays.

        One FE is charged per element of the broadcast result.
        """
        x = np.asarray(x, dtype=float)
        alpha = np.asarray(alpha, dtype=float)
        if x.shape[-1] != self.d_x or alpha.shape[-1] != self.d_alpha:
            raise ValueError(f"{self.name}: dimension mismatch in batch evaluation")
        f, g = self.function(x, alpha)
        shape = np.broadcast_shapes(x.shape[:-1], alpha.shape[:-1])
        f = np.broadcast_to(f, shape)
        violation = np.broadcast_to(np.maximum(g, 0.0).sum(axis=-1), shape)
        if clock is not None:
            clock.charge(int(np.prod(shape, dtype=int)))
        return np.array(f, dtype=float), np.array(violation, dtype=float)


def evaluate(problem: DcopProblem, x, alpha, clock: Optional[FeBudgetClock] = None) -> Evaluation:
    return problem.evaluate(x, alpha, clock)


_REGISTRY: dict[str, Callable[[], DcopProblem]] = {}


def _normalize(name: str) -> str:
    return name.strip().lower().replace("-", "_")


def register(name: str, factory: Callable[[], DcopProblem]) -> None:
    _REGISTRY[_normalize(name)] = factory


def get_problem(name: str) -> DcopProblem:
    """Look a problem up by name, e.g. ``"g24_1"`` or ``"G24-6a"``."""
    # the G24 family registers itself on import
    from . import g24  # noqa: F401

    key = _normalize(name)
    if key not in _REGISTRY:
        raise KeyError(f"unknown problem {name!r}; known: {sorted(_REGISTRY)}")
    return _REGISTRY[key]()


def registered_names() -> list[str]:
    from . import g24  # noqa: F401

    return sorted(_REGISTRY)
