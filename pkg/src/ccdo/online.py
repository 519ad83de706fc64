"""Online phase: local search from the archived set with change detection.

Each generation visits every individual: re-evaluate it (a changed value
means the environment moved), refine it with local search unless a
previous search already started within ``skip_radius`` of it, then try one
Gaussian mutation. After the population, ``detect_k`` sentinel points are
re-evaluated. On a detected change the archive receives the best solution
seen since the previous detection and the population is rebuilt from the
archive plus the local-search results of the ended period.
"""
from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .g24 import CalibrationCache, ChangeSchedule
from .local_search import LocalSearchConfig, LsMemory, mutation_step, run_local_search, should_skip
from .metrics import e_mo, error_at
from .problem import BudgetExhausted, DcopProblem, Evaluation, FeBudgetClock, compare_solutions

# "baseline": first evaluation of a new individual, so that later
# re-evaluations have something to compare against
ROLES = ("baseline", "detect", "local_search", "mutation", "sentinel")

# spawn-key tags for the per-generation random streams
_INDIVIDUAL, _SENTINEL, _REPLACE, _REINIT = range(4)


@dataclass
class OnlineConfig:
    detect_k: int = 4
    skip_radius: float = 1e-2
    dedup_radius: float = 1e-2
    # largest |difference| still treated as "unchanged" when re-evaluating
    detection_tolerance: float = 0.0
    # "archive": rebuild from the archived set; "random": from random points (CCDO-S)
    reinit: str = "archive"
    local_search: LocalSearchConfig = field(default_factory=LocalSearchConfig)
    seed: int = 0

    def __post_init__(self):
        if self.reinit not in ("archive", "random"):
            raise ValueError(f"unknown reinit policy {self.reinit!r}")
        if isinstance(self.local_search, dict):
            self.local_search = LocalSearchConfig(**self.local_search)


def evaluations_differ(a: Evaluation, b: Evaluation, tolerance: float = 0.0) -> bool:
    if abs(a.objective - b.objective) > tolerance:
        return True
    return any(abs(x - y) > tolerance for x, y in zip(a.constraint_values, b.constraint_values))


def dedup(points: Sequence[np.ndarray], radius: float) -> list[np.ndarray]:
    """Drop every point closer than ``radius`` to an earlier kept point."""
    kept: list[np.ndarray] = []
    for p in points:
        if all(np.linalg.norm(p - q) >= radius for q in kept):
            kept.append(np.array(p, dtype=float))
    return kept


class OnlineTarget:
    """Evaluator of the running dynamic problem.

    The environment of each evaluation is taken from the FE clock, so
    changes happen exactly every ``change_frequency`` evaluations. Besides
    evaluating, it keeps the per-FE error trace (best feasible objective
    since the last true change), the best point seen since the last
    detection and per-role FE counts.
    """

    def __init__(self, problem: DcopProblem, schedule: ChangeSchedule, change_frequency: int,
                 cache: Optional[CalibrationCache] = None):
        self.problem = problem
        self.envs = np.asarray(schedule.env_sequence, dtype=float)
        self.clock = FeBudgetClock(change_frequency, schedule.num_changes, enforce_budget=True)
        cache = cache if cache is not None else CalibrationCache()
        self.calibrations = [cache.get(schedule.variant, a) for a in self.envs]
        self.lower = problem.x_lower
        self.upper = problem.x_upper
        self.role = "detect"
        self.role_fes: Counter = Counter()
        self.errors: list[float] = []
        self.env_index: list[int] = []
        self._env = -1
        self._best_true: Optional[Evaluation] = None
        self.known_x: Optional[np.ndarray] = None
        self.known_e: Optional[Evaluation] = None

    def __call__(self, x: np.ndarray) -> Evaluation:
        x = np.clip(np.asarray(x, dtype=float), self.lower, self.upper)
        fe = self.clock.charge(1)
        env = min(fe // self.clock.change_frequency, self.clock.num_changes - 1)
        e = self.problem.evaluate(x, self.envs[env])
        self.role_fes[self.role] += 1

        if env != self._env:
            self._env, self._best_true = env, None
        if e.feasible and (self._best_true is None or e.objective < self._best_true.objective):
            self._best_true = e
        self.errors.append(error_at(self._best_true, self.calibrations[env]))
        self.env_index.append(env)

        if self.known_e is None or compare_solutions(e, self.known_e) < 0:
            self.known_x, self.known_e = x.copy(), e
        return e

    def forget_known(self) -> None:
        self.known_x = self.known_e = None


@dataclass
class OnlineState:
    pop: list[np.ndarray]
    evals: list[Optional[Evaluation]]
    archive: list[np.ndarray]
    ls_best: list[np.ndarray] = field(default_factory=list)
    mem_ls: LsMemory = field(default_factory=LsMemory)
    sentinels: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    sentinel_evals: list[Optional[Evaluation]] = field(default_factory=list)


@dataclass
class RunRecord:
    per_fe_error: np.ndarray
    per_gen_error: np.ndarray
    env_index: np.ndarray
    # one entry per generation: (FE count at its end, whether it ended on a detected change)
    change_log: list[tuple[int, bool]]
    # 0-based index of every evaluation that revealed a change
    detections: list[int]
    role_fes: dict[str, int]
    archive: np.ndarray
    change_frequency: int

    @property
    def total_fes(self) -> int:
        return len(self.per_fe_error)

    def e_mo(self) -> float:
        return e_mo(self.per_fe_error)

    def e_mo_per_gen(self) -> float:
        return e_mo(self.per_gen_error)

    def csv_text(self) -> str:
        detected = set(self.detections)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["fe_index", "env_index", "best_feasible_error", "change_detected_flag"])
        for j, (err, env) in enumerate(zip(self.per_fe_error, self.env_index)):
            writer.writerow([j, int(env), repr(float(err)), int(j in detected)])
        return buf.getvalue()

    def write_csv(self, path: Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(self.csv_text())
        tmp.replace(path)

    def periods(self) -> list[np.ndarray]:
        """The error trace split at the true environment boundaries."""
        f = self.change_frequency
        return [self.per_fe_error[s:s + f] for s in range(0, self.total_fes, f)]


def reconvergence_rate(record: RunRecord) -> float:
    """Share of periods whose last-quarter mean error is below their first-quarter mean."""
    hits, total = 0, 0
    for period in record.periods():
        q = max(1, len(period) // 4)
        if len(period) < 2:
            continue
        total += 1
        hits += period[-q:].mean() < period[:q].mean()
    return hits / total if total else 0.0


class OnlineOptimizer:
    """Runs the online loop against one schedule; see :func:`run_online`."""

    def __init__(self, problem: DcopProblem, schedule: ChangeSchedule, change_frequency: int,
                 archive0: np.ndarray, config: OnlineConfig, cache: Optional[CalibrationCache] = None):
        self.problem = problem
        self.config = config
        self.target = OnlineTarget(problem, schedule, change_frequency, cache)
        self.root = np.random.SeedSequence(config.seed)
        self.initial_size = len(archive0)
        archive = [np.array(x, dtype=float) for x in archive0]
        self.state = OnlineState(pop=[], evals=[], archive=archive)
        self.change_log: list[tuple[int, bool]] = []
        self.detections: list[int] = []
        self.per_gen: list[float] = []
        self.generation = 0

    def _rng(self, *key: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.root.entropy, spawn_key=(self.generation,) + key))

    def _rebuild(self) -> None:
        st, cfg = self.state, self.config
        if cfg.reinit == "random":
            base = list(self.problem.random_solutions(self._rng(_REINIT), self.initial_size))
        else:
            base = st.archive
        st.pop = dedup(list(base) + st.ls_best, cfg.dedup_radius)
        st.evals = [None] * len(st.pop)
        st.sentinels = self.problem.random_solutions(self._rng(_SENTINEL), cfg.detect_k)
        st.sentinel_evals = [None] * cfg.detect_k
        self._evaluate_new(range(len(st.pop)))
        self.target.role = "sentinel"
        for j in range(cfg.detect_k):
            st.sentinel_evals[j] = self.target(st.sentinels[j])

    def _evaluate_new(self, indices) -> None:
        st = self.state
        self.target.role = "baseline"
        for i in indices:
            st.evals[i] = self.target(st.pop[i])

    def _check(self, x: np.ndarray, stored: Optional[Evaluation], role: str) -> tuple[Evaluation, bool]:
        self.target.role = role
        e = self.target(x)
        changed = stored is not None and evaluations_differ(e, stored, self.config.detection_tolerance)
        if changed:
            self.detections.append(self.target.clock.total_fes - 1)
        return e, changed

    def on_change(self) -> None:
        st, t = self.state, self.target
        if t.known_x is not None and all(
            np.linalg.norm(t.known_x - a) >= self.config.dedup_radius for a in st.archive
        ):
            st.archive.append(t.known_x.copy())
        t.forget_known()
        self._rebuild()
        st.mem_ls.clear()
        st.ls_best.clear()

    def _individuals(self) -> bool:
        """One pass over the population; True when a change was detected."""
        st, cfg = self.state, self.config
        for i in range(len(st.pop)):
            rng = self._rng(_INDIVIDUAL, i)
            e, changed = self._check(st.pop[i], st.evals[i], "detect")
            if changed:
                return True
            x = st.pop[i]
            if not should_skip(x, st.mem_ls, cfg.skip_radius):
                self.target.role = "local_search"
                x_best, e = run_local_search(x, self.target, cfg.local_search, rng, e0=e)
                st.mem_ls.add(x)
                st.ls_best.append(x_best)
                x = x_best
            self.target.role = "mutation"
            st.pop[i], st.evals[i] = mutation_step(x, e, self.target, cfg.local_search, rng)
        return False

    def _sentinels(self) -> bool:
        st = self.state
        for j in range(len(st.sentinels)):
            e, changed = self._check(st.sentinels[j], st.sentinel_evals[j], "sentinel")
            if changed:
                return True
            st.sentinel_evals[j] = e
        return False

    def _replace_converged(self) -> None:
        st = self.state
        rng = self._rng(_REPLACE)
        replaced = []
        for i in range(len(st.pop)):
            if should_skip(st.pop[i], st.mem_ls, self.config.skip_radius):
                st.pop[i] = self.problem.random_solutions(rng, 1)[0]
                st.evals[i] = None
                replaced.append(i)
        self._evaluate_new(replaced)

    def _end_generation(self, changed: bool) -> None:
        t = self.target
        self.change_log.append((t.clock.total_fes, changed))
        if t.errors:
            self.per_gen.append(t.errors[-1])
        self.generation += 1

    def run(self) -> RunRecord:
        st = self.state
        if self.config.reinit == "random":
            st.archive = []
        self._rebuild()
        try:
            while True:
                changed = self._individuals() or self._sentinels()
                if changed:
                    self.on_change()
                else:
                    self._replace_converged()
                self._end_generation(changed)
        except BudgetExhausted:
            if not self.change_log or self.change_log[-1][0] != self.target.clock.total_fes:
                self._end_generation(False)
        t = self.target
        return RunRecord(
            per_fe_error=np.array(t.errors),
            per_gen_error=np.array(self.per_gen),
            env_index=np.array(t.env_index, dtype=int),
            change_log=self.change_log,
            detections=self.detections,
            role_fes={r: t.role_fes.get(r, 0) for r in ROLES},
            archive=np.array(st.archive),
            change_frequency=t.clock.change_frequency,
        )


def run_online(
    problem: DcopProblem,
    schedule: ChangeSchedule,
    archive0: np.ndarray,
    change_frequency: int,
    config: Optional[OnlineConfig] = None,
    cache: Optional[CalibrationCache] = None,
) -> RunRecord:
    """Run the online phase until ``num_changes * change_frequency`` FEs are spent."""
    config = config if config is not None else OnlineConfig()
    return OnlineOptimizer(problem, schedule, change_frequency, archive0, config, cache).run()
