"""Offline set search: a solution population co-evolved against environments.

The solution population (SP) is steady-state: each step one child is added
and the member whose removal changes the fewest best-of-set results over
the environment population (EP) is dropped. EP members compete
pairwise with their own offspring on how badly SP does under them, measured
against a fresh random comparison set.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .problem import DcopProblem, Evaluation, FeBudgetClock, best_index


@dataclass
class CoevoConfig:
    g_max: int = 50
    sp_size: int = 10
    ep_size: int = 10
    i_size: int = 5
    # steady-state SP steps (one child each) per coevolution generation
    sp_steps: int = 50
    sp_mutation_scale: float = 0.1
    sp_mutation_rate: float = 0.5
    sp_crossover_rate: float = 0.5
    ep_mutation_scale: float = 0.05
    ep_mutation_rate: float = 0.5
    # EP offspring are mutation-only by default
    ep_crossover_rate: float = 0.0
    # False freezes EP at its random initial draw (fixed-environment ablation)
    evolve_environments: bool = True
    seed: int = 0

    def offline_fes(self) -> int:
        """Evaluator calls made by :func:`run_offline_search`.

        The SP x EP matrix is evaluated once up front and then kept current:
        an SP step only evaluates its child, and the EP step evaluates the
        offspring against SP plus one comparison set per parent and child.
        """
        m, n, k = self.sp_size, self.ep_size, self.i_size
        per_gen = self.sp_steps * n
        if self.evolve_environments:
            per_gen += n * m + 2 * n * k
        return m * n + self.g_max * per_gen


@dataclass(frozen=True)
class EpFitness:
    case: int
    value: float


# --------------------------------------------------------------------------
# variation operators


def intermediate_crossover(p1: np.ndarray, p2: np.ndarray, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Per coordinate with probability ``rate``: a*p1 + (1-a)*p2, a ~ U[0,1]; else p1."""
    mask = rng.random(p1.shape) < rate
    a = rng.random(p1.shape)
    return np.where(mask, a * p1 + (1.0 - a) * p2, p1)


def gaussian_mutation(
    x: np.ndarray,
    scale: float,
    rate: float,
    lower: np.ndarray,
    upper: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Range-relative Gaussian noise on each coordinate with probability ``rate``, clamped."""
    mask = rng.random(x.shape) < rate
    noise = rng.normal(0.0, 1.0, x.shape) * scale * (upper - lower)
    return np.clip(x + np.where(mask, noise, 0.0), lower, upper)


# --------------------------------------------------------------------------
# fitness


def _keys(f: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    infeasible = (v > 0.0).astype(np.int8)
    return infeasible, np.where(infeasible == 0, f, v)


def set_performance(sp: np.ndarray, alpha, problem: DcopProblem, clock: Optional[FeBudgetClock] = None) -> Evaluation:
    """Evaluation of the best member of ``sp`` under environment ``alpha``."""
    if len(sp) == 0:
        raise ValueError("empty solution set")
    evals = [problem.evaluate(x, alpha, clock) for x in sp]
    return evals[best_index(evals)]


def deletion_fitness(f: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Deletion-impact fitness for every row of an (m, n) evaluation matrix.

    Removing row i changes the best-of-set result in column j exactly when
    row i is the only row attaining the best (feasibility, score) key there.
    """
    cls, score = _keys(f, v)
    best_cls = cls.min(axis=0)
    in_class = cls == best_cls
    best_score = np.where(in_class, score, np.inf).min(axis=0)
    is_best = in_class & (score == best_score)
    unique = is_best.sum(axis=0) == 1
    return (is_best & unique).sum(axis=1)


def sp_fitness(sp: np.ndarray, i: int, ep: np.ndarray, problem: DcopProblem,
               clock: Optional[FeBudgetClock] = None) -> int:
    """Number of environments in ``ep`` whose best-of-set result changes without member ``i``."""
    if len(sp) < 2:
        raise ValueError("need at least two members")
    f, v = problem.evaluate_batch(sp[:, None, :], ep[None, :, :], clock)
    return int(deletion_fitness(f, v)[i])


def improvement(sp_best: float, i_best: float) -> float:
    denom = max(abs(i_best), abs(sp_best))
    if denom == 0.0:
        return 0.0
    return (sp_best - i_best) / denom


def classify(sp_feasible: bool, sp_score: float, i_feasible: bool, i_score: float) -> EpFitness:
    """Challenge degree from the best SP member and the best comparison-set member.

    Scores are objectives for feasible bests and violation sums otherwise.
    """
    if not sp_feasible:
        return EpFitness(1, float(sp_score))
    if not i_feasible:
        return EpFitness(3, float(sp_score))
    if i_score < sp_score:
        return EpFitness(2, improvement(sp_score, i_score))
    return EpFitness(4, improvement(sp_score, i_score))


def ep_fitness(alpha, sp: np.ndarray, comparison: np.ndarray, problem: DcopProblem,
               clock: Optional[FeBudgetClock] = None) -> EpFitness:
    sp_best = set_performance(sp, alpha, problem, clock)
    i_best = set_performance(comparison, alpha, problem, clock)
    return classify(sp_best.feasible, sp_best.score, i_best.feasible, i_best.score)


def _best_of_rows(f: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per column (feasible, score) of the best row of an (m, n) matrix."""
    cls, score = _keys(f, v)
    order = np.lexsort((score, cls), axis=0)[0]
    cols = np.arange(f.shape[1])
    return cls[order, cols] == 0, score[order, cols]


_CASE_RANK = {1: 3, 2: 2, 3: 1, 4: 1}


def more_challenging(a: EpFitness, b: EpFitness, rng: np.random.Generator) -> bool:
    """True if ``a`` is strictly more challenging than ``b``.

    Case 1 > case 2 > cases 3 and 4; a case-3/case-4 pairing is a coin flip;
    within a case the larger value wins.
    """
    ra, rb = _CASE_RANK[a.case], _CASE_RANK[b.case]
    if ra != rb:
        return ra > rb
    if a.case != b.case:
        return bool(rng.random() < 0.5)
    return a.value > b.value


# --------------------------------------------------------------------------
# generations


def _sp_step(sp, f, v, ep, problem, config, rng, clock):
    """One steady-state step on cached (f, v) rows of ``sp`` against ``ep``."""
    m = len(sp)
    i1, i2 = rng.choice(m, size=2, replace=False)
    child = intermediate_crossover(sp[i1], sp[i2], config.sp_crossover_rate, rng)
    child = gaussian_mutation(child, config.sp_mutation_scale, config.sp_mutation_rate,
                              problem.x_lower, problem.x_upper, rng)
    cf, cv = problem.evaluate_batch(child[None, :], ep, clock)
    f, v = np.vstack([f, cf[None, :]]), np.vstack([v, cv[None, :]])
    extended = np.vstack([sp, child[None, :]])
    fitness = deletion_fitness(f, v)
    worst = np.flatnonzero(fitness == fitness.min())
    drop = int(worst[rng.integers(len(worst))]) if len(worst) > 1 else int(worst[0])
    keep = np.arange(m + 1) != drop
    return extended[keep], f[keep], v[keep]


def sp_evolve_one_generation(sp: np.ndarray, ep: np.ndarray, problem: DcopProblem, config: CoevoConfig,
                             rng: np.random.Generator, clock: Optional[FeBudgetClock] = None) -> np.ndarray:
    """Add one offspring to ``sp`` and drop the member with the least deletion impact on ``ep``."""
    f, v = problem.evaluate_batch(sp[:, None, :], ep[None, :, :], clock)
    return _sp_step(sp, f, v, ep, problem, config, rng, clock)[0]


def _ep_fitness_rows(sp_f, sp_v, i_f, i_v) -> list[EpFitness]:
    sp_feas, sp_score = _best_of_rows(sp_f, sp_v)
    i_feas, i_score = _best_of_rows(i_f, i_v)
    return [classify(a, b, c, d) for a, b, c, d in zip(sp_feas, sp_score, i_feas, i_score)]


def _ep_step(ep, sp, sp_f, sp_v, problem, config, rng, clock):
    n = len(ep)
    lo, hi = problem.env_lower, problem.env_upper
    children = np.empty_like(ep)
    for i in range(n):
        partner = (i + 1 + rng.integers(n - 1)) % n if n > 1 else i
        child = intermediate_crossover(ep[i], ep[partner], config.ep_crossover_rate, rng)
        children[i] = gaussian_mutation(child, config.ep_mutation_scale, config.ep_mutation_rate, lo, hi, rng)

    child_f, child_v = problem.evaluate_batch(sp[:, None, :], children[None, :, :], clock)

    # a fresh comparison set for every parent and every child
    both = np.vstack([ep, children])
    comparison = problem.random_solutions(rng, 2 * n * config.i_size).reshape(2 * n, config.i_size, -1)
    cmp_f, cmp_v = problem.evaluate_batch(comparison, both[:, None, :], clock)

    parent_fit = _ep_fitness_rows(sp_f, sp_v, cmp_f[:n].T, cmp_v[:n].T)
    child_fit = _ep_fitness_rows(child_f, child_v, cmp_f[n:].T, cmp_v[n:].T)
    take_child = np.array([not more_challenging(parent_fit[i], child_fit[i], rng) for i in range(n)])
    survivors = np.where(take_child[:, None], children, ep)
    return survivors, np.where(take_child, child_f, sp_f), np.where(take_child, child_v, sp_v)


def ep_evolve_one_generation(
    ep: np.ndarray,
    sp: np.ndarray,
    problem: DcopProblem,
    config: CoevoConfig,
    rng: np.random.Generator,
    clock: Optional[FeBudgetClock] = None,
    sp_matrix: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> np.ndarray:
    """One pairwise-replacement generation of the environment population.

    Offspring are index-aligned with their first parent; a parent survives
    only when it is strictly more challenging than its offspring.
    ``sp_matrix`` may hold the already computed (f, violation) of ``sp``
    against ``ep`` (rows: members, columns: environments) to avoid
    re-evaluating the parents.
    """
    if sp_matrix is None:
        sp_matrix = problem.evaluate_batch(sp[:, None, :], ep[None, :, :], clock)
    return _ep_step(ep, sp, sp_matrix[0], sp_matrix[1], problem, config, rng, clock)[0]


@dataclass
class OfflineResult:
    solutions: np.ndarray
    environments: np.ndarray
    fes: int
    config: CoevoConfig
    problem: str

    def write(self, path: Path) -> None:
        """Solution set as text (one member per line) plus ``<path>.json`` metadata."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("".join(" ".join(repr(float(c)) for c in x) + "\n" for x in self.solutions))
        meta = {"problem": self.problem, "config": asdict(self.config), "offline_fes": self.fes,
                "size": len(self.solutions)}
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_solution_set(path: Path) -> np.ndarray:
    rows = [[float(v) for v in line.split()] for line in Path(path).read_text().splitlines() if line.strip()]
    return np.array(rows)


def run_offline_search(problem: DcopProblem, config: CoevoConfig,
                       clock: Optional[FeBudgetClock] = None) -> OfflineResult:
    """Alternate SP and EP evolution for ``config.g_max`` generations.

    Each generation runs ``config.sp_steps`` steady-state SP steps against
    the current EP and then one EP generation against the updated SP.
    """
    clock = clock if clock is not None else FeBudgetClock.unbounded()
    start = clock.total_fes
    streams = np.random.SeedSequence(config.seed).spawn(config.g_max + 1)
    init_rng = np.random.default_rng(streams[0])
    sp = problem.random_solutions(init_rng, config.sp_size)
    ep = problem.random_envs(init_rng, config.ep_size)
    f, v = problem.evaluate_batch(sp[:, None, :], ep[None, :, :], clock)
    for g in range(config.g_max):
        sp_rng, ep_rng = (np.random.default_rng(s) for s in streams[g + 1].spawn(2))
        for _ in range(config.sp_steps):
            sp, f, v = _sp_step(sp, f, v, ep, problem, config, sp_rng, clock)
        if config.evolve_environments:
            ep, f, v = _ep_step(ep, sp, f, v, problem, config, ep_rng, clock)
    return OfflineResult(sp, ep, clock.total_fes - start, config, problem.name)
