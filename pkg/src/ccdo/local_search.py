"""Budgeted constrained local search used by the online optimizer.

``local_descent`` is a small SQP-style method: forward-difference gradients
of the objective and the constraints, a quadratic subproblem with
linearized constraints and a damped BFGS Hessian, and a backtracking line
search on a penalty merit. ``mutation_hill_climb`` is the mutation-only
alternative.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Protocol

import numpy as np
from scipy.optimize import minimize

from .problem import DcopProblem, Evaluation, FeBudgetClock, compare_solutions

SKIP_RADIUS = 1e-2


@dataclass
class LocalSearchConfig:
    max_fes: int = 20
    constraint_tolerance: float = 0.0
    honor_bounds: bool = True
    mutation_scale: float = 0.1
    penalty: float = 1e6
    fd_step: float = 1e-6
    min_step: float = 1e-10
    # linearized constraints are tightened by this much so that iterates
    # approaching a curved boundary from outside land just inside it
    backoff: float = 1e-9
    strategy: str = "sqp_like"  # or "mutation_only"

    def __post_init__(self):
        if self.max_fes < 1:
            raise ValueError("max_fes must be >= 1")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown local search strategy {self.strategy!r}")


STRATEGIES = ("sqp_like", "mutation_only")


class Target(Protocol):
    """Something that evaluates decision vectors inside a box."""

    lower: np.ndarray
    upper: np.ndarray

    def __call__(self, x: np.ndarray) -> Evaluation: ...


class FixedTarget:
    """Evaluate ``problem`` under one environment, charging ``clock``."""

    def __init__(self, problem: DcopProblem, alpha, clock: Optional[FeBudgetClock] = None):
        self.problem = problem
        self.alpha = np.asarray(alpha, dtype=float)
        self.clock = clock
        self.lower = problem.x_lower
        self.upper = problem.x_upper

    def __call__(self, x: np.ndarray) -> Evaluation:
        return self.problem.evaluate(x, self.alpha, self.clock)


class LsMemory:
    """Start points that already went through local search."""

    def __init__(self):
        self.entries: list[np.ndarray] = []

    def __len__(self) -> int:
        return len(self.entries)

    def add(self, x: np.ndarray) -> None:
        self.entries.append(np.array(x, dtype=float))

    def clear(self) -> None:
        self.entries.clear()

    def min_distance(self, x: np.ndarray) -> float:
        if not self.entries:
            return math.inf
        return float(np.min(np.linalg.norm(np.asarray(self.entries) - x, axis=1)))


def should_skip(x: np.ndarray, mem: LsMemory, radius: float = SKIP_RADIUS) -> bool:
    return mem.min_distance(np.asarray(x, dtype=float)) < radius


class _Budget:
    """Counts evaluations against a local cap and keeps the best point seen."""

    def __init__(self, target: Target, max_fes: int, x0: np.ndarray, e0: Evaluation):
        self.target = target
        self.max_fes = max_fes
        self.used = 0
        self.best_x, self.best_e = x0, e0

    @property
    def left(self) -> int:
        return self.max_fes - self.used

    def __call__(self, x: np.ndarray) -> Evaluation:
        self.used += 1
        e = self.target(x)
        if compare_solutions(e, self.best_e) < 0:
            self.best_x, self.best_e = x.copy(), e
        return e


def _merit(e: Evaluation, penalty: float, tol: float) -> float:
    excess = sum(max(0.0, g - tol) for g in e.constraint_values)
    return e.objective + penalty * excess


def _solve_qp(grad, hess, c, jac, d_lo, d_hi, tol):
    """min grad.d + d'Hd/2  s.t.  c + J d <= tol, d_lo <= d <= d_hi.

    Returns (d, multipliers) or None when the subproblem solver fails.
    Constraints with a zero gradient row cannot be moved by the step and are
    dropped from the subproblem.
    """
    tol = np.asarray(tol, dtype=float)
    keep = np.abs(jac).sum(axis=1) > 0.0
    c, jac = c[keep], jac[keep]
    cons = []
    if len(c):
        cons.append({
            "type": "ineq",
            "fun": lambda d: tol - c - jac @ d,
            "jac": lambda d: -jac,
        })
    d0 = np.clip(np.zeros_like(grad), d_lo, d_hi)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = minimize(
            lambda d: grad @ d + 0.5 * d @ hess @ d,
            d0,
            jac=lambda d: grad + hess @ d,
            bounds=list(zip(d_lo, d_hi)),
            constraints=cons,
            method="SLSQP",
            options={"maxiter": 100, "ftol": 1e-15},
        )
    if not np.all(np.isfinite(res.x)):
        return None
    d = np.clip(res.x, d_lo, d_hi)
    # SLSQP often reports a line-search failure on tiny, already solved
    # subproblems; the step is still usable when it satisfies the constraints
    if len(c) and np.max(c + jac @ d - tol) > 1e-8 * (1.0 + np.max(np.abs(c))):
        return None
    lam = np.zeros(keep.size)
    if len(c):
        active = np.abs(c + jac @ d - tol) <= 1e-9 * (1.0 + np.abs(c))
        if active.any():
            a = jac[active]
            sol, *_ = np.linalg.lstsq(a.T, -(grad + hess @ d), rcond=None)
            lam_keep = np.zeros(len(c))
            lam_keep[active] = np.maximum(sol, 0.0)
            lam[keep] = lam_keep
    return d, lam


def _damped_bfgs(hess: np.ndarray, s: np.ndarray, y: np.ndarray) -> np.ndarray:
    hs = hess @ s
    shs = s @ hs
    if shs <= 1e-300:
        return hess
    sy = s @ y
    theta = 1.0 if sy >= 0.2 * shs else 0.8 * shs / (shs - sy)
    r = theta * y + (1.0 - theta) * hs
    sr = s @ r
    if sr <= 1e-300:
        return hess
    return hess - np.outer(hs, hs) / shs + np.outer(r, r) / sr


def local_descent(
    x0: np.ndarray,
    target: Target,
    config: LocalSearchConfig,
    e0: Optional[Evaluation] = None,
) -> tuple[np.ndarray, Evaluation]:
    """Constrained descent from ``x0`` within ``config.max_fes`` evaluations.

    ``e0`` is the already known evaluation of ``x0``; without it one FE is
    spent on evaluating the start. The returned point never loses to ``x0``
    under :func:`compare_solutions`.
    """
    lower, upper = target.lower, target.upper
    x = np.clip(np.asarray(x0, dtype=float), lower, upper)
    if e0 is None:
        if config.max_fes < 1:
            raise ValueError("no budget to evaluate the start point")
        e0 = target(x)
        used0 = 1
    else:
        used0 = 0
    budget = _Budget(target, config.max_fes, x.copy(), e0)
    budget.used = used0
    e = e0
    n = x.size
    tol = config.constraint_tolerance
    hess = np.eye(n)
    prev = None  # (x, grad_f, jac) at the previous iterate

    while budget.left >= n + 1:
        g_here = np.array(e.constraint_values)
        grad = np.empty(n)
        jac = np.empty((g_here.size, n))
        for j in range(n):
            h = config.fd_step * max(1.0, abs(x[j]))
            if config.honor_bounds and x[j] + h > upper[j]:
                h = -h
            xp = x.copy()
            xp[j] += h
            ep = budget(xp)
            grad[j] = (ep.objective - e.objective) / h
            jac[:, j] = (np.array(ep.constraint_values) - g_here) / h

        if prev is not None:
            px, pgrad, pjac, lam = prev
            y = (grad + jac.T @ lam) - (pgrad + pjac.T @ lam)
            hess = _damped_bfgs(hess, x - px, y)

        sol = _solve_qp(grad, hess, g_here, jac, lower - x, upper - x, tol - config.backoff)
        if sol is None:
            # fall back to steepest descent on the merit
            active = g_here > tol
            d = -(grad + config.penalty * jac[active].sum(axis=0))
            norm = np.linalg.norm(d)
            if norm == 0.0:
                break
            d = d / norm * 0.1 * np.linalg.norm(upper - lower)
            lam = np.zeros(g_here.size)
        else:
            d, lam = sol
        if np.linalg.norm(d) < config.min_step:
            break

        m0 = _merit(e, config.penalty, tol)
        step = 1.0
        moved = False
        while budget.left >= 1:
            xn = np.clip(x + step * d, lower, upper)
            en = budget(xn)
            if _merit(en, config.penalty, tol) < m0:
                prev = (x, grad, jac, lam)
                x, e = xn, en
                moved = True
                break
            step *= 0.5
            if step * np.linalg.norm(d) < config.min_step:
                break
        if not moved:
            break

    return budget.best_x, budget.best_e


def mutation_step(
    x: np.ndarray,
    e: Evaluation,
    target: Target,
    config: LocalSearchConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, Evaluation]:
    """One Gaussian perturbation (range-relative scale), kept only if strictly better. 1 FE."""
    lower, upper = target.lower, target.upper
    xn = np.clip(x + rng.standard_normal(x.shape) * config.mutation_scale * (upper - lower), lower, upper)
    en = target(xn)
    if compare_solutions(en, e) < 0:
        return xn, en
    return x, e


def mutation_hill_climb(
    x0: np.ndarray,
    target: Target,
    config: LocalSearchConfig,
    rng: np.random.Generator,
    e0: Optional[Evaluation] = None,
) -> tuple[np.ndarray, Evaluation]:
    """Elitist mutation-only search spending the whole ``max_fes`` budget."""
    x = np.asarray(x0, dtype=float)
    used = 0
    if e0 is None:
        e0 = target(x)
        used = 1
    e = e0
    for _ in range(config.max_fes - used):
        x, e = mutation_step(x, e, target, config, rng)
    return x, e


def run_local_search(
    x0: np.ndarray,
    target: Target,
    config: LocalSearchConfig,
    rng: np.random.Generator,
    e0: Optional[Evaluation] = None,
) -> tuple[np.ndarray, Evaluation]:
    """Dispatch on ``config.strategy``."""
    if config.strategy == "mutation_only":
        return mutation_hill_climb(x0, target, config, rng, e0)
    return local_descent(x0, target, config, e0)


LocalSearchFn = Callable[..., tuple[np.ndarray, Evaluation]]
