"""The dynamic G24 family, its change schedules and per-environment calibration.

Every variant shares the base G24 problem on the box [0, 3] x [0, 4]:

    minimise  f(x) = -(p1 * x1 + p2 * x2)
    s.t.      g1 = -2 y1^4 + 8 y1^3 - 8 y1^2 + y2 - 2            <= 0
              g2 = -4 y1^4 + 32 y1^3 - 88 y1^2 + 96 y1 + y2 - 36  <= 0

with y1 = x1 and y2 = x2 + s2. The G24-6 variants replace g1/g2 by a
linear constraint plus a step constraint that splits the box into two
disconnected strips. Parameters absent from a variant's environment keep
their static values p1 = p2 = 1, s2 = 0.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .problem import DcopProblem, register

X_LOWER = np.array([0.0, 0.0])
X_UPPER = np.array([3.0, 4.0])

DEFAULT_SEVERITY = (0.5, 20.0)  # (k, S): medium severity

STATIC_VALUES = {"p1": 1.0, "p2": 1.0, "s2": 0.0}


def _p_sin(k: float, t: int) -> float:
    return math.sin(k * math.pi * t + math.pi / 2)


def _p1_alternating(k: float, t: int) -> float:
    # updated on even t only, held on odd t
    return math.sin(k * math.pi * (t // 2) + math.pi / 2)


def _p2_alternating(k: float, t: int) -> float:
    # updated on odd t only; t = 0 holds the value the odd-step formula gives at t = -1
    return math.sin(k * math.pi * ((t - 1) // 2) + math.pi / 2)


def _s2_decreasing(s: float, t: int) -> float:
    return 2.0 - t * (X_UPPER[1] - X_LOWER[1]) / s


def _s2_increasing(s: float, t: int) -> float:
    return t * (X_UPPER[1] - X_LOWER[1]) / s


@dataclass(frozen=True)
class G24Variant:
    id: str
    dynamic_objective: bool
    dynamic_constraints: bool
    env_names: tuple[str, ...]
    env_lower: tuple[float, ...]
    env_upper: tuple[float, ...]
    constraint_set: str  # "base", "6a" or "6c"
    solution_size: Optional[int]  # None for the unlimited ("many") group
    dynamics: tuple[Callable[[float, float, int], float], ...]

    @property
    def flags(self) -> str:
        return f"{'dF' if self.dynamic_objective else 'fF'},{'dC' if self.dynamic_constraints else 'fC'}"

    def env_at(self, t: int, severity: tuple[float, float] = DEFAULT_SEVERITY) -> np.ndarray:
        k, s = severity
        return np.array([fn(k, s, t) for fn in self.dynamics])


def _k(fn):
    return lambda k, s, t: fn(k, t)


def _s(fn):
    return lambda k, s, t: fn(s, t)


VARIANTS: dict[str, G24Variant] = {
    v.id: v
    for v in [
        G24Variant("G24_1", True, False, ("p1",), (-1.0,), (1.0,), "base", 2, (_k(_p_sin),)),
        G24Variant(
            "G24_2", True, False, ("p1", "p2"), (-1.0, -1.0), (1.0, 1.0), "base", 5,
            (_k(_p1_alternating), _k(_p2_alternating)),
        ),
        G24Variant("G24_3", False, True, ("s2",), (-0.2,), (2.0,), "base", None, (_s(_s2_decreasing),)),
        G24Variant(
            "G24_3b", True, True, ("p1", "s2"), (-1.0, -0.2), (1.0, 2.0), "base", None,
            (_k(_p_sin), _s(_s2_decreasing)),
        ),
        G24Variant(
            "G24_4", True, True, ("p1", "s2"), (-1.0, 0.0), (1.0, 2.2), "base", None,
            (_k(_p_sin), _s(_s2_increasing)),
        ),
        G24Variant(
            "G24_5", True, True, ("p1", "p2", "s2"), (-1.0, -1.0, 0.0), (1.0, 1.0, 2.2), "base", None,
            (_k(_p1_alternating), _k(_p2_alternating), _s(_s2_increasing)),
        ),
        G24Variant("G24_6a", True, False, ("p1",), (-1.0,), (1.0,), "6a", 2, (_k(_p_sin),)),
        G24Variant("G24_6c", True, False, ("p1",), (-1.0,), (1.0,), "6c", 2, (_k(_p_sin),)),
        G24Variant("G24_7", False, True, ("s2",), (0.0,), (2.2,), "base", None, (_s(_s2_increasing),)),
    ]
}
VARIANT_IDS: tuple[str, ...] = tuple(VARIANTS)
LIMITED_GROUP = ("G24_1", "G24_2", "G24_6a", "G24_6c")
MANY_GROUP = ("G24_3", "G24_3b", "G24_4", "G24_5", "G24_7")


def canonical_id(variant_id: str) -> str:
    key = variant_id.strip().replace("-", "_").lower()
    for vid in VARIANTS:
        if vid.lower() == key:
            return vid
    raise KeyError(f"unknown G24 variant {variant_id!r}; expected one of {VARIANT_IDS}")


def _step(inside: np.ndarray) -> np.ndarray:
    return np.where(inside, -1.0, 1.0)


def _g24_values(variant: G24Variant, x1, x2, alpha: np.ndarray):
    """Objective and constraints for broadcastable x1, x2 and env ``alpha`` (..., D_alpha)."""
    params = dict(STATIC_VALUES)
    for i, name in enumerate(variant.env_names):
        params[name] = alpha[..., i]
    f = -(params["p1"] * x1 + params["p2"] * x2)
    if variant.constraint_set == "base":
        y1 = x1
        y2 = x2 + params["s2"]
        y1_2 = y1 * y1
        y1_3 = y1_2 * y1
        y1_4 = y1_2 * y1_2
        g1 = (-2.0 * y1_4 + 8.0 * y1_3 - 8.0 * y1_2 - 2.0) + y2
        g2 = (-4.0 * y1_4 + 32.0 * y1_3 - 88.0 * y1_2 + 96.0 * y1 - 36.0) + y2
        return f, (g1, g2)
    g3 = (2.0 * x1 - 9.0) + 3.0 * x2
    if variant.constraint_set == "6a":
        g4 = _step(((x1 >= 0.0) & (x1 <= 1.0)) | ((x1 >= 2.0) & (x1 <= 3.0)))
    else:
        g4 = _step(((x1 >= 0.0) & (x1 <= 0.5)) | ((x1 >= 2.0) & (x1 <= 2.5)))
    return f, (g3, g4)


def make_variant(variant_id: str) -> DcopProblem:
    variant = VARIANTS[canonical_id(variant_id)]

    def function(x: np.ndarray, alpha: np.ndarray):
        f, gs = _g24_values(variant, x[..., 0], x[..., 1], alpha)
        shape = np.broadcast_shapes(np.shape(f), *(np.shape(g) for g in gs))
        return f, np.stack([np.broadcast_to(g, shape) for g in gs], axis=-1)

    def grid_function(axes: Sequence[np.ndarray], alpha: np.ndarray):
        x1 = np.asarray(axes[0], dtype=float)[:, None]
        x2 = np.asarray(axes[1], dtype=float)[None, :]
        f, gs = _g24_values(variant, x1, x2, np.asarray(alpha, dtype=float))
        shape = (x1.shape[0], x2.shape[1])
        return np.broadcast_to(f, shape), [np.broadcast_to(g, shape) for g in gs]

    return DcopProblem(
        name=variant.id,
        x_lower=X_LOWER.copy(),
        x_upper=X_UPPER.copy(),
        env_lower=np.array(variant.env_lower),
        env_upper=np.array(variant.env_upper),
        function=function,
        env_names=variant.env_names,
        grid_function=grid_function,
        metadata={"flags": variant.flags, "solution_size": variant.solution_size},
    )


for _vid in VARIANT_IDS:
    register(_vid, lambda _vid=_vid: make_variant(_vid))


@dataclass(frozen=True)
class ChangeSchedule:
    variant: str
    num_changes: int
    severity: tuple[float, float]
    env_sequence: np.ndarray  # (num_changes, D_alpha)


def make_schedule(
    variant_id: str,
    num_changes: int = 12,
    severity: tuple[float, float] = DEFAULT_SEVERITY,
    seed: Optional[int] = None,
) -> ChangeSchedule:
    """Environment sequence at t = 0 .. num_changes - 1.

    The G24 dynamics are deterministic; ``seed`` is accepted for interface
    symmetry and ignored.
    """
    if num_changes < 1:
        raise ValueError("num_changes must be >= 1")
    variant = VARIANTS[canonical_id(variant_id)]
    seq = np.array([variant.env_at(t, severity) for t in range(num_changes)])
    return ChangeSchedule(variant.id, num_changes, tuple(severity), seq)


# --------------------------------------------------------------------------
# calibration

GRID_RESOLUTION = 1001
ZOOM_RESOLUTION = 21
ZOOM_LEVELS = 200
ZOOM_SHRINK = 0.25
ZOOM_CANDIDATES = 4


@dataclass(frozen=True)
class Calibration:
    best: float
    worst: float
    best_x: Optional[tuple[float, ...]]
    has_feasible: bool

    @property
    def gap(self) -> float:
        return self.worst - self.best


def _feasible_objective(problem: DcopProblem, axes, alpha, sign: float):
    f, gs = problem.grid_function(axes, alpha)
    feasible = gs[0] <= 0.0
    for g in gs[1:]:
        feasible = feasible & (g <= 0.0)
    return np.where(feasible, sign * f, np.inf)


def _grid_candidates(vals: np.ndarray, axes, min_sep: float) -> list:
    flat = vals.ravel()
    n = min(ZOOM_CANDIDATES * 8, flat.size)
    top = np.argpartition(flat, n - 1)[:n]
    top = top[np.lexsort((top, flat[top]))]
    candidates = []
    for idx in top:
        if not np.isfinite(flat[idx]):
            break
        i, j = np.unravel_index(idx, vals.shape)
        point = np.array([axes[0][i], axes[1][j]])
        if all(np.max(np.abs(point - c)) > min_sep for c, _ in candidates):
            candidates.append((point, flat[idx]))
        if len(candidates) == ZOOM_CANDIDATES:
            break
    return candidates


def _zoom(problem: DcopProblem, alpha, sign: float, point, val, half):
    lo, hi = problem.x_lower, problem.x_upper
    for _ in range(ZOOM_LEVELS):
        box_lo = np.maximum(point - half, lo)
        box_hi = np.minimum(point + half, hi)
        sub = [np.linspace(box_lo[d], box_hi[d], ZOOM_RESOLUTION) for d in range(2)]
        sub_vals = _feasible_objective(problem, sub, alpha, sign)
        i, j = np.unravel_index(int(np.argmin(sub_vals)), sub_vals.shape)
        on_edge = i in (0, ZOOM_RESOLUTION - 1) or j in (0, ZOOM_RESOLUTION - 1)
        if sub_vals[i, j] <= val:
            point, val = np.array([sub[0][i], sub[1][j]]), sub_vals[i, j]
        # keep the box size while the optimum is still sliding across its edge
        if not on_edge or not (box_hi - box_lo > half).all():
            half = half * ZOOM_SHRINK
        if half.max() < 1e-13:
            break
    return point, val


def _search(problem: DcopProblem, alpha: np.ndarray, f_grid, feasible, axes, sign: float):
    """min(sign * f) over the feasible grid, refined by zooming on the best cells."""
    vals = np.where(feasible, sign * f_grid, np.inf)
    steps = (problem.x_upper - problem.x_lower) / (GRID_RESOLUTION - 1)
    candidates = _grid_candidates(vals, axes, 3 * steps.max())
    best_point, best_val = candidates[0]
    for point, val in candidates:
        point, val = _zoom(problem, alpha, sign, point, val, 4.0 * steps)
        if val < best_val:
            best_point, best_val = point, val
    return best_point, sign * best_val


def calibrate(problem: DcopProblem, alpha) -> Calibration:
    """Best and worst feasible objective values for one fixed environment.

    Dense 1001 x 1001 grid over the decision box followed by iterative zoom
    refinement around the best few grid cells. Uses no FE budget.
    """
    if problem.grid_function is None or problem.d_x != 2:
        raise ValueError("calibration needs a 2-D problem with a grid function")
    alpha = np.asarray(alpha, dtype=float)
    lo, hi = problem.x_lower, problem.x_upper
    axes = [np.linspace(lo[d], hi[d], GRID_RESOLUTION) for d in range(2)]
    f, gs = problem.grid_function(axes, alpha)
    feasible = gs[0] <= 0.0
    for g in gs[1:]:
        feasible &= g <= 0.0
    if not feasible.any():
        return Calibration(math.nan, math.nan, None, False)
    best_x, best = _search(problem, alpha, f, feasible, axes, 1.0)
    _, worst = _search(problem, alpha, f, feasible, axes, -1.0)
    return Calibration(float(best) + 0.0, float(worst) + 0.0, tuple(float(v) for v in best_x), True)


CALIBRATION_METADATA = {
    "grid_resolution": GRID_RESOLUTION,
    "zoom_resolution": ZOOM_RESOLUTION,
    "zoom_levels": ZOOM_LEVELS,
    "zoom_shrink": ZOOM_SHRINK,
    "zoom_candidates": ZOOM_CANDIDATES,
}


class CalibrationCache:
    """Memoized calibrations keyed by (variant, env rounded to 12 decimals).

    Persisted as text: ``<variant> <env...> <best> <worst>``, one record per
    line; environments without a feasible grid point store ``nan nan``.
    """

    def __init__(self, path: Optional[Path] = None):
        self.path = Path(path) if path is not None else None
        self._data: dict[tuple, Calibration] = {}
        self._lock = threading.Lock()
        self._problems: dict[str, DcopProblem] = {}
        if self.path is not None and self.path.exists():
            self.load(self.path)

    @staticmethod
    def key(variant_id: str, alpha) -> tuple:
        return (canonical_id(variant_id),) + tuple(round(float(a), 12) + 0.0 for a in np.ravel(alpha))

    def __len__(self) -> int:
        return len(self._data)

    def get(self, variant_id: str, alpha) -> Calibration:
        key = self.key(variant_id, alpha)
        cal = self._data.get(key)
        if cal is not None:
            return cal
        vid = key[0]
        if vid not in self._problems:
            self._problems[vid] = make_variant(vid)
        cal = calibrate(self._problems[vid], np.array(key[1:]))
        with self._lock:
            self._data.setdefault(key, cal)
        return self._data[key]

    def load(self, path: Path) -> None:
        with open(path) as fh:
            for line in fh:
                parts = line.split()
                if not parts or parts[0].startswith("#"):
                    continue
                vid = canonical_id(parts[0])
                nums = [float(p) for p in parts[1:]]
                env, best, worst = nums[:-2], nums[-2], nums[-1]
                feasible = not (math.isnan(best) or math.isnan(worst))
                self._data[(vid,) + tuple(env)] = Calibration(best, worst, None, feasible)

    def save(self, path: Optional[Path] = None) -> None:
        path = Path(path) if path is not None else self.path
        if path is None:
            raise ValueError("no path to save the calibration cache to")
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [
            "# " + " ".join(f"{k}={v}" for k, v in CALIBRATION_METADATA.items()),
        ]
        for key in sorted(self._data):
            cal = self._data[key]
            env = " ".join(f"{v:.12f}" for v in key[1:])
            lines.append(f"{key[0]} {env} {cal.best!r} {cal.worst!r}")
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text("\n".join(lines) + "\n")
        tmp.replace(path)
