"""Experiment driver: offline + online runs over variants, frequencies and seeds.

Randomness is derived from one base seed:

* offline search of (variant, repetition): ``SeedSequence([seed, v, rep, 0])``
* online run of (variant, repetition, frequency): ``SeedSequence([seed, v, rep, freq, 1])``
* set-quality environment sample of (variant, repetition): ``SeedSequence([seed, v, rep, 2])``

where ``v`` is the variant's position in :data:`ccdo.g24.VARIANT_IDS`. The
algorithms of one cell share the same streams, so CCDO and CCDO-L start
from the same archive and all online runs see the same sentinels.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.stats import mannwhitneyu

from .coevolution import CoevoConfig, run_offline_search
from .g24 import LIMITED_GROUP, VARIANT_IDS, CalibrationCache, canonical_id, make_schedule
from .local_search import LocalSearchConfig
from .metrics import set_quality
from .online import OnlineConfig, RunRecord, reconvergence_rate, run_online
from .problem import get_problem

log = logging.getLogger(__name__)

ALGORITHMS = ("CCDO", "CCDO-S", "CCDO-L", "FIXED-ENV-SET")
FREQUENCIES = (1000, 500, 250, 100, 50, 25)
OUTPUT_ENV_VAR = "CCDO_OUTPUT_DIR"


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentSpec:
    name: str = "experiment"
    variants: list[str] = field(default_factory=lambda: list(VARIANT_IDS))
    frequencies: list[int] = field(default_factory=lambda: [100])
    num_changes: int = 12
    repetitions: int = 10
    algorithms: list[str] = field(default_factory=lambda: ["CCDO"])
    seed: int = 0
    # field overrides for CoevoConfig / LocalSearchConfig / OnlineConfig
    coevo: dict = field(default_factory=dict)
    local_search: dict = field(default_factory=dict)
    online: dict = field(default_factory=dict)
    set_quality_samples: int = 50
    write_records: bool = False

    def validate(self) -> "ExperimentSpec":
        try:
            self.variants = [canonical_id(v) for v in self.variants]
        except KeyError as exc:
            raise ConfigError(str(exc)) from None
        bad = [f for f in self.frequencies if f not in FREQUENCIES]
        if bad:
            raise ConfigError(f"unsupported change frequencies {bad}; choose from {FREQUENCIES}")
        bad = [a for a in self.algorithms if a not in ALGORITHMS]
        if bad:
            raise ConfigError(f"unknown algorithms {bad}; choose from {ALGORITHMS}")
        if self.repetitions < 1 or self.num_changes < 1:
            raise ConfigError("repetitions and num_changes must be positive")
        try:
            CoevoConfig(**self.coevo)
            LocalSearchConfig(**self.local_search)
            OnlineConfig(**self.online)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad config override: {exc}") from None
        return self

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        data = dict(data)
        if "algorithm" in data:
            data["algorithms"] = [data.pop("algorithm")]
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown spec fields {sorted(unknown)}")
        return cls(**data).validate()

    @classmethod
    def load(cls, path: Path) -> "ExperimentSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# seeding


def _seed(*words: int) -> int:
    return int(np.random.SeedSequence([int(w) for w in words]).generate_state(1)[0])


def offline_seed(base: int, variant: str, rep: int) -> int:
    return _seed(base, VARIANT_IDS.index(variant), rep, 0)


def online_seed(base: int, variant: str, rep: int, freq: int) -> int:
    return _seed(base, VARIANT_IDS.index(variant), rep, freq, 1)


def sample_seed(base: int, variant: str, rep: int) -> int:
    return _seed(base, VARIANT_IDS.index(variant), rep, 2)


# --------------------------------------------------------------------------
# statistics and curves


def wilcoxon(a: Sequence[float], b: Sequence[float], alpha: float = 0.05) -> tuple[float, bool]:
    """Two-sided rank-sum test (normal approximation, midranks for ties)."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be non-empty")
    both = np.concatenate([a, b])
    if np.all(both == both[0]):
        return 1.0, False
    p = float(mannwhitneyu(a, b, alternative="two-sided", method="asymptotic", use_continuity=False).pvalue)
    return p, p < alpha


def curve(records: Sequence[RunRecord]) -> tuple[np.ndarray, np.ndarray]:
    """Per-FE mean and (population) standard deviation of error traces."""
    if not records:
        raise ValueError("no records")
    lengths = {r.total_fes for r in records}
    if len(lengths) != 1:
        raise ValueError("records must share the same number of FEs")
    traces = np.vstack([r.per_fe_error for r in records])
    return traces.mean(axis=0), traces.std(axis=0)


def emit_curves(records: Sequence[RunRecord], path: Optional[Path] = None) -> str:
    """CSV with columns fe_index, mean_error, std_error; written to ``path`` if given."""
    mean, std = curve(records)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["fe_index", "mean_error", "std_error"])
    for j, (m, s) in enumerate(zip(mean, std)):
        w.writerow([j, repr(float(m)), repr(float(s))])
    text = buf.getvalue()
    if path is not None:
        _atomic_write(Path(path), text)
    return text


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _csv(rows: Iterable[Sequence], header: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x: float) -> str:
    return f"{x:.6e}"


# --------------------------------------------------------------------------
# runs


@dataclass
class RunResult:
    variant: str
    frequency: int
    algorithm: str
    repetition: int
    seed: int
    e_mo: float
    e_mo_per_gen: float
    offline_fes: int
    online_fes: int
    reconvergence: float
    record: Optional[RunRecord] = None

    def row(self) -> list:
        return [self.variant, self.frequency, self.algorithm, self.repetition, self.seed,
                repr(float(self.e_mo)), repr(float(self.e_mo_per_gen)), self.offline_fes, self.online_fes,
                repr(float(self.reconvergence))]


RUN_HEADER = ["variant", "frequency", "algorithm", "repetition", "seed", "e_mo", "e_mo_per_gen",
              "offline_fes", "online_fes", "reconvergence"]


def _run_cell(spec: ExperimentSpec, variant: str, rep: int, cache_path: Optional[str]) -> list[RunResult]:
    """All frequencies and algorithms of one (variant, repetition) cell."""
    cache = CalibrationCache(cache_path)
    problem = get_problem(variant)
    schedule = make_schedule(variant, spec.num_changes)
    m = CoevoConfig(**spec.coevo).sp_size

    archives: dict[str, tuple[np.ndarray, int]] = {}

    def archive_for(algorithm: str) -> tuple[np.ndarray, int]:
        kind = {"CCDO": "coevo", "CCDO-L": "coevo", "FIXED-ENV-SET": "fixed", "CCDO-S": "none"}[algorithm]
        if kind not in archives:
            if kind == "none":
                archives[kind] = (np.empty((0, problem.d_x)), 0)
            else:
                cfg = CoevoConfig(**{**spec.coevo, "seed": offline_seed(spec.seed, variant, rep),
                                     "evolve_environments": kind == "coevo"})
                res = run_offline_search(problem, cfg)
                archives[kind] = (res.solutions, res.fes)
        return archives[kind]

    results = []
    for freq in spec.frequencies:
        seed = online_seed(spec.seed, variant, rep, freq)
        for algorithm in spec.algorithms:
            archive, offline_fes = archive_for(algorithm)
            ls = dict(spec.local_search)
            if algorithm == "CCDO-L":
                ls["strategy"] = "mutation_only"
            online = {**spec.online, "seed": seed, "local_search": LocalSearchConfig(**ls)}
            if algorithm == "CCDO-S":
                online["reinit"] = "random"
                # a random set of the offline set's size
                archive = problem.random_solutions(np.random.default_rng(seed), m)
            record = run_online(problem, schedule, archive, freq, OnlineConfig(**online), cache)
            results.append(RunResult(
                variant, freq, algorithm, rep, seed, record.e_mo(), record.e_mo_per_gen(),
                offline_fes, record.total_fes, reconvergence_rate(record),
                record if spec.write_records else None,
            ))
    return results


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    runs: list[RunResult]

    def values(self, variant: str, frequency: int, algorithm: str) -> np.ndarray:
        return np.array([r.e_mo for r in self.runs
                         if (r.variant, r.frequency, r.algorithm) == (variant, frequency, algorithm)])

    def runs_csv(self) -> str:
        return _csv((r.row() for r in self.runs), RUN_HEADER)

    def aggregate_rows(self) -> list[list]:
        rows = []
        for v in self.spec.variants:
            for f in self.spec.frequencies:
                for a in self.spec.algorithms:
                    vals = self.values(v, f, a)
                    rows.append([v, f, a, len(vals), _fmt(vals.mean()), _fmt(vals.std())])
        return rows

    def aggregate_csv(self) -> str:
        return _csv(self.aggregate_rows(), ["variant", "frequency", "algorithm", "n", "mean_e_mo", "std_e_mo"])

    def comparisons_csv(self, reference: str = "CCDO") -> str:
        rows = []
        if reference in self.spec.algorithms:
            for v in self.spec.variants:
                for f in self.spec.frequencies:
                    ref = self.values(v, f, reference)
                    for a in self.spec.algorithms:
                        if a == reference:
                            continue
                        p, sig = wilcoxon(ref, self.values(v, f, a))
                        rows.append([v, f, reference, a, _fmt(p), int(sig)])
        return _csv(rows, ["variant", "frequency", "reference", "other", "p_value", "significant"])

    def write(self, out_dir: Path) -> None:
        out_dir = Path(out_dir)
        _atomic_write(out_dir / "spec.json", json.dumps(self.spec.to_dict(), indent=2, sort_keys=True) + "\n")
        _atomic_write(out_dir / "runs.csv", self.runs_csv())
        _atomic_write(out_dir / "aggregate.csv", self.aggregate_csv())
        _atomic_write(out_dir / "wilcoxon.csv", self.comparisons_csv())
        if self.spec.write_records:
            groups: dict[tuple, list[RunRecord]] = {}
            for r in self.runs:
                r.record.write_csv(out_dir / "records" / f"{r.variant}_{r.frequency}_{r.algorithm}_{r.repetition}.csv")
                groups.setdefault((r.variant, r.frequency, r.algorithm), []).append(r.record)
            for (v, f, a), recs in groups.items():
                emit_curves(recs, out_dir / "curves" / f"{v}_{f}_{a}.csv")


def _map_cells(fn, cells: list[tuple], threads: int) -> list:
    if threads <= 1:
        return [fn(*c) for c in cells]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn, *c) for c in cells]
        return [f.result() for f in futures]


def _prepare_cache(cache_path: Optional[Path], variants: Sequence[str], num_changes: int) -> Optional[str]:
    """Calibrate all schedule environments once so that workers only read."""
    if cache_path is None:
        return None
    cache = CalibrationCache(cache_path)
    for v in variants:
        for alpha in make_schedule(v, num_changes).env_sequence:
            cache.get(v, alpha)
    cache.save()
    return str(cache_path)


def run_experiment(spec: ExperimentSpec, out_dir: Optional[Path] = None, threads: int = 1,
                   cache_path: Optional[Path] = None) -> ExperimentResult:
    """Offline + online runs for every (variant, frequency, algorithm, repetition)."""
    spec.validate()
    if cache_path is None and out_dir is not None:
        cache_path = Path(out_dir) / "calibration_cache.txt"
    cache_file = _prepare_cache(cache_path, spec.variants, spec.num_changes)
    cells = [(spec, v, rep, cache_file) for v in spec.variants for rep in range(spec.repetitions)]
    runs = [r for cell in _map_cells(_run_cell, cells, threads) for r in cell]
    runs.sort(key=lambda r: (spec.variants.index(r.variant), spec.frequencies.index(r.frequency),
                             spec.algorithms.index(r.algorithm), r.repetition))
    result = ExperimentResult(spec, runs)
    if out_dir is not None:
        result.write(Path(out_dir))
    return result


# --------------------------------------------------------------------------
# fixed-environment ablation


@dataclass
class AblationRow:
    variant: str
    repetition: int
    fixed: float
    coevolutionary: float
    fixed_fes: int
    coevolutionary_fes: int


def _ablation_cell(spec: ExperimentSpec, variant: str, rep: int, cache_path: Optional[str]) -> AblationRow:
    cache = CalibrationCache(cache_path)
    problem = get_problem(variant)
    seed = offline_seed(spec.seed, variant, rep)
    sample = problem.random_envs(np.random.default_rng(sample_seed(spec.seed, variant, rep)), spec.set_quality_samples)
    scores, fes = {}, {}
    for evolve in (False, True):
        res = run_offline_search(problem, CoevoConfig(**{**spec.coevo, "seed": seed, "evolve_environments": evolve}))
        scores[evolve] = set_quality(res.solutions, sample, problem, cache)
        fes[evolve] = res.fes
    return AblationRow(variant, rep, scores[False], scores[True], fes[False], fes[True])


def solution_size_group(variant: str) -> str:
    return "limited" if variant in LIMITED_GROUP else "many"


@dataclass
class AblationResult:
    spec: ExperimentSpec
    rows: list[AblationRow]

    def scores(self, variant: str) -> tuple[np.ndarray, np.ndarray]:
        rows = [r for r in self.rows if r.variant == variant]
        return np.array([r.fixed for r in rows]), np.array([r.coevolutionary for r in rows])

    def runs_csv(self) -> str:
        return _csv(([r.variant, solution_size_group(r.variant), r.repetition, repr(r.fixed),
                      repr(r.coevolutionary), r.fixed_fes, r.coevolutionary_fes] for r in self.rows),
                    ["variant", "solution_size_group", "repetition", "fixed", "coevolutionary",
                     "fixed_fes", "coevolutionary_fes"])

    def table_rows(self) -> list[list]:
        rows = []
        for v in self.spec.variants:
            fixed, coevo = self.scores(v)
            p, sig = wilcoxon(fixed, coevo)
            rows.append([v, solution_size_group(v), f"{_fmt(fixed.mean())}±{_fmt(fixed.std())}",
                         f"{_fmt(coevo.mean())}±{_fmt(coevo.std())}", _fmt(p), int(sig)])
        return rows

    def table_csv(self) -> str:
        return _csv(self.table_rows(), ["variant", "solution_size_group", "fixed", "coevolutionary",
                                        "p_value", "significant"])

    def write(self, out_dir: Path) -> None:
        out_dir = Path(out_dir)
        _atomic_write(out_dir / "spec.json", json.dumps(self.spec.to_dict(), indent=2, sort_keys=True) + "\n")
        _atomic_write(out_dir / "ablation_runs.csv", self.runs_csv())
        _atomic_write(out_dir / "ablation_table.csv", self.table_csv())


def run_fixed_env_ablation(spec: ExperimentSpec, out_dir: Optional[Path] = None, threads: int = 1,
                           cache_path: Optional[Path] = None) -> AblationResult:
    """Offline set search with an evolving vs. a frozen random EP, scored by set quality."""
    spec.validate()
    if cache_path is None and out_dir is not None:
        cache_path = Path(out_dir) / "calibration_cache.txt"
    cells = [(spec, v, rep, str(cache_path) if cache_path else None)
             for v in spec.variants for rep in range(spec.repetitions)]
    rows = _map_cells(_ablation_cell, cells, threads)
    result = AblationResult(spec, rows)
    if out_dir is not None:
        result.write(Path(out_dir))
    return result


# --------------------------------------------------------------------------
# reporting


def _read_runs(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def report(out_dir: Path) -> str:
    """Comparison tables (mean ± std of E_MO per variant and algorithm) from ``runs.csv``.

    For every frequency one table is produced; entries that differ
    significantly from CCDO are marked with ``*``.
    """
    out_dir = Path(out_dir)
    runs = _read_runs(out_dir / "runs.csv")
    variants = list(dict.fromkeys(r["variant"] for r in runs))
    freqs = list(dict.fromkeys(int(r["frequency"]) for r in runs))
    algorithms = list(dict.fromkeys(r["algorithm"] for r in runs))

    def vals(v, f, a):
        return np.array([float(r["e_mo"]) for r in runs
                         if r["variant"] == v and int(r["frequency"]) == f and r["algorithm"] == a])

    lines = []
    for f in freqs:
        lines.append(f"change frequency {f} FEs")
        lines.append("| variant | " + " | ".join(algorithms) + " |")
        lines.append("|---" * (len(algorithms) + 1) + "|")
        for v in variants:
            cells = []
            ref = vals(v, f, "CCDO") if "CCDO" in algorithms else None
            for a in algorithms:
                x = vals(v, f, a)
                mark = ""
                if ref is not None and a != "CCDO" and len(x) and len(ref):
                    mark = "*" if wilcoxon(ref, x)[1] else ""
                cells.append(f"{x.mean():.3e}±{x.std():.3e}{mark}")
            lines.append(f"| {v} | " + " | ".join(cells) + " |")
        lines.append("")
    text = "\n".join(lines)
    _atomic_write(out_dir / "report.md", text)
    return text


def default_output_dir() -> Path:
    return Path(os.environ.get(OUTPUT_ENV_VAR, "results"))
