"""Offline coevolutionary set search plus online local search for dynamic constrained problems."""
from .coevolution import CoevoConfig, OfflineResult, run_offline_search
from .g24 import VARIANT_IDS, CalibrationCache, calibrate, make_schedule, make_variant
from .local_search import LocalSearchConfig, local_descent
from .metrics import e_mo, error_at, set_quality
from .online import OnlineConfig, RunRecord, run_online
from .problem import DcopProblem, Evaluation, FeBudgetClock, compare_solutions, get_problem

__all__ = [
    "CalibrationCache",
    "CoevoConfig",
    "DcopProblem",
    "Evaluation",
    "FeBudgetClock",
    "LocalSearchConfig",
    "OfflineResult",
    "OnlineConfig",
    "RunRecord",
    "VARIANT_IDS",
    "calibrate",
    "compare_solutions",
    "e_mo",
    "error_at",
    "get_problem",
    "local_descent",
    "make_schedule",
    "make_variant",
    "run_offline_search",
    "run_online",
    "set_quality",
]
