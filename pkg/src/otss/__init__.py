"""Benchmark harness and estimators for learning context-dependent decision weights."""

from .benchgen import BenchConfig, generate_benchmark
from .core import DecisionLibrary, LoggedDataset, regret, regret_batch
from .models import METHODS, FitConfig, WeightModel, fit_method, fit_otss

__version__ = "0.1.0"

__all__ = [
    "BenchConfig", "generate_benchmark", "DecisionLibrary", "LoggedDataset", "regret", "regret_batch",
    "METHODS", "FitConfig", "WeightModel", "fit_method", "fit_otss",
]
