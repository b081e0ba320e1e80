"""Seed-level metrics, paired bootstrap intervals, gate entropy and timing."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .core import regret_batch

# fixed export order for SeedSummary rows
SEED_COLUMNS = [
    "benchmark", "seed", "method", "status", "weight_mse", "mean_regret", "match_rate",
    "gate_entropy_eff", "transfer_violations", "param_count", "selected_hypers",
]


@dataclass
class SeedSummary:
    seed: int
    method: str
    weight_mse: float
    mean_regret: float
    match_rate: float
    gate_entropy_eff: float | None = None
    fit_seconds: float = 0.0
    selected_hypers: dict = field(default_factory=dict)
    transfer_violations: int = 0
    param_count: int = 0


@dataclass
class BootstrapResult:
    method_a: str
    method_b: str
    mean_diff: float
    ci_lo: float
    ci_hi: float
    resamples: int


def evaluate(model, X_eval, W_eval, lib):
    """Weight MSE, mean regret and oracle-match rate of ``model`` on an
    evaluation set with known true weights. Also returns the raw regret
    arrays for auditing."""
    W_hat = model.predict_w(X_eval)
    if not np.all(np.isfinite(W_hat)):
        raise FloatingPointError(f"{model.name} produced non-finite weights")
    out = regret_batch(W_eval, W_hat, lib)
    metrics = {
        "weight_mse": float(np.mean(np.sum((W_hat - W_eval) ** 2, axis=1))),
        "mean_regret": float(out["regret"].mean()),
        "match_rate": float(np.mean(out["chosen"] == out["oracle"])),
    }
    return metrics, out


def gate_effective_experts(model, contexts):
    """exp of the mean natural-log Shannon entropy of the gate; None if ungated."""
    if not getattr(model, "has_gate", False):
        return None
    A = model.gate(contexts)
    with np.errstate(divide="ignore", invalid="ignore"):
        H = -np.sum(np.where(A > 0, A * np.log(A), 0.0), axis=1)
    return float(np.exp(H.mean()))


def paired_bootstrap(a, b, resamples=5000, rng=None, method_a="a", method_b="b"):
    """Percentile CI for mean(a - b) from resampling paired seeds with replacement."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 1 or len(a) < 2:
        raise ValueError("need at least two paired seeds")
    rng = np.random.default_rng(0) if rng is None else rng
    diff = a - b
    idx = rng.integers(0, len(diff), size=(resamples, len(diff)))
    boot = diff[idx].mean(axis=1)
    mean = float(diff.mean())
    lo, hi = np.percentile(boot, [2.5, 97.5])
    # constant differences: percentiles can drift from the mean by one ulp
    lo, hi = min(float(lo), mean), max(float(hi), mean)
    return BootstrapResult(method_a, method_b, mean, lo, hi, resamples)


def time_fit(fit):
    """Run ``fit()`` and return ``(result, seconds)`` on the monotone clock."""
    t0 = time.perf_counter()
    res = fit()
    return res, time.perf_counter() - t0
