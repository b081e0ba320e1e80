"""WeightModel, FitConfig and the parameterised prediction forms shared by all estimators."""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import softmax

from ..core import ContextVector


@dataclass
class FitConfig:
    restarts: int = 5
    max_epochs: int = 3000
    patience: int = 100
    step_size: float = 0.05
    reg_grid: list = field(default_factory=lambda: [1e-4, 1e-3, 1e-2])
    k_grid: list = field(default_factory=lambda: [2, 3, 4, 5, 6])
    rank_grid: list = field(default_factory=lambda: [1, 2, 3])
    hidden: int = 32
    em_max_rounds: int = 200
    em_tol: float = 1e-6
    quadratic_gate: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.restarts < 1 or self.max_epochs < 1 or self.patience < 1 or self.step_size <= 0:
            raise ValueError("restarts, max_epochs, patience and step_size must be positive")
        if not self.reg_grid or min(self.reg_grid) < 0:
            raise ValueError("reg_grid must be a nonempty list of nonnegative values")
        if not self.k_grid or min(self.k_grid) < 1:
            raise ValueError("k_grid entries must be >= 1")
        if not self.rank_grid or min(self.rank_grid) < 1:
            raise ValueError("rank_grid entries must be >= 1")

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)


def context_features(X):
    """Affine context features (1, x_full)."""
    X = np.atleast_2d(X)
    return np.hstack([np.ones((X.shape[0], 1)), X])


def gate_features(X, quadratic=False):
    phi = context_features(X)
    if quadratic:
        phi = np.hstack([phi, np.atleast_2d(X) ** 2])
    return phi


def _as_matrix(X):
    if isinstance(X, ContextVector):
        return X.full()[None, :]
    if isinstance(X, (list, tuple)) and X and isinstance(X[0], ContextVector):
        return np.vstack([x.full() for x in X])
    return np.atleast_2d(np.asarray(X, dtype=float))


def _gate_probs(p, X):
    F = gate_features(X, bool(p["quadratic"][0]))
    A = F @ p["gate"].T / p["temperature"][0]
    if p["hard"][0]:
        return np.eye(A.shape[1])[np.argmax(A, axis=1)]
    return softmax(A, axis=1)


def _predict_constant(p, X):
    return np.tile(p["beta"], (X.shape[0], 1))


def _predict_linear(p, X):
    return context_features(X) @ p["W"].T


def _predict_lowrank(p, X):
    return context_features(X) @ p["V"] @ p["U"].T


def _predict_mlp(p, X):
    H = np.tanh(context_features(X) @ p["A"].T)
    return H @ p["C"].T + p["c0"]


def _predict_centroid(p, X):
    d2 = ((X[:, None, :] - p["centroids"][None, :, :]) ** 2).sum(axis=2)
    return p["betas"][np.argmin(d2, axis=1)]


def _predict_gated(p, X):
    return _gate_probs(p, X) @ p["experts"]


PREDICTORS = {
    "constant": _predict_constant,
    "linear": _predict_linear,
    "lowrank": _predict_lowrank,
    "mlp": _predict_mlp,
    "centroid": _predict_centroid,
    "gated": _predict_gated,
}


@dataclass
class WeightModel:
    """A fitted map from contexts to decision weights.

    ``params`` fully determines ``predict_w``; the baseline, if any, is kept
    in ``params["baseline"]`` but never enters the returned weights.
    """

    name: str
    kind: str
    params: dict
    param_count: int
    fit_seconds: float = 0.0
    meta: dict = field(default_factory=dict)

    def predict_w(self, X):
        X = _as_matrix(X)
        return PREDICTORS[self.kind](self.params, X)

    @property
    def has_gate(self):
        return self.kind == "gated"

    def gate(self, X):
        if not self.has_gate:
            raise TypeError(f"{self.name} has no gate")
        return _gate_probs(self.params, _as_matrix(X))

    @property
    def experts(self):
        return self.params["experts"] if self.has_gate else None

    # -- serialization ---------------------------------------------------

    def to_dict(self):
        from ..benchgen import hexify

        return {
            "format": "otss-model/1",
            "name": self.name,
            "kind": self.kind,
            "param_count": self.param_count,
            "fit_seconds": float(self.fit_seconds).hex(),
            "meta": self.meta,
            "params": {k: hexify(v) for k, v in self.params.items()},
        }

    @classmethod
    def from_dict(cls, d):
        from ..benchgen import unhex

        if d.get("format") != "otss-model/1":
            raise ValueError(f"unsupported model format {d.get('format')!r}")
        return cls(
            d["name"], d["kind"], {k: unhex(v) for k, v in d["params"].items()},
            int(d["param_count"]), float.fromhex(d["fit_seconds"]), d["meta"],
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def gated_params(gate, experts, baseline, temperature=1.0, hard=False, quadratic=False):
    return {
        "gate": np.asarray(gate, dtype=float),
        "experts": np.asarray(experts, dtype=float),
        "baseline": np.asarray(baseline, dtype=float),
        "temperature": np.array([float(temperature)]),
        "hard": np.array([1.0 if hard else 0.0]),
        "quadratic": np.array([1.0 if quadratic else 0.0]),
    }


class timed:
    """Context manager recording monotone wall-clock seconds."""

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start
        return False
