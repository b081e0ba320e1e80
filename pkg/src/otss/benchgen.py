"""Seeded generators for the two-expert overlap and matched K-expert benchmarks."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, softmax

from .core import ContextVector, DecisionLibrary, FactorVector, LoggedDataset

FAMILIES = ("two_expert", "matched_k")
MODES = ("soft", "hard")


def stream(seed, tag):
    """Independent Philox stream keyed by (master seed, purpose tag).

    Adding a new tag never perturbs the draws of existing ones.
    """
    digest = hashlib.sha256(tag.encode()).digest()
    key = int.from_bytes(digest[:8], "little")
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), key])
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class BenchConfig:
    family: str = "two_expert"
    mode: str = "soft"
    n_total: int = 4000
    n_train: int = 2000
    n_eval: int | None = None
    d_sig: int = 4
    d_nuis: int = 8
    J: int = 6
    M: int = 40
    K: int = 2
    tau: float = 1.2
    target_top_prob: float = 0.75
    nuisance_scale: float = 0.5
    rand_level: float = 0.0
    expert_scale: float = 3.0
    baseline_scale: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown benchmark family {self.family!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown truth mode {self.mode!r}")
        if self.n_train > self.n_total:
            raise ValueError("n_train exceeds n_total")
        if self.n_train < 2 * self.n_val:
            raise ValueError(f"n_train={self.n_train} too small for n_val={self.n_val}")
        if min(self.d_sig, self.J, self.M, self.K) < 1 or self.d_nuis < 0:
            raise ValueError("dimensions must be positive")
        if self.M < 2:
            raise ValueError("library needs at least two decisions")
        if self.nuisance_scale < 0 or self.rand_level < 0 or self.tau < 0:
            raise ValueError("tau, nuisance_scale and rand_level must be nonnegative")
        if self.family == "two_expert" and self.d_sig < 1:
            raise ValueError("two-expert family needs a signal coordinate")
        if self.eval_size < 1:
            raise ValueError("evaluation set is empty")

    @property
    def D(self):
        return self.d_sig + self.d_nuis

    @property
    def n_val(self):
        return max(100, int(math.floor(0.2 * self.n_train)))

    @property
    def eval_size(self):
        return self.n_eval if self.n_eval is not None else self.n_total - self.n_train

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def to_dict(self):
        return dataclasses.asdict(self)


def _features(X):
    X = np.atleast_2d(X)
    return np.hstack([np.ones((X.shape[0], 1)), X])


@dataclass
class TwoExpertTruth:
    beta1: np.ndarray
    beta2: np.ndarray
    tau: float
    u: np.ndarray
    baseline_coef: np.ndarray
    d_sig: int

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        if not math.isclose(float(np.linalg.norm(self.u)), 1.0, rel_tol=1e-9):
            raise ValueError("gate direction u must have unit norm")
        if np.array_equal(self.beta1, self.beta2):
            raise ValueError("experts must differ")

    family = "two_expert"

    @property
    def experts(self):
        return np.vstack([self.beta1, self.beta2])

    @property
    def K(self):
        return 2

    def lam(self, X):
        X = np.atleast_2d(X)
        return expit(self.tau * (X[:, : self.d_sig] @ self.u))

    def gate(self, X):
        lam = self.lam(X)
        return np.column_stack([lam, 1.0 - lam])

    def weights(self, X):
        lam = self.lam(X)[:, None]
        return lam * self.beta1 + (1.0 - lam) * self.beta2

    def baseline(self, X):
        return _features(X) @ self.baseline_coef

    def gate_spec(self, D):
        """Gate as a linear softmax over (1, x_full): logits (tau u'x_sig, 0)."""
        G = np.zeros((2, D + 1))
        G[0, 1 : 1 + self.d_sig] = self.tau * self.u
        return {"matrix": G, "temperature": 1.0, "hard": False}

    def arrays(self):
        return {
            "beta1": self.beta1,
            "beta2": self.beta2,
            "tau": np.array([self.tau]),
            "u": self.u,
            "baseline_coef": self.baseline_coef,
            "d_sig": np.array([self.d_sig], dtype=float),
        }

    @classmethod
    def from_arrays(cls, a):
        return cls(a["beta1"], a["beta2"], float(a["tau"][0]), a["u"], a["baseline_coef"], int(a["d_sig"][0]))


@dataclass
class MatchedKTruth:
    experts: np.ndarray
    mode: str
    gate_directions: np.ndarray
    temperature: float
    rand_level: float
    baseline_coef: np.ndarray
    d_sig: int

    family = "matched_k"

    @property
    def K(self):
        return self.experts.shape[0]

    def gate_scores(self, X):
        X = np.atleast_2d(X)
        return X[:, : self.d_sig] @ self.gate_directions.T

    def soft_gate(self, X, temperature=None):
        t = self.temperature if temperature is None else temperature
        return softmax(self.gate_scores(X) / t, axis=1)

    def gate(self, X):
        if self.mode == "hard":
            h = np.argmax(self.gate_scores(X), axis=1)
            return np.eye(self.K)[h]
        return self.soft_gate(X)

    def weights(self, X):
        return self.gate(X) @ self.experts

    def baseline(self, X):
        return _features(X) @ self.baseline_coef

    def gate_spec(self, D):
        G = np.zeros((self.K, D + 1))
        G[:, 1 : 1 + self.d_sig] = self.gate_directions
        return {"matrix": G, "temperature": float(self.temperature), "hard": self.mode == "hard"}

    def arrays(self):
        return {
            "experts": self.experts,
            "mode": np.array([1.0 if self.mode == "hard" else 0.0]),
            "gate_directions": self.gate_directions,
            "temperature": np.array([self.temperature]),
            "rand_level": np.array([self.rand_level]),
            "baseline_coef": self.baseline_coef,
            "d_sig": np.array([self.d_sig], dtype=float),
        }

    @classmethod
    def from_arrays(cls, a):
        return cls(
            a["experts"],
            "hard" if a["mode"][0] == 1.0 else "soft",
            a["gate_directions"],
            float(a["temperature"][0]),
            float(a["rand_level"][0]),
            a["baseline_coef"],
            int(a["d_sig"][0]),
        )


def true_weight_two_expert(truth, x):
    x = x.full() if isinstance(x, ContextVector) else np.asarray(x, dtype=float)
    return truth.weights(x[None, :])[0]


def true_weight_matched_k(truth, x):
    x = x.full() if isinstance(x, ContextVector) else np.asarray(x, dtype=float)
    return truth.weights(x[None, :])[0]


def sample_contexts(cfg, rng, n):
    # one row-major block so the first n rows never depend on the total drawn
    X = rng.standard_normal((n, cfg.d_sig + cfg.d_nuis))
    X[:, cfg.d_sig :] *= cfg.nuisance_scale
    return X


def sample_context(cfg, rng):
    x = sample_contexts(cfg, rng, 1)[0]
    return ContextVector(x[: cfg.d_sig], x[cfg.d_sig :])


def outcome_probability(truth, X, Z):
    return expit(truth.baseline(X) + np.sum(truth.weights(X) * Z, axis=1))


def simulate_outcome(truth, x, z, rng):
    x = x.full() if isinstance(x, ContextVector) else np.asarray(x, dtype=float)
    z = z.values if isinstance(z, FactorVector) else np.asarray(z, dtype=float)
    p = outcome_probability(truth, x[None, :], z[None, :])[0]
    return int(rng.random() < p)


def mean_top_prob(truth, X, temperature):
    return float(truth.soft_gate(X, temperature).max(axis=1).mean())


class CalibrationError(RuntimeError):
    pass


def calibrate_temperature(truth, contexts, target_top_prob, lo=1e-3, hi=1e3, tol=1e-3):
    """Bisection (on log temperature) for a target mean top gate probability.

    The mean top probability decreases monotonically in the temperature.
    """
    X = np.atleast_2d(contexts)
    if X.shape[0] < 1000:
        raise ValueError("calibration needs at least 1000 contexts")
    K = truth.K
    if not 1.0 / K < target_top_prob < 1.0:
        raise CalibrationError(f"target {target_top_prob} outside (1/K, 1) for K={K}")
    f_lo, f_hi = mean_top_prob(truth, X, lo), mean_top_prob(truth, X, hi)
    if not f_hi <= target_top_prob <= f_lo:
        raise CalibrationError(
            f"target top probability {target_top_prob} not bracketed: "
            f"t={lo} gives {f_lo:.4f}, t={hi} gives {f_hi:.4f}"
        )
    a, b = math.log(lo), math.log(hi)
    for _ in range(200):
        mid = 0.5 * (a + b)
        f = mean_top_prob(truth, X, math.exp(mid))
        if abs(f - target_top_prob) < tol:
            return math.exp(mid)
        if f > target_top_prob:
            a = mid
        else:
            b = mid
    return math.exp(0.5 * (a + b))


def make_truth(cfg):
    rng = stream(cfg.seed, "truth")
    baseline_coef = cfg.baseline_scale * rng.standard_normal(cfg.D + 1)
    if cfg.family == "two_expert":
        beta1 = cfg.expert_scale * rng.standard_normal(cfg.J)
        beta2 = cfg.expert_scale * rng.standard_normal(cfg.J)
        u = rng.standard_normal(cfg.d_sig)
        u /= np.linalg.norm(u)
        return TwoExpertTruth(beta1, beta2, cfg.tau, u, baseline_coef, cfg.d_sig)

    experts = cfg.expert_scale * rng.standard_normal((cfg.K, cfg.J))
    base = _base_directions(cfg.K, cfg.d_sig)
    perturb = rng.standard_normal((cfg.K, cfg.d_sig))
    directions = base + cfg.rand_level * perturb
    truth = MatchedKTruth(experts, cfg.mode, directions, 1.0, cfg.rand_level, baseline_coef, cfg.d_sig)
    if cfg.K > 1:
        calib = sample_contexts(cfg, stream(cfg.seed, "calibration"), 5000)
        truth.temperature = calibrate_temperature(truth, calib, cfg.target_top_prob)
    return truth


def _base_directions(K, d_sig):
    # unperturbed score geometry: K unit directions spread evenly in the first signal plane
    G = np.zeros((K, d_sig))
    angles = 2 * np.pi * np.arange(K) / K
    G[:, 0] = np.cos(angles)
    if d_sig > 1:
        G[:, 1] = np.sin(angles)
    return G


def make_library(cfg):
    rng = stream(cfg.seed, "library")
    return DecisionLibrary(rng.uniform(-1.0, 1.0, size=(cfg.M, cfg.J)))


def logged_records(cfg, truth, lib, n, tag="train"):
    """First ``n`` records of a logged stream; a prefix of any longer draw."""
    X = sample_contexts(cfg, stream(cfg.seed, tag + "/x"), n)
    d = stream(cfg.seed, tag + "/d").integers(0, lib.M, size=n)
    U = stream(cfg.seed, tag + "/y").random(n)
    p = outcome_probability(truth, X, lib.factors[d])
    y = (U < p).astype(float)
    return LoggedDataset(X, d, y, lib, cfg.d_sig)


@dataclass
class Benchmark:
    config: BenchConfig
    truth: object
    library: DecisionLibrary
    train: LoggedDataset
    val: LoggedDataset
    X_eval: np.ndarray
    W_eval: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def pool(self):
        """Training portion before the validation carve-out."""
        t, v = self.train, self.val
        return LoggedDataset(
            np.vstack([t.X, v.X]), np.concatenate([t.decisions, v.decisions]),
            np.concatenate([t.y, v.y]), self.library, t.d_sig,
        )

    def eval_contexts(self):
        d = self.config.d_sig
        return [ContextVector(x[:d], x[d:]) for x in self.X_eval]


def generate_benchmark(cfg, family=None, mode=None):
    """Build truth, library, fit/validation split and the held-out eval set.

    The validation split is the last ``n_val`` records of the training pool.
    Evaluation contexts come from their own stream, so they do not move when
    ``n_train`` changes and ``n_eval`` is pinned.
    """
    if family is not None or mode is not None:
        cfg = cfg.replace(family=family or cfg.family, mode=mode or cfg.mode)
    truth = make_truth(cfg)
    lib = make_library(cfg)
    pool = logged_records(cfg, truth, lib, cfg.n_train)
    n_fit = cfg.n_train - cfg.n_val
    train = pool.subset(np.arange(n_fit))
    val = pool.subset(np.arange(n_fit, cfg.n_train))
    X_eval = sample_contexts(cfg, stream(cfg.seed, "eval/x"), cfg.eval_size)
    return Benchmark(cfg, truth, lib, train, val, X_eval, truth.weights(X_eval))


# -- serialization ---------------------------------------------------------

FORMAT = "otss-benchmark/1"


def hexify(a):
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "hex": [float(v).hex() for v in a.ravel()]}


def unhex(d):
    vals = np.array([float.fromhex(h) for h in d["hex"]], dtype=float)
    return vals.reshape(d["shape"])


def _dataset_dict(ds):
    return {"X": hexify(ds.X), "decisions": ds.decisions.tolist(), "y": ds.y.astype(int).tolist()}


def _dataset_from(d, lib, d_sig):
    return LoggedDataset(unhex(d["X"]), np.array(d["decisions"], dtype=np.int64), np.array(d["y"], dtype=float), lib, d_sig)


def benchmark_to_dict(bench):
    return {
        "format": FORMAT,
        "config": bench.config.to_dict(),
        "truth": {"family": bench.truth.family, **{k: hexify(v) for k, v in bench.truth.arrays().items()}},
        "library": hexify(bench.library.factors),
        "records": {"train": _dataset_dict(bench.train), "val": _dataset_dict(bench.val)},
        "eval": {"X": hexify(bench.X_eval), "W": hexify(bench.W_eval)},
    }


def benchmark_from_dict(d):
    if d.get("format") != FORMAT:
        raise ValueError(f"unsupported benchmark format {d.get('format')!r}")
    cfg = BenchConfig(**d["config"])
    t = dict(d["truth"])
    family = t.pop("family")
    arrays = {k: unhex(v) for k, v in t.items()}
    truth = TwoExpertTruth.from_arrays(arrays) if family == "two_expert" else MatchedKTruth.from_arrays(arrays)
    lib = DecisionLibrary(unhex(d["library"]))
    train = _dataset_from(d["records"]["train"], lib, cfg.d_sig)
    val = _dataset_from(d["records"]["val"], lib, cfg.d_sig)
    return Benchmark(cfg, truth, lib, train, val, unhex(d["eval"]["X"]), unhex(d["eval"]["W"]))


def save_benchmark(bench, path):
    Path(path).write_text(json.dumps(benchmark_to_dict(bench), indent=1))


def load_benchmark(path):
    return benchmark_from_dict(json.loads(Path(path).read_text()))
