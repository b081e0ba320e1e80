"""Domain types, decision scoring and exact regret over finite libraries."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DimensionError(ValueError):
    pass


def _vec(values, name="vector"):
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


@dataclass(frozen=True)
class FactorVector:
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _vec(self.values, "factor vector"))

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class ContextVector:
    signal: np.ndarray
    nuisance: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        object.__setattr__(self, "signal", _vec(self.signal, "signal"))
        object.__setattr__(self, "nuisance", _vec(self.nuisance, "nuisance"))
        if len(self.signal) < 1:
            raise DimensionError("context needs at least one signal coordinate")

    def full(self):
        return np.concatenate([self.signal, self.nuisance])

    @classmethod
    def from_full(cls, x, d_sig):
        x = np.asarray(x, dtype=float)
        return cls(x[:d_sig], x[d_sig:])


class DecisionLibrary:
    """Finite feasible set: an (M, J) matrix of factor vectors.

    The same library is scored for every context; rows are immutable.
    """

    def __init__(self, factors):
        if isinstance(factors, DecisionLibrary):
            factors = factors.factors
        rows = [f.values if isinstance(f, FactorVector) else f for f in factors]
        Z = np.array(rows, dtype=float)
        if Z.ndim != 2:
            raise DimensionError("library factors must all share one length J")
        if Z.shape[0] < 1:
            raise ValueError("library is empty")
        if not np.all(np.isfinite(Z)):
            raise ValueError("library contains non-finite factors")
        Z.setflags(write=False)
        self.factors = Z

    @property
    def M(self):
        return self.factors.shape[0]

    @property
    def J(self):
        return self.factors.shape[1]

    def __len__(self):
        return self.M

    def __getitem__(self, m):
        return FactorVector(self.factors[m])

    def __eq__(self, other):
        return isinstance(other, DecisionLibrary) and np.array_equal(self.factors, other.factors)

    def __repr__(self):
        return f"DecisionLibrary(M={self.M}, J={self.J})"


@dataclass(frozen=True)
class LoggedRecord:
    context: ContextVector
    decision_index: int
    outcome: int


@dataclass
class LoggedDataset:
    """Logged triples stored column-wise.

    ``X`` holds full contexts (signal coordinates first), ``decisions`` the
    logged library indices and ``y`` the binary outcomes.
    """

    X: np.ndarray
    decisions: np.ndarray
    y: np.ndarray
    library: DecisionLibrary
    d_sig: int

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.decisions = np.asarray(self.decisions, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=float)
        n = self.X.shape[0]
        if self.X.ndim != 2 or self.decisions.shape != (n,) or self.y.shape != (n,):
            raise DimensionError("X, decisions and y must describe the same n records")
        if n and (self.decisions.min() < 0 or self.decisions.max() >= self.library.M):
            raise ValueError("decision index outside the library")
        if not np.all((self.y == 0) | (self.y == 1)):
            raise ValueError("outcomes must be binary")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def D(self):
        return self.X.shape[1]

    @property
    def J(self):
        return self.library.J

    @property
    def Z(self):
        """Factor vectors exposed by the logged decisions, shape (n, J)."""
        return self.library.factors[self.decisions]

    def subset(self, idx):
        idx = np.asarray(idx)
        return LoggedDataset(self.X[idx], self.decisions[idx], self.y[idx], self.library, self.d_sig)

    def head(self, n):
        return self.subset(np.arange(n))

    def records(self):
        for x, d, y in zip(self.X, self.decisions, self.y):
            yield LoggedRecord(ContextVector.from_full(x, self.d_sig), int(d), int(y))


@dataclass(frozen=True)
class RegretRecord:
    oracle_index: int
    chosen_index: int
    regret: float
    margin_gamma: float
    perturb_delta: float


def _as_factors(lib):
    if isinstance(lib, DecisionLibrary):
        return lib.factors
    return np.asarray(lib, dtype=float)


def score(w, z):
    w = _vec(w, "weight")
    z = _vec(z.values if isinstance(z, FactorVector) else z, "factor vector")
    if w.shape != z.shape:
        raise DimensionError(f"weight has length {len(w)} but factor vector has length {len(z)}")
    return float(w @ z)


def argmax_decision(w, lib):
    """Index of the best library entry under ``w``; ties go to the lowest index."""
    Z = _as_factors(lib)
    if Z.shape[0] == 0:
        raise ValueError("library is empty")
    w = _vec(w, "weight")
    if Z.shape[1] != len(w):
        raise DimensionError(f"weight has length {len(w)} but library has J={Z.shape[1]}")
    return int(np.argmax(Z @ w))


def regret(w_star, w_hat, lib):
    w_star = _vec(w_star, "true weight")
    w_hat = _vec(w_hat, "estimated weight")
    if w_star.shape != w_hat.shape:
        raise DimensionError("true and estimated weights differ in length")
    out = regret_batch(w_star[None, :], w_hat[None, :], lib)
    return RegretRecord(
        int(out["oracle"][0]),
        int(out["chosen"][0]),
        float(out["regret"][0]),
        float(out["gamma"][0]),
        float(out["delta"][0]),
    )


def regret_batch(W_star, W_hat, lib):
    """Vectorised regret, margin and perturbation for n contexts.

    Returns a dict of arrays: ``oracle``, ``chosen``, ``regret``, ``gamma``
    and ``delta``. ``gamma`` is 0 whenever the oracle optimum is not unique
    (exact score equality).
    """
    Z = _as_factors(lib)
    W_star = np.atleast_2d(np.asarray(W_star, dtype=float))
    W_hat = np.atleast_2d(np.asarray(W_hat, dtype=float))
    if W_star.shape != W_hat.shape or W_star.shape[1] != Z.shape[1]:
        raise DimensionError(
            f"weight shapes {W_star.shape}/{W_hat.shape} incompatible with library J={Z.shape[1]}"
        )
    S_true = W_star @ Z.T
    S_hat = W_hat @ Z.T
    rows = np.arange(S_true.shape[0])
    oracle = np.argmax(S_true, axis=1)
    chosen = np.argmax(S_hat, axis=1)
    best = S_true[rows, oracle]
    reg = best - S_true[rows, chosen]
    if Z.shape[0] > 1:
        n_best = np.sum(S_true == best[:, None], axis=1)
        others = S_true.copy()
        others[rows, oracle] = -np.inf
        gamma = np.where(n_best > 1, 0.0, best - others.max(axis=1))
    else:
        gamma = np.full(S_true.shape[0], np.inf)
    delta = np.abs(S_hat - S_true).max(axis=1)
    return {"oracle": oracle, "chosen": chosen, "regret": reg, "gamma": gamma, "delta": delta}


def transfer_violations(out):
    """Count rows breaking R <= 2*delta*1{gamma <= 2*delta}."""
    reg, gamma, delta = out["regret"], out["gamma"], out["delta"]
    bound = np.where(gamma <= 2 * delta, 2 * delta, 0.0)
    # exact score arithmetic: allow only float rounding of the score differences
    slack = 1e-12 * (1.0 + np.abs(bound))
    return int(np.sum(reg > bound + slack))
