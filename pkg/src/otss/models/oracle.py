"""Oracle-gate soft estimator (theory harness) and expert label alignment."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from .base import WeightModel, _as_matrix, context_features, timed
from .logistic import RIDGE_FLOOR, fit_logistic

log = logging.getLogger(__name__)


@dataclass
class OracleGateModel(WeightModel):
    """Soft model whose gate is the known truth gate; not serialisable."""

    gate_fn: object = None

    def predict_w(self, X):
        return self.gate_fn(_as_matrix(X)) @ self.params["experts"]

    @property
    def has_gate(self):
        return True

    def gate(self, X):
        return self.gate_fn(_as_matrix(X))

    def to_dict(self):
        raise TypeError("oracle-gate models hold a callable gate and cannot be serialised")


def _gate_callable(truth):
    if callable(truth) and not hasattr(truth, "gate"):
        return truth
    return truth.gate


def oracle_design(X, Z, alpha, baseline_features=None):
    """Augmented features (b(x), alpha_1 z, ..., alpha_K z)."""
    phi = context_features(X) if baseline_features is None else baseline_features
    n, K = alpha.shape
    aug = (alpha[:, :, None] * Z[:, None, :]).reshape(n, K * Z.shape[1])
    return np.hstack([phi, aug]), phi.shape[1]


def fit_oracle_gate_soft(train, truth, cfg=None, baseline_features=None):
    """Ridge-free logistic MLE with the true gate plugged in.

    ``truth`` is either an object with ``gate(X)`` or a callable returning the
    ``(n, K)`` gate matrix. Only the numerical floor ``RIDGE_FLOOR`` enters
    the Newton system; if the Fisher information is near singular the model
    is flagged in ``meta["singular_fisher"]``.
    """
    gate_fn = _gate_callable(truth)
    with timed() as t:
        alpha = gate_fn(train.X)
        F, P = oracle_design(train.X, train.Z, alpha, baseline_features)
        theta, info = fit_logistic(F, train.y, 0.0, np.zeros(F.shape[1]), max_iter=200)
        p = 1.0 / (1.0 + np.exp(-(F @ theta)))
        fisher = (F * (p * (1 - p))[:, None]).T @ F / train.n
        ev = np.linalg.eigvalsh(fisher)
        singular = bool(ev[0] <= 1e3 * RIDGE_FLOOR * max(ev[-1], 1.0))
    if singular:
        log.warning("oracle-gate fit: near-singular Fisher information (min eigenvalue %.3g)", ev[0])
    K = alpha.shape[1]
    experts = theta[P:].reshape(K, train.J)
    return OracleGateModel(
        "oracle_gate", "oracle_gate", {"experts": experts, "baseline": theta[:P]}, len(theta), t.seconds,
        {"singular_fisher": singular, "converged": info["converged"]}, gate_fn=gate_fn,
    )


def align_experts(estimated, truth):
    """Best relabelling of estimated experts onto true ones by exhaustive search.

    Returns ``(perm, errors)`` where ``estimated[perm[k]]`` is matched with
    ``truth[k]`` and ``errors[k]`` is the squared distance of that pair.
    """
    A = np.atleast_2d(np.asarray(estimated, dtype=float))
    B = np.atleast_2d(np.asarray(truth, dtype=float))
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch {A.shape} vs {B.shape}")
    K = len(B)
    if K > 8:
        raise ValueError("align_experts supports K <= 8")
    cost = ((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=2)  # cost[i, k]: estimated i vs true k
    best, best_perm = np.inf, None
    for perm in itertools.permutations(range(K)):
        c = cost[list(perm), range(K)].sum()
        if c < best:
            best, best_perm = c, perm
    perm = np.array(best_perm)
    return perm, cost[perm, np.arange(K)]
