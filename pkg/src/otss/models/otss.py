"""Output-targeted soft segmentation: softmax gate over contexts, a bank of
expert weight vectors, and a shared context baseline, trained end to end on
logged Bernoulli outcomes."""

from __future__ import annotations

import logging

import numpy as np
from scipy.special import expit, softmax

from .base import WeightModel, context_features, gate_features, gated_params, timed
from .contextual import pooled_solution
from .logistic import log_loss
from .optim import DivergenceError, adam_train

log = logging.getLogger(__name__)


def otss_forward(params, G, phi, Z):
    alpha = softmax(G @ params["gate"].T, axis=1)
    W = alpha @ params["experts"]
    eta = phi @ params["baseline"] + np.sum(W * Z, axis=1)
    return alpha, W, eta


def otss_loss_grad(params, G, phi, Z, y, lam):
    """Penalised mean log-loss and its gradient.

    ``G`` are gate features, ``phi`` baseline features. The ridge term covers
    gate and experts, never the baseline.
    """
    gate, experts = params["gate"], params["experts"]
    alpha, W, eta = otss_forward(params, G, phi, Z)
    n = len(y)
    loss = log_loss(eta, y) + lam * (float((gate * gate).sum()) + float((experts * experts).sum()))
    r = (expit(eta) - y) / n
    dW = r[:, None] * Z
    d_alpha = dW @ experts.T
    dA = alpha * (d_alpha - np.sum(alpha * d_alpha, axis=1, keepdims=True))
    grads = {
        "gate": dA.T @ G + 2 * lam * gate,
        "baseline": phi.T @ r,
        "experts": alpha.T @ dW + 2 * lam * experts,
    }
    return loss, grads


def otss_init(train, K, lam, rng, quadratic=False):
    b, beta, _ = pooled_solution(train, lam)
    Pg = gate_features(train.X[:1], quadratic).shape[1]
    return {
        "gate": 0.1 * rng.standard_normal((K, Pg)),
        "baseline": b.copy(),
        "experts": beta[None, :] + 0.2 * rng.standard_normal((K, len(beta))),
    }


def fit_otss(train, val, K, cfg):
    """Restart-and-select over ``cfg.restarts`` inits for every ridge level.

    Keeps the run with the lowest validation log-loss. Diverging restarts are
    logged and skipped; if every restart diverges a :class:`DivergenceError`
    is raised.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if train.n == 0:
        raise ValueError("empty training set")
    quad = cfg.quadratic_gate
    with timed() as t:
        G, phi, Z, y = gate_features(train.X, quad), context_features(train.X), train.Z, train.y
        Gv, phv, Zv, yv = gate_features(val.X, quad), context_features(val.X), val.Z, val.y

        def val_loss(p):
            return log_loss(otss_forward(p, Gv, phv, Zv)[2], yv)

        best = None
        runs = []
        for lam in cfg.reg_grid:
            for r in range(cfg.restarts):
                rng = np.random.default_rng([cfg.seed, K, r])
                p0 = otss_init(train, K, lam, rng, quad)
                try:
                    p, info = adam_train(
                        lambda p: otss_loss_grad(p, G, phi, Z, y, lam), p0, val_loss,
                        cfg.step_size, cfg.max_epochs, cfg.patience,
                    )
                except DivergenceError as e:
                    log.warning("OTSS restart %d (ridge %g) aborted: %s", r, lam, e)
                    continue
                runs.append({"ridge": lam, "restart": r, **info})
                if best is None or info["val_loss"] < best[0]:
                    best = (info["val_loss"], lam, r, p, info)
        if best is None:
            raise DivergenceError("all OTSS restarts diverged")
    vl, lam, r, p, info = best
    params = gated_params(p["gate"], p["experts"], p["baseline"], quadratic=quad)
    count = p["gate"].size + p["experts"].size + p["baseline"].size
    return WeightModel(
        "otss", "gated", params, count, t.seconds,
        {"K": K, "ridge": lam, "restart": r, "val_loss": vl,
         "val_loss_epoch0": info["val_loss_epoch0"], "epochs": info["epochs"], "runs": runs},
    )
