"""Pooled logistic fit and the direct contextual baselines (linear, low-rank, MLP)."""

from __future__ import annotations

import logging

import numpy as np
from scipy.special import expit

from .base import WeightModel, context_features, timed
from .logistic import fit_logistic, log_loss
from .optim import DivergenceError, adam_train

log = logging.getLogger(__name__)


def pooled_design(ds):
    phi = context_features(ds.X)
    F = np.hstack([phi, ds.Z])
    mask = np.r_[np.zeros(phi.shape[1]), np.ones(ds.J)]
    return F, mask


def pooled_solution(train, ridge):
    """(baseline, beta, theta) of the ridge pooled logistic fit."""
    F, mask = pooled_design(train)
    theta, _ = fit_logistic(F, train.y, ridge, mask)
    P = train.D + 1
    return theta[:P], theta[P:], theta


def fit_pooled(train, val, cfg):
    with timed() as t:
        Fv, _ = pooled_design(val)
        best = None
        for lam in cfg.reg_grid:
            b, beta, theta = pooled_solution(train, lam)
            vl = log_loss(Fv @ theta, val.y)
            if best is None or vl < best[0]:
                best = (vl, lam, b, beta)
    vl, lam, b, beta = best
    return WeightModel(
        "pooled", "constant", {"beta": beta, "baseline": b}, len(beta) + len(b), t.seconds,
        {"ridge": lam, "val_loss": vl},
    )


def bilinear_design(ds):
    """Features (phi, phi (x) z) so that score = z' W phi with W (J, D+1)."""
    phi = context_features(ds.X)
    Z = ds.Z
    outer = (Z[:, :, None] * phi[:, None, :]).reshape(ds.n, -1)
    mask = np.r_[np.zeros(phi.shape[1]), np.ones(outer.shape[1])]
    return np.hstack([phi, outer]), mask


def fit_linear_contextual(train, val, cfg):
    with timed() as t:
        F, mask = bilinear_design(train)
        Fv, _ = bilinear_design(val)
        P = train.D + 1
        best = None
        for lam in cfg.reg_grid:
            theta, _ = fit_logistic(F, train.y, lam, mask)
            vl = log_loss(Fv @ theta, val.y)
            if best is None or vl < best[0]:
                best = (vl, lam, theta)
    vl, lam, theta = best
    W = theta[P:].reshape(train.J, P)
    return WeightModel(
        "linear", "linear", {"W": W, "baseline": theta[:P]}, len(theta), t.seconds,
        {"ridge": lam, "val_loss": vl},
    )


# -- low rank ---------------------------------------------------------------


def _lowrank_eta(ds, U, V, b):
    phi = context_features(ds.X)
    return phi @ b + np.sum((phi @ V) * (ds.Z @ U), axis=1)


def _lowrank_objective(ds, U, V, b, lam):
    return log_loss(_lowrank_eta(ds, U, V, b), ds.y) + lam * (float((U * U).sum()) + float((V * V).sum()))


def fit_lowrank_fixed(train, rank, lam, init_W=None, max_rounds=50, tol=1e-7):
    """Alternating ridge-logistic fits of W = U V' at a fixed rank."""
    phi = context_features(train.X)
    Z = train.Z
    n, P = phi.shape
    J = train.J
    r = rank
    if init_W is None:
        init_W = pooled_solution(train, lam)[1][:, None] * np.eye(1, P)
    Uf, s, Vt = np.linalg.svd(init_W, full_matrices=False)
    k = min(r, len(s))
    U = np.zeros((J, r))
    V = np.zeros((P, r))
    root = np.sqrt(np.maximum(s[:k], 1e-3))
    U[:, :k] = Uf[:, :k] * root
    V[:, :k] = Vt[:k].T * root
    if k < r:
        rng = np.random.default_rng(rank)
        U[:, k:] = 0.01 * rng.standard_normal((J, r - k))
        V[:, k:] = 0.01 * rng.standard_normal((P, r - k))
    b = np.zeros(P)
    best = (np.inf, U, V, b)
    stale = 0
    mask_v = np.r_[np.zeros(P), np.ones(P * r)]
    mask_u = np.r_[np.zeros(P), np.ones(J * r)]
    for _ in range(max_rounds):
        # fix U, solve for (b, V)
        zu = Z @ U
        Fv = np.hstack([phi, (phi[:, :, None] * zu[:, None, :]).reshape(n, P * r)])
        th, _ = fit_logistic(Fv, train.y, lam, mask_v, theta0=np.r_[b, V.ravel()])
        b, V = th[:P], th[P:].reshape(P, r)
        # fix V, solve for (b, U)
        pv = phi @ V
        Fu = np.hstack([phi, (Z[:, :, None] * pv[:, None, :]).reshape(n, J * r)])
        th, _ = fit_logistic(Fu, train.y, lam, mask_u, theta0=np.r_[b, U.ravel()])
        b, U = th[:P], th[P:].reshape(J, r)
        obj = _lowrank_objective(train, U, V, b, lam)
        if not np.isfinite(best[0]) or obj < best[0] - tol * max(1.0, abs(best[0])):
            best = (obj, U.copy(), V.copy(), b.copy())
            stale = 0
        else:
            stale += 1
            if stale >= 3:
                break
    return best


def fit_lowrank_contextual(train, val, cfg):
    with timed() as t:
        Fl, mask = bilinear_design(train)
        P = train.D + 1
        best = None
        for lam in cfg.reg_grid:
            theta, _ = fit_logistic(Fl, train.y, lam, mask)
            W_lin = theta[P:].reshape(train.J, P)
            for r in cfg.rank_grid:
                obj, U, V, b = fit_lowrank_fixed(train, r, lam, init_W=W_lin)
                vl = log_loss(_lowrank_eta(val, U, V, b), val.y)
                if best is None or vl < best[0]:
                    best = (vl, lam, r, U, V, b)
    vl, lam, r, U, V, b = best
    return WeightModel(
        "lowrank", "lowrank", {"U": U, "V": V, "baseline": b}, U.size + V.size + b.size, t.seconds,
        {"ridge": lam, "rank": r, "val_loss": vl},
    )


# -- MLP --------------------------------------------------------------------


def mlp_loss_grad(params, phi, Z, y, lam):
    """Penalised log-loss of sigma(phi'psi + (C tanh(A phi) + c0)'z) and its gradient."""
    A, C, c0, psi = params["A"], params["C"], params["c0"], params["psi"]
    n = len(y)
    H = np.tanh(phi @ A.T)
    W = H @ C.T + c0
    eta = phi @ psi + np.sum(W * Z, axis=1)
    loss = log_loss(eta, y) + lam * (float((A * A).sum()) + float((C * C).sum()) + float(c0 @ c0))
    r = (expit(eta) - y) / n
    dW = r[:, None] * Z
    dH = dW @ C
    dpre = dH * (1 - H * H)
    grads = {
        "A": dpre.T @ phi + 2 * lam * A,
        "C": dW.T @ H + 2 * lam * C,
        "c0": dW.sum(axis=0) + 2 * lam * c0,
        "psi": phi.T @ r,
    }
    return loss, grads


def _mlp_val(params, phi, Z, y):
    H = np.tanh(phi @ params["A"].T)
    W = H @ params["C"].T + params["c0"]
    return log_loss(phi @ params["psi"] + np.sum(W * Z, axis=1), y)


def mlp_init(train, lam, hidden, rng):
    b, beta, _ = pooled_solution(train, lam)
    P = train.D + 1
    return {
        "A": rng.standard_normal((hidden, P)) / np.sqrt(P),
        "C": np.zeros((train.J, hidden)),
        "c0": beta.copy(),
        "psi": b.copy(),
    }


def fit_mlp_contextual(train, val, cfg):
    with timed() as t:
        phi, Z, y = context_features(train.X), train.Z, train.y
        phv, Zv, yv = context_features(val.X), val.Z, val.y
        best = None
        for lam in cfg.reg_grid:
            for r in range(cfg.restarts):
                rng = np.random.default_rng([cfg.seed, 7, r])
                p0 = mlp_init(train, lam, cfg.hidden, rng)
                try:
                    p, info = adam_train(
                        lambda p: mlp_loss_grad(p, phi, Z, y, lam), p0,
                        lambda p: _mlp_val(p, phv, Zv, yv),
                        cfg.step_size, cfg.max_epochs, cfg.patience,
                    )
                except DivergenceError as e:
                    log.warning("mlp restart %d (ridge %g) aborted: %s", r, lam, e)
                    continue
                if best is None or info["val_loss"] < best[0]:
                    best = (info["val_loss"], lam, r, p, info)
        if best is None:
            raise DivergenceError("all MLP restarts diverged")
    vl, lam, r, p, info = best
    params = {"A": p["A"], "C": p["C"], "c0": p["c0"], "baseline": p["psi"]}
    return WeightModel(
        "mlp", "mlp", params, sum(v.size for v in params.values()), t.seconds,
        {"ridge": lam, "restart": r, "val_loss": vl, "epochs": info["epochs"]},
    )
