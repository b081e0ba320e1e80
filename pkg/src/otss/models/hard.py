"""Hard-partition estimators: exogenous k-means cluster-then-fit and
output-targeted hard routing."""

from __future__ import annotations

import logging

import numpy as np
from sklearn.cluster import KMeans

from .base import WeightModel, context_features, gated_params, timed
from .contextual import pooled_design
from .logistic import SoftmaxClassifier, fit_logistic, log_loss, softplus

log = logging.getLogger(__name__)


def _nearest(X, centroids):
    d2 = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def fit_cluster_then_fit(train, val, cfg):
    """k-means on raw contexts, then one ridge pooled logistic fit per cluster.

    ``k`` and the ridge level are chosen on validation log-loss; validation
    records are routed to their nearest centroid.
    """
    with timed() as t:
        F, mask = pooled_design(train)
        Fv, _ = pooled_design(val)
        P = train.D + 1
        best = None
        for k in cfg.k_grid:
            if k == 1:
                centroids = train.X.mean(axis=0, keepdims=True)
            else:
                km = KMeans(n_clusters=k, n_init=10, random_state=cfg.seed).fit(train.X)
                centroids = km.cluster_centers_
            lab, lab_v = _nearest(train.X, centroids), _nearest(val.X, centroids)
            for lam in cfg.reg_grid:
                thetas = np.zeros((k, F.shape[1]))
                for c in range(k):
                    idx = lab == c
                    if idx.any():
                        thetas[c], _ = fit_logistic(F[idx], train.y[idx], lam, mask)
                eta_v = np.sum(Fv * thetas[lab_v], axis=1)
                vl = log_loss(eta_v, val.y)
                if best is None or vl < best[0]:
                    best = (vl, k, lam, centroids, thetas)
    vl, k, lam, centroids, thetas = best
    params = {"centroids": centroids, "betas": thetas[:, P:], "baselines": thetas[:, :P]}
    return WeightModel(
        "cluster", "centroid", params, thetas.size + centroids.size, t.seconds,
        {"k": k, "ridge": lam, "val_loss": vl},
    )


def _record_losses(phi, Z, y, baseline, experts):
    eta = (phi @ baseline)[:, None] + Z @ experts.T
    return softplus(eta) - y[:, None] * eta


def _fit_assigned(phi, Z, y, h, K, lam, theta0=None):
    """Joint ridge logistic fit of a shared baseline and one expert per route."""
    n, P = phi.shape
    J = Z.shape[1]
    onehot = np.eye(K)[h]
    F = np.hstack([phi, (onehot[:, :, None] * Z[:, None, :]).reshape(n, K * J)])
    mask = np.r_[np.zeros(P), np.ones(K * J)]
    theta, _ = fit_logistic(F, y, lam, mask, theta0=theta0)
    return theta[:P], theta[P:].reshape(K, J), theta


def _reseed_starved(h, losses, K, min_size):
    for k in range(K):
        if np.sum(h == k) < min_size:
            own = losses[np.arange(len(h)), h]
            donors = np.argsort(-own)
            donors = donors[h[donors] != k][:min_size]
            h[donors] = k
    return h


def hard_route_run(train, K, lam, rng, max_rounds=50):
    phi, Z, y = context_features(train.X), train.Z, train.y
    n = len(y)
    min_size = train.J + 2
    # random linear partition of standardised contexts as the initial routing
    mu, sd = train.X.mean(axis=0), train.X.std(axis=0) + 1e-12
    Gs = rng.standard_normal((K, train.D))
    h = np.argmax(((train.X - mu) / sd) @ Gs.T, axis=1)
    router = SoftmaxClassifier(ridge=1e-4)
    theta = None
    h = _reseed_starved(h, np.zeros((n, K)), K, min_size)
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        b, B, theta = _fit_assigned(phi, Z, y, h, K, lam, theta)
        router.fit(phi, np.eye(K)[h], router.W)
        losses = _record_losses(phi, Z, y, b, B)
        log_route = np.log(np.clip(router.predict_proba(phi), 1e-300, None))
        new_h = np.argmin(losses - log_route, axis=1)
        new_h = _reseed_starved(new_h, losses, K, min_size)
        if np.array_equal(new_h, h):
            break
        h = new_h
    b, B, theta = _fit_assigned(phi, Z, y, h, K, lam, theta)
    router.fit(phi, np.eye(K)[h], router.W)
    # loss-based assignments depend on y; refit experts on the context-only routes
    h_route = _reseed_starved(np.argmax(phi @ router.W.T, axis=1), _record_losses(phi, Z, y, b, B), K, min_size)
    b, B, theta = _fit_assigned(phi, Z, y, h_route, K, lam, theta)
    return b, B, router.W, rounds


def fit_hard_routed(train, val, K, cfg):
    """Alternating hard assignment (per-record loss plus router log-prior),
    joint expert refit, and a multinomial router; restart-and-select on
    validation log-loss of the hard-routed predictor."""
    with timed() as t:
        phv = context_features(val.X)
        best = None
        for lam in cfg.reg_grid:
            for r in range(cfg.restarts if K > 1 else 1):
                rng = np.random.default_rng([cfg.seed, 13, K, r])
                b, B, Wr, rounds = hard_route_run(train, K, lam, rng)
                route = np.argmax(phv @ Wr.T, axis=1)
                eta = phv @ b + np.sum(B[route] * val.Z, axis=1)
                vl = log_loss(eta, val.y)
                if best is None or vl < best[0]:
                    best = (vl, lam, r, b, B, Wr, rounds)
    vl, lam, r, b, B, Wr, rounds = best
    params = gated_params(Wr, B, b, hard=True)
    return WeightModel(
        "hard", "gated", params, Wr.size + B.size + b.size, t.seconds,
        {"K": K, "ridge": lam, "restart": r, "val_loss": vl, "rounds": rounds},
    )
