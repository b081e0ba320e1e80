"""EM mixture of logistic regressions with a post-hoc context gate."""

from __future__ import annotations

import logging

import numpy as np
from scipy.special import expit, logsumexp

from .base import WeightModel, context_features, gated_params, timed
from .contextual import pooled_design, pooled_solution
from .logistic import SoftmaxClassifier, fit_logistic, softplus

log = logging.getLogger(__name__)


class EMMonotonicityError(RuntimeError):
    pass


def _component_loglik(F, y, thetas):
    """log p_k(y_i | x_i, d_i) for every record and component, shape (n, K)."""
    eta = F @ thetas.T
    return y[:, None] * eta - softplus(eta)


def em_objective(F, y, thetas, mixing, lam, mask):
    ll = logsumexp(_component_loglik(F, y, thetas) + np.log(mixing), axis=1)
    return float(ll.mean()) - lam * float(((thetas * thetas) @ mask).sum())


def run_em(F, y, mask, K, lam, rng, max_rounds=200, tol=1e-6, inner_iter=25, collapse=1e-3):
    """EM for a K-component mixture of ridge logistic regressions.

    Returns ``(thetas, mixing, responsibilities, trace)`` where ``trace`` is
    the penalised log-likelihood per round. Raises
    :class:`EMMonotonicityError` if the objective drops by more than 1e-8.
    """
    n, P = F.shape
    base, _ = fit_logistic(F, y, lam, mask)
    thetas = np.tile(base, (K, 1))
    if K > 1:
        thetas += 0.2 * rng.standard_normal((K, P)) * mask
    mixing = np.full(K, 1.0 / K)
    obj = em_objective(F, y, thetas, mixing, lam, mask)
    trace = [obj]
    for _ in range(max_rounds):
        # E-step
        logpost = _component_loglik(F, y, thetas) + np.log(mixing)
        resp = np.exp(logpost - logsumexp(logpost, axis=1, keepdims=True))
        # M-step
        mixing = resp.mean(axis=0)
        for k in range(len(mixing)):
            thetas[k], _ = fit_logistic(F, y, lam, mask, weights=resp[:, k], theta0=thetas[k], max_iter=inner_iter)
        keep = mixing >= collapse
        if not keep.all():
            log.info("EM dropping %d collapsed component(s)", int((~keep).sum()))
            thetas, mixing = thetas[keep], mixing[keep] / mixing[keep].sum()
            obj = em_objective(F, y, thetas, mixing, lam, mask)
            trace.append(obj)
            continue
        new = em_objective(F, y, thetas, mixing, lam, mask)
        if new < obj - 1e-8:
            raise EMMonotonicityError(f"EM objective decreased from {obj!r} to {new!r}")
        trace.append(new)
        if abs(new - obj) < tol * max(1.0, abs(obj)):
            obj = new
            break
        obj = new
    logpost = _component_loglik(F, y, thetas) + np.log(mixing)
    resp = np.exp(logpost - logsumexp(logpost, axis=1, keepdims=True))
    return thetas, mixing, resp, trace


def fit_em_mixture(train, val, cfg):
    """Grid over (K, ridge); each cell runs EM, then fits the deployment gate
    x -> responsibilities. Selection uses the gated mixture's validation log-loss."""
    with timed() as t:
        F, mask = pooled_design(train)
        Fv, _ = pooled_design(val)
        phi, phv = context_features(train.X), context_features(val.X)
        P = train.D + 1
        best = None
        cells = []
        for K in cfg.k_grid:
            for lam in cfg.reg_grid:
                rng = np.random.default_rng([cfg.seed, 11, K])
                thetas, mixing, resp, trace = run_em(F, train.y, mask, K, lam, rng, cfg.em_max_rounds, cfg.em_tol)
                gate = SoftmaxClassifier(ridge=1e-4).fit(phi, resp)
                g_val = gate.predict_proba(phv)
                comp = expit(Fv @ thetas.T)
                pv = np.clip(np.sum(g_val * comp, axis=1), 1e-12, 1 - 1e-12)
                vl = float(-np.mean(val.y * np.log(pv) + (1 - val.y) * np.log(1 - pv)))
                cells.append({"K": K, "K_final": len(mixing), "ridge": lam, "val_loss": vl, "rounds": len(trace) - 1})
                if best is None or vl < best[0]:
                    best = (vl, K, lam, thetas, mixing, gate.W, trace)
    vl, K, lam, thetas, mixing, Wg, trace = best
    experts = thetas[:, P:]
    # the deployed baseline is not a single affine map; keep the mixing-weighted average for reference
    params = gated_params(Wg, experts, mixing @ thetas[:, :P])
    params["component_baselines"] = thetas[:, :P]
    params["mixing"] = mixing
    return WeightModel(
        "em", "gated", params, thetas.size + Wg.size, t.seconds,
        {"K": K, "K_final": len(mixing), "ridge": lam, "val_loss": vl, "trace": trace, "cells": cells},
    )
