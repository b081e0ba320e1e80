"""Convex building blocks: ridge logistic regression (Newton/IRLS) and a
soft-label multinomial classifier."""

from __future__ import annotations

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, softmax

# keeps the Newton system positive definite when a block is unpenalised
RIDGE_FLOOR = 1e-8


def softplus(eta):
    """log(1 + exp(eta)), stable; much faster than ``np.logaddexp(0, eta)``."""
    return np.maximum(eta, 0.0) + np.log1p(np.exp(-np.abs(eta)))


def log_loss(eta, y, weights=None):
    """Mean Bernoulli negative log-likelihood for logits ``eta``."""
    per = softplus(eta) - y * eta
    if weights is None:
        return float(per.mean())
    return float((weights * per).sum() / len(y))


def fit_logistic(F, y, ridge=0.0, penalize=None, weights=None, theta0=None, max_iter=100, tol=1e-10):
    """Minimise ``sum_i w_i l_i / n + ridge * ||theta[penalize]||^2`` by damped Newton.

    Returns ``(theta, info)``; ``info`` holds the final objective, the
    iteration count and whether the Newton decrement fell below ``tol``.
    """
    n, P = F.shape
    mask = np.ones(P) if penalize is None else np.asarray(penalize, dtype=float)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    theta = np.zeros(P) if theta0 is None else np.array(theta0, dtype=float)
    pen = ridge * mask

    def objective(t):
        eta = F @ t
        return log_loss(eta, y, w) + float(pen @ (t * t)), eta

    obj, eta = objective(theta)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = expit(eta)
        g = F.T @ (w * (p - y)) / n + 2 * pen * theta
        s = w * p * (1 - p) / n
        H = (F * s[:, None]).T @ F
        H[np.diag_indices(P)] += 2 * pen + RIDGE_FLOOR
        step = np.linalg.solve(H, g)
        decrement = float(g @ step)
        if decrement < tol:
            # one last full step: quadratic convergence makes it nearly free accuracy
            cand = theta - step
            new_obj, new_eta = objective(cand)
            if new_obj <= obj:
                theta, obj, eta = cand, new_obj, new_eta
            converged = True
            break
        t = 1.0
        while True:
            cand = theta - t * step
            new_obj, new_eta = objective(cand)
            if new_obj <= obj - 1e-4 * t * decrement or t < 1e-10:
                break
            t *= 0.5
        if new_obj > obj:
            converged = True
            break
        theta, obj, eta = cand, new_obj, new_eta
    return theta, {"objective": obj, "iterations": it, "converged": converged}


class SoftmaxClassifier:
    """Multinomial logistic map x -> simplex, trained on (possibly soft) targets.

    ``features`` are used as given; include an intercept column yourself.
    """

    def __init__(self, ridge=1e-4):
        self.ridge = ridge
        self.W = None

    def fit(self, F, T, W0=None):
        n, P = F.shape
        K = T.shape[1]
        if K == 1:
            self.W = np.zeros((1, P))
            return self
        mask = np.ones(P)
        mask[0] = 0.0

        def f(vec):
            W = vec.reshape(K, P)
            A = F @ W.T
            A = A - A.max(axis=1, keepdims=True)
            ls = A - np.log(np.exp(A).sum(axis=1, keepdims=True))
            loss = -(T * ls).sum() / n + self.ridge * float(((W * W) * mask).sum())
            G = (np.exp(ls) - T).T @ F / n + 2 * self.ridge * W * mask
            return loss, G.ravel()

        x0 = np.zeros(K * P) if W0 is None else np.asarray(W0, dtype=float).ravel()
        res = minimize(f, x0, jac=True, method="L-BFGS-B", options={"maxiter": 500, "gtol": 1e-8})
        self.W = res.x.reshape(K, P)
        return self

    def predict_proba(self, F):
        return softmax(F @ self.W.T, axis=1)
