"""Full-batch Adam with global-norm clipping and validation early stopping."""

from __future__ import annotations

import logging

import numpy as np

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    pass


def adam_train(loss_grad, params, val_loss, step_size=0.05, max_epochs=3000, patience=100,
               clip=1e3, beta1=0.9, beta2=0.999, eps=1e-8):
    """Minimise ``loss_grad`` from ``params`` and return the best-validation iterate.

    ``loss_grad(params) -> (loss, grads)`` with ``grads`` keyed like
    ``params``. Training stops after ``patience`` epochs without a validation
    improvement. Raises :class:`DivergenceError` on a non-finite loss.
    """
    params = {k: np.array(v, dtype=float) for k, v in params.items()}
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v2 = {k: np.zeros_like(v) for k, v in params.items()}
    best = {k: v.copy() for k, v in params.items()}
    val0 = best_val = val_loss(params)
    best_epoch = 0
    epoch = 0
    for epoch in range(1, max_epochs + 1):
        loss, grads = loss_grad(params)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite training loss at epoch {epoch}")
        norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        scale = clip / norm if norm > clip else 1.0
        c1 = 1 - beta1**epoch
        c2 = 1 - beta2**epoch
        for k, g in grads.items():
            g = g * scale
            m[k] = beta1 * m[k] + (1 - beta1) * g
            v2[k] = beta2 * v2[k] + (1 - beta2) * g * g
            params[k] -= step_size * (m[k] / c1) / (np.sqrt(v2[k] / c2) + eps)
        vl = val_loss(params)
        if not np.isfinite(vl):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}")
        if vl < best_val:
            best_val, best_epoch = vl, epoch
            best = {k: v.copy() for k, v in params.items()}
        elif epoch - best_epoch >= patience:
            break
    return best, {"val_loss": best_val, "val_loss_epoch0": val0, "best_epoch": best_epoch, "epochs": epoch}
