"""Estimators mapping a logged dataset to a fitted decision-weight model."""

from .base import FitConfig, WeightModel, context_features, gate_features
from .contextual import fit_linear_contextual, fit_lowrank_contextual, fit_mlp_contextual, fit_pooled
from .hard import fit_cluster_then_fit, fit_hard_routed
from .mixture import EMMonotonicityError, fit_em_mixture
from .optim import DivergenceError
from .oracle import OracleGateModel, align_experts, fit_oracle_gate_soft
from .otss import fit_otss

# name -> fit(train, val, K, cfg); K is ignored by methods that select it themselves
METHODS = {
    "pooled": lambda tr, va, K, cfg: fit_pooled(tr, va, cfg),
    "linear": lambda tr, va, K, cfg: fit_linear_contextual(tr, va, cfg),
    "lowrank": lambda tr, va, K, cfg: fit_lowrank_contextual(tr, va, cfg),
    "mlp": lambda tr, va, K, cfg: fit_mlp_contextual(tr, va, cfg),
    "cluster": lambda tr, va, K, cfg: fit_cluster_then_fit(tr, va, cfg),
    "em": lambda tr, va, K, cfg: fit_em_mixture(tr, va, cfg),
    "hard": fit_hard_routed,
    "otss": fit_otss,
}


def fit_method(name, train, val, K, cfg):
    try:
        fit = METHODS[name]
    except KeyError:
        raise ValueError(f"unknown method {name!r}; choose from {sorted(METHODS)}") from None
    return fit(train, val, K, cfg)


__all__ = [
    "FitConfig", "WeightModel", "METHODS", "fit_method", "context_features", "gate_features",
    "fit_pooled", "fit_linear_contextual", "fit_lowrank_contextual", "fit_mlp_contextual",
    "fit_cluster_then_fit", "fit_em_mixture", "fit_hard_routed", "fit_otss",
    "fit_oracle_gate_soft", "align_experts", "OracleGateModel",
    "DivergenceError", "EMMonotonicityError",
]
