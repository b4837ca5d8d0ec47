"""Regret-targeted Bayesian optimization with GP-ensemble rollout distillation."""

from dro.gp import (
    Dataset,
    GpHyperParams,
    GpModel,
    NumericalError,
    Posterior,
    gp_fit,
    gp_posterior,
    gp_sample_predictive,
    nlml,
    nlml_grad,
    train_gp_hypers,
)

__all__ = [
    "Dataset",
    "GpHyperParams",
    "GpModel",
    "NumericalError",
    "Posterior",
    "gp_fit",
    "gp_posterior",
    "gp_sample_predictive",
    "nlml",
    "nlml_grad",
    "train_gp_hypers",
]

__version__ = "0.1.0"
