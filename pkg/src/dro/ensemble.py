"""Ensembles of GP models with diverse lengthscales on shared data.

Initial lengthscales are laid out on a deterministic geometric grid between
the configured bounds; a single-model ensemble sits at the geometric mean.
Updates warm-start each model's hyperparameters from its current values
rather than the initial grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dro.gp import (
    NOISE_FLOOR,
    DEFAULT_JITTER,
    Dataset,
    GpHyperParams,
    GpModel,
    gp_fit,
    train_gp_hypers,
)


@dataclass(frozen=True)
class EnsembleConfig:
    size: int = 10
    lengthscale_min: float = 0.1
    lengthscale_max: float = 10.0
    kernel: str = "rbf"
    gp_lr: float = 0.1
    gp_train_iters: int = 50

    def __post_init__(self):
        if self.size < 1:
            raise ValueError(f"ensemble size must be >= 1, got {self.size}")
        if not 0 < self.lengthscale_min < self.lengthscale_max:
            raise ValueError(
                "require 0 < lengthscale_min < lengthscale_max, got "
                f"[{self.lengthscale_min}, {self.lengthscale_max}]"
            )
        if self.kernel != "rbf":
            raise ValueError(f"only the rbf kernel is supported, got {self.kernel!r}")


@dataclass(frozen=True)
class Ensemble:
    models: tuple[GpModel, ...]
    config: EnsembleConfig

    def __post_init__(self):
        sizes = {len(m.data) for m in self.models}
        if len(sizes) != 1:
            raise ValueError("all ensemble models must share the same dataset size")

    @property
    def data(self) -> Dataset:
        return self.models[0].data

    @property
    def size(self) -> int:
        return len(self.models)


def initial_lengthscales(config: EnsembleConfig) -> np.ndarray:
    """Geometric progression over [min, max]; M=1 uses the geometric mean."""
    lo, hi = config.lengthscale_min, config.lengthscale_max
    if config.size == 1:
        return np.array([np.sqrt(lo * hi)])
    return np.geomspace(lo, hi, config.size)


def init_ensemble(
    config: EnsembleConfig, data: Dataset, jitter: float = DEFAULT_JITTER
) -> Ensemble:
    """Fit M models with grid lengthscales, unit outputscale, floor noise."""
    if len(data) == 0:
        raise ValueError("cannot initialize an ensemble on an empty dataset")
    models = tuple(
        gp_fit(
            data,
            GpHyperParams(lengthscale=float(ls), outputscale=1.0, noise_variance=NOISE_FLOOR),
            jitter=jitter,
        )
        for ls in initial_lengthscales(config)
    )
    return Ensemble(models=models, config=config)


def update_ensemble(
    ens: Ensemble, data: Dataset, jitter: float = DEFAULT_JITTER
) -> Ensemble:
    """Refit every model on ``data``, warm-starting hypers from current values."""
    if not data.extends(ens.data):
        raise ValueError("new data must extend the ensemble's current dataset")
    models = []
    for model in ens.models:
        hypers = train_gp_hypers(
            data,
            model.hypers,
            lr=ens.config.gp_lr,
            iters=ens.config.gp_train_iters,
            jitter=jitter,
        )
        models.append(gp_fit(data, hypers, jitter=jitter))
    return Ensemble(models=tuple(models), config=ens.config)
