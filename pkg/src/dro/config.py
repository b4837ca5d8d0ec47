"""YAML run configuration: defaults, strict key validation, RunConfig build.

Unknown keys are rejected with their dotted path; missing keys take the
shipped defaults (the values baked into `DEFAULTS` below and mirrored in
configs/defaults.yaml).
"""

from __future__ import annotations

import copy
from pathlib import Path

import yaml

from dro.acquisition import AcqConfig
from dro.ensemble import EnsembleConfig
from dro.gp import NOISE_FLOOR
from dro.objectives import build_objective
from dro.orchestrator import RunConfig
from dro.rollout import RolloutConfig
from dro.trajectory import state_dim
from dro.transformer import DtConfig


class ConfigError(ValueError):
    """Invalid configuration; the message carries the offending key path."""


DEFAULTS: dict = {
    "objective": {"name": "ackley", "dimension": 2, "noise_std": 0.1, "shift": 0.0},
    "run": {
        "budget": 50,
        "n_init": 5,
        "target_rtg": 1.0,
        "reset_dt": False,
        "n_cand": None,
    },
    "gp": {"noise_floor": 1e-4, "jitter": 1e-6},
    "ensemble": {
        "size": 10,
        "lengthscale_min": 0.1,
        "lengthscale_max": 10.0,
        "kernel": "rbf",
        "gp_lr": 0.1,
        "gp_train_iters": 50,
    },
    "rollout": {
        "delta": 1e-4,
        "max_len": 20,
        "rollouts_per_gp": 4,
        "kappa_roi": 6.0,
        "roi_enabled": True,
        "fixed_acq": None,
    },
    "acquisition": {"kappa_ucb": 2.0, "xi": 0.01, "mes_samples": 10},
    "transformer": {
        "embed_dim": 128,
        "n_layers": 4,
        "n_heads": 4,
        "dropout": 0.1,
        "seq_len": 20,
        "lr": 1e-4,
        "weight_decay": 1e-5,
        "batch_size": 32,
        "epochs": 100,
    },
}


def _merge(defaults: dict, user: dict, path: str = "") -> dict:
    merged = copy.deepcopy(defaults)
    for key, value in user.items():
        here = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown config key: {here}")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"expected a mapping at {here}")
            merged[key] = _merge(defaults[key], value, here)
        else:
            merged[key] = value
    return merged


def load_config(path: str | Path | None) -> dict:
    """Parse and validate a YAML config; None loads pure defaults."""
    if path is None:
        user: dict = {}
    else:
        with open(path, "r", encoding="utf-8") as fh:
            user = yaml.safe_load(fh) or {}
        if not isinstance(user, dict):
            raise ConfigError("config root must be a mapping")
    merged = _merge(DEFAULTS, user)
    if merged["gp"]["noise_floor"] != NOISE_FLOOR:
        raise ConfigError(
            f"gp.noise_floor is fixed at {NOISE_FLOOR} (got {merged['gp']['noise_floor']})"
        )
    return merged


def build_run_config(config: dict, method: str, seed: int) -> RunConfig:
    """Assemble a RunConfig from a validated config mapping."""
    obj_cfg = config["objective"]
    try:
        objective = build_objective(
            obj_cfg["name"],
            int(obj_cfg["dimension"]),
            float(obj_cfg["noise_std"]),
            shift=float(obj_cfg["shift"]),
        )
    except ValueError as exc:
        raise ConfigError(f"objective.name: {exc}") from exc

    ens = EnsembleConfig(
        size=int(config["ensemble"]["size"]),
        lengthscale_min=float(config["ensemble"]["lengthscale_min"]),
        lengthscale_max=float(config["ensemble"]["lengthscale_max"]),
        kernel=str(config["ensemble"]["kernel"]),
        gp_lr=float(config["ensemble"]["gp_lr"]),
        gp_train_iters=int(config["ensemble"]["gp_train_iters"]),
    )
    acq = AcqConfig(
        kappa_ucb=float(config["acquisition"]["kappa_ucb"]),
        xi=float(config["acquisition"]["xi"]),
        mes_samples=int(config["acquisition"]["mes_samples"]),
    )
    roll = RolloutConfig(
        delta=float(config["rollout"]["delta"]),
        max_len=int(config["rollout"]["max_len"]),
        rollouts_per_gp=int(config["rollout"]["rollouts_per_gp"]),
        kappa_roi=float(config["rollout"]["kappa_roi"]),
        roi_enabled=bool(config["rollout"]["roi_enabled"]),
        fixed_acq=config["rollout"]["fixed_acq"],
        acq=acq,
    )
    tf = config["transformer"]
    dt = DtConfig(
        state_dim=state_dim(ens.size, objective.dimension),
        action_dim=objective.dimension,
        embed_dim=int(tf["embed_dim"]),
        n_heads=int(tf["n_heads"]),
        n_layers=int(tf["n_layers"]),
        dropout=float(tf["dropout"]),
        seq_len=int(tf["seq_len"]),
        lr=float(tf["lr"]),
        weight_decay=float(tf["weight_decay"]),
        batch_size=int(tf["batch_size"]),
        epochs=int(tf["epochs"]),
    )
    run_cfg = config["run"]
    n_cand = run_cfg["n_cand"]
    return RunConfig(
        objective=objective,
        budget=int(run_cfg["budget"]),
        n_init=int(run_cfg["n_init"]),
        method=method,
        seed=seed,
        ensemble=ens,
        rollout=roll,
        dt=dt,
        n_cand=None if n_cand is None else int(n_cand),
        target_rtg=float(run_cfg["target_rtg"]),
        reset_dt=bool(run_cfg["reset_dt"]),
        jitter=float(config["gp"]["jitter"]),
    )
