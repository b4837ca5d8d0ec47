"""Outer optimization loops: the rollout-distillation method and baselines.

Every method shares the same seeded initialization (scrambled-Sobol design,
observation-noise stream) so runs with equal seeds are paired. All phase
seeds derive from the run seed via stable hashes; given a config and seed,
a run is fully deterministic.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from dro.acquisition import (
    AcqParams,
    Roi,
    acq_value,
    compute_roi,
    default_pool_size,
    make_pool,
    maximize_acq,
)
from dro.ensemble import EnsembleConfig, init_ensemble, update_ensemble
from dro.gp import DEFAULT_JITTER, NOISE_FLOOR, Dataset, GpHyperParams, gp_fit, train_gp_hypers
from dro.objectives import ObjectiveSpec
from dro.rollout import RolloutConfig, generate_buffer, stable_hash
from dro.trajectory import build_state, encode_buffer, live_state, state_dim
from dro.transformer import DtConfig, DtModel, dt_infer, dt_train

METHODS = ("DRO", "DRO_GLOBAL", "GPBO_LOGEI", "RANDOM")

# seed-stream tags
_TAG_INIT_POOL = 0
_TAG_NOISE = 1
_TAG_PERTURB = 2
_TAG_DT_INIT = 3
_TAG_POOL = 4
_TAG_RANDOM = 6
_TAG_DT_TRAIN = 7


@dataclass(frozen=True)
class RunConfig:
    objective: ObjectiveSpec
    budget: int
    n_init: int = 5
    method: str = "DRO"
    seed: int = 0
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    rollout: RolloutConfig = field(default_factory=RolloutConfig)
    dt: DtConfig | None = None  # None: paper defaults with derived dimensions
    n_cand: int | None = None  # None: min(1024 * d, 8192)
    target_rtg: float = 1.0
    reset_dt: bool = False
    jitter: float = DEFAULT_JITTER

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; known: {METHODS}")
        if self.budget < self.n_init:
            raise ValueError("budget must be at least n_init")
        if self.n_init < 1:
            raise ValueError("n_init must be >= 1")

    @property
    def pool_size(self) -> int:
        return self.n_cand if self.n_cand is not None else default_pool_size(
            self.objective.dimension
        )


@dataclass
class RunRow:
    iteration: int
    x: np.ndarray
    y: float  # noisy observation
    true_value: float  # noiseless value at x
    best: float  # running max of observed y
    regret: float | None  # f* - best true value so far, when f* is known
    phase_ms: dict[str, float] = field(default_factory=dict)


@dataclass
class RunRecord:
    method: str
    seed: int
    objective: str
    dimension: int
    rows: list[RunRow] = field(default_factory=list)
    aux: dict = field(default_factory=dict)

    def best_curve(self) -> np.ndarray:
        return np.array([row.best for row in self.rows])

    def final_best(self) -> float:
        return self.rows[-1].best


class _Recorder:
    """Accumulates rows and enforces running-max / regret bookkeeping."""

    def __init__(self, objective: ObjectiveSpec):
        self.objective = objective
        self.rows: list[RunRow] = []
        self._best = -np.inf
        self._best_true = -np.inf

    def add(self, iteration: int, x: np.ndarray, y: float, phase_ms: dict | None = None):
        true_value = self.objective.true_value(x)
        self._best = max(self._best, y)
        self._best_true = max(self._best_true, true_value)
        optimum = self.objective.true_optimum_value
        regret = None if optimum is None else optimum - self._best_true
        self.rows.append(
            RunRow(
                iteration=iteration,
                x=np.asarray(x, dtype=float).copy(),
                y=y,
                true_value=true_value,
                best=self._best,
                regret=regret,
                phase_ms=dict(phase_ms or {}),
            )
        )


def _init_design(cfg: RunConfig, noise_rng: np.random.Generator, rec: _Recorder) -> Dataset:
    """Scrambled-Sobol initialization shared by all model-based methods."""
    pool = make_pool(
        cfg.objective.dimension, cfg.n_init, seed=stable_hash(cfg.seed, _TAG_INIT_POOL)
    )
    points = pool.points
    values = []
    for i, x in enumerate(points):
        y = cfg.objective.evaluate(x, noise_rng)
        values.append(y)
        rec.add(i + 1, x, y)
    return Dataset(points, np.array(values))


def _dedupe(
    x: np.ndarray, data: Dataset, rng: np.random.Generator, tol: float = 1e-9
) -> np.ndarray:
    """Nudge proposals that collide with an existing point (Cholesky guard)."""
    if len(data) and np.min(np.max(np.abs(data.points - x), axis=1)) < tol:
        x = np.clip(x + 1e-6 * rng.standard_normal(x.size), 0.0, 1.0)
    return x


def _encode_real_history(
    real_steps: list[dict], ens, normalizer: float, cfg: RunConfig
) -> list[tuple[float, np.ndarray, np.ndarray]]:
    """Re-encode past real steps under the current ensemble and reward scale."""
    model = ens.models[0]
    history = []
    rtg = cfg.target_rtg
    for step in real_steps:
        state = build_state(
            ens,
            best_value_std=(step["best_before"] - model.y_mean) / model.y_scale,
            iteration_fraction=step["iteration"] / cfg.budget,
            best_point=step["best_point_before"],
        )
        history.append((rtg, state, step["action"]))
        gain_std = max(0.0, step["best_after"] - step["best_before"]) / model.y_scale
        reward = gain_std / normalizer if normalizer > 0 else 0.0
        rtg = max(0.0, rtg - reward)
    return history


def dro_run(cfg: RunConfig) -> RunRecord:
    """Ensemble -> rollouts -> trajectory encoding -> policy training -> query."""
    if cfg.method not in ("DRO", "DRO_GLOBAL"):
        raise ValueError("dro_run handles the DRO and DRO_GLOBAL methods")
    obj = cfg.objective
    d = obj.dimension
    roll_cfg = cfg.rollout
    if cfg.method == "DRO_GLOBAL":
        roll_cfg = replace(roll_cfg, roi_enabled=False)

    noise_rng = np.random.default_rng(stable_hash(cfg.seed, _TAG_NOISE))
    perturb_rng = np.random.default_rng(stable_hash(cfg.seed, _TAG_PERTURB))
    rec = _Recorder(obj)
    data = _init_design(cfg, noise_rng, rec)
    record = RunRecord(cfg.method, cfg.seed, obj.name, d, rows=rec.rows)
    if cfg.budget == cfg.n_init:
        return record

    ens = init_ensemble(cfg.ensemble, data, jitter=cfg.jitter)
    dt_cfg = cfg.dt or DtConfig(state_dim=state_dim(cfg.ensemble.size, d), action_dim=d)
    if dt_cfg.state_dim != state_dim(cfg.ensemble.size, d) or dt_cfg.action_dim != d:
        raise ValueError("transformer dimensions do not match ensemble/objective")
    model = DtModel(dt_cfg, seed=stable_hash(cfg.seed, _TAG_DT_INIT))
    real_steps: list[dict] = []

    for t in range(cfg.n_init + 1, cfg.budget + 1):
        phases = {}
        tic = time.perf_counter()
        ens = update_ensemble(ens, data, jitter=cfg.jitter)
        phases["fit"] = 1e3 * (time.perf_counter() - tic)

        pool = make_pool(d, cfg.pool_size, seed=stable_hash(cfg.seed, _TAG_POOL, t))
        tic = time.perf_counter()
        buffer = generate_buffer(ens, pool, roll_cfg, base_seed=cfg.seed, real_iter=t)
        trajset = encode_buffer(buffer, ens, real_iter=t, total_iters=cfg.budget)
        phases["rollout"] = 1e3 * (time.perf_counter() - tic)

        if cfg.reset_dt:
            model = DtModel(dt_cfg, seed=stable_hash(cfg.seed, _TAG_DT_INIT, t))
        tic = time.perf_counter()
        dt_train(model, trajset, seed=stable_hash(cfg.seed, _TAG_DT_TRAIN, t))
        phases["train"] = 1e3 * (time.perf_counter() - tic)

        tic = time.perf_counter()
        history = _encode_real_history(real_steps, ens, trajset.normalizer, cfg)
        state = live_state(ens, data, t, cfg.budget)
        x = dt_infer(model, history, state, cfg.target_rtg)
        x = _dedupe(np.clip(x, 0.0, 1.0), data, perturb_rng)
        phases["infer"] = 1e3 * (time.perf_counter() - tic)

        best_before = float(np.max(data.values))
        best_point_before = data.points[int(np.argmax(data.values))].copy()
        y = obj.evaluate(x, noise_rng)
        rec.add(t, x, y, phases)
        real_steps.append(
            {
                "iteration": t,
                "action": np.asarray(x, dtype=float),
                "best_before": best_before,
                "best_point_before": best_point_before,
                "best_after": max(best_before, y),
            }
        )
        data = data.append(x, y)
    return record


def gpbo_logei_run(cfg: RunConfig, roi_restricted: bool = False) -> RunRecord:
    """Single warm-started GP maximizing log-EI over the candidate pool."""
    if cfg.method != "GPBO_LOGEI":
        raise ValueError("gpbo_logei_run handles the GPBO_LOGEI method")
    obj = cfg.objective
    d = obj.dimension
    noise_rng = np.random.default_rng(stable_hash(cfg.seed, _TAG_NOISE))
    perturb_rng = np.random.default_rng(stable_hash(cfg.seed, _TAG_PERTURB))
    rec = _Recorder(obj)
    data = _init_design(cfg, noise_rng, rec)
    record = RunRecord(cfg.method, cfg.seed, obj.name, d, rows=rec.rows)
    record.aux["max_ei"] = []

    hypers = GpHyperParams(
        lengthscale=float(np.sqrt(cfg.ensemble.lengthscale_min * cfg.ensemble.lengthscale_max)),
        outputscale=1.0,
        noise_variance=NOISE_FLOOR,
    )
    for t in range(cfg.n_init + 1, cfg.budget + 1):
        phases = {}
        tic = time.perf_counter()
        hypers = train_gp_hypers(
            data, hypers, lr=cfg.ensemble.gp_lr, iters=cfg.ensemble.gp_train_iters,
            jitter=cfg.jitter,
        )
        model = gp_fit(data, hypers, jitter=cfg.jitter)
        phases["fit"] = 1e3 * (time.perf_counter() - tic)

        tic = time.perf_counter()
        pool = make_pool(d, cfg.pool_size, seed=stable_hash(cfg.seed, _TAG_POOL, t))
        params = AcqParams(
            kind="LOG_EI", xi=cfg.rollout.acq.xi, incumbent=model.best_observed_std
        )
        roi = (
            compute_roi(model, pool, cfg.rollout.kappa_roi)
            if roi_restricted
            else Roi(mask=np.ones(len(pool), dtype=bool), kappa_roi=cfg.rollout.kappa_roi)
        )
        _, x = maximize_acq(model, pool, roi, params)
        record.aux["max_ei"].append(float(np.exp(acq_value(model, x, params))))
        x = _dedupe(x, data, perturb_rng)
        phases["infer"] = 1e3 * (time.perf_counter() - tic)

        y = obj.evaluate(x, noise_rng)
        rec.add(t, x, y, phases)
        data = data.append(x, y)
    return record


def random_run(cfg: RunConfig) -> RunRecord:
    """Uniform queries from the seeded stream (control baseline)."""
    if cfg.method != "RANDOM":
        raise ValueError("random_run handles the RANDOM method")
    obj = cfg.objective
    rng = np.random.default_rng(stable_hash(cfg.seed, _TAG_RANDOM))
    noise_rng = np.random.default_rng(stable_hash(cfg.seed, _TAG_NOISE))
    rec = _Recorder(obj)
    for t in range(1, cfg.budget + 1):
        x = rng.random(obj.dimension)
        rec.add(t, x, obj.evaluate(x, noise_rng))
    return RunRecord(cfg.method, cfg.seed, obj.name, obj.dimension, rows=rec.rows)


def run(cfg: RunConfig) -> RunRecord:
    if cfg.method in ("DRO", "DRO_GLOBAL"):
        return dro_run(cfg)
    if cfg.method == "GPBO_LOGEI":
        return gpbo_logei_run(cfg)
    return random_run(cfg)


def regret_metrics(record: RunRecord, optimum: float) -> tuple[np.ndarray, float]:
    """Simple-regret curve (against noiseless values) and cumulative regret."""
    true_vals = np.array([row.true_value for row in record.rows])
    simple = optimum - np.maximum.accumulate(true_vals)
    cumulative = float(np.sum(optimum - true_vals))
    return simple, cumulative


# ---------------------------------------------------------------------------
# CSV emission
# ---------------------------------------------------------------------------

_PHASES = ("fit", "rollout", "train", "infer")


def csv_header(dimension: int) -> str:
    coords = ",".join(f"x_{i}" for i in range(dimension))
    phase_cols = ",".join(f"phase_{p}_ms" for p in _PHASES)
    return f"iter,{coords},y,best,regret,{phase_cols}"


def write_csv(record: RunRecord, path, include_timings: bool = False) -> None:
    """One row per iteration; timing columns are zero unless requested.

    Timings are wall-clock and would break byte-for-byte reproducibility,
    so they are opt-in.
    """
    lines = [csv_header(record.dimension)]
    for row in record.rows:
        coords = ",".join(repr(float(v)) for v in row.x)
        regret = "" if row.regret is None else repr(float(row.regret))
        if include_timings:
            phases = ",".join(repr(round(row.phase_ms.get(p, 0.0), 3)) for p in _PHASES)
        else:
            phases = ",".join("0" for _ in _PHASES)
        lines.append(
            f"{row.iteration},{coords},{repr(float(row.y))},{repr(float(row.best))},"
            f"{regret},{phases}"
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
