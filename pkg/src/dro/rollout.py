"""Simulated BO trajectories inside one GP's belief, with early stopping.

A rollout repeatedly (1) computes the model's ROI over the candidate pool,
(2) maximizes the given acquisition inside it, (3) draws a fantasy
observation from the predictive, (4) conditions the model on the fantasy
pair with hyperparameters frozen, and (5) stops once the best expected
improvement inside the ROI drops below ``delta`` or ``max_len`` is reached.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from dro.acquisition import (
    ACQ_ROTATION,
    AcqConfig,
    AcqParams,
    CandidatePool,
    Roi,
    acq_values,
    compute_roi,
    maximize_acq,
    sample_max_values,
)
from dro.ensemble import Ensemble
from dro.gp import GpModel, NumericalError

logger = logging.getLogger(__name__)

STOP_BES = "BES"
STOP_MAX_LEN = "MAX_LEN"


@dataclass(frozen=True)
class RolloutConfig:
    delta: float = 1e-4
    max_len: int = 20
    rollouts_per_gp: int = 4
    kappa_roi: float = 6.0
    roi_enabled: bool = True  # False: rollouts over the whole pool (ablation)
    fixed_acq: str | None = None  # pin one acquisition instead of rotating
    acq: AcqConfig = field(default_factory=AcqConfig)

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")
        if self.rollouts_per_gp < 1:
            raise ValueError("rollouts_per_gp must be >= 1")
        if self.fixed_acq is not None and self.fixed_acq not in ACQ_ROTATION:
            raise ValueError(f"fixed_acq must be one of {ACQ_ROTATION}")


@dataclass(frozen=True)
class SimStep:
    x: np.ndarray
    y_sim: float  # fantasy observation, standardized scale
    best_after: float
    acq_kind: str


@dataclass(frozen=True)
class RolloutResult:
    steps: tuple[SimStep, ...]
    gp_index: int
    rollout_index: int
    stop_reason: str

    def __post_init__(self):
        if len(self.steps) < 1:
            raise ValueError("a rollout must contain at least one step")
        if self.stop_reason not in (STOP_BES, STOP_MAX_LEN):
            raise ValueError(f"unknown stop reason {self.stop_reason!r}")

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def final_best(self) -> float:
        return self.steps[-1].best_after


def stable_hash(*parts: int) -> int:
    """Platform-stable 63-bit hash of a tuple of integers (seed derivation)."""
    payload = struct.pack(f"<{len(parts)}q", *parts)
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


def _roi_for(model: GpModel, pool: CandidatePool, cfg: RolloutConfig) -> Roi:
    if cfg.roi_enabled:
        return compute_roi(model, pool, cfg.kappa_roi)
    return Roi(mask=np.ones(len(pool), dtype=bool), kappa_roi=cfg.kappa_roi)


def _max_ei_over_roi(model: GpModel, pool: CandidatePool, roi: Roi, incumbent: float) -> float:
    params = AcqParams(kind="EI", xi=0.0, incumbent=incumbent)
    return float(np.max(acq_values(model, pool.points[roi.mask], params)))


def simulate_rollout(
    model: GpModel,
    pool: CandidatePool,
    cfg: RolloutConfig,
    acq_kind: str,
    seed: int,
    gp_index: int = 0,
    rollout_index: int = 1,
) -> RolloutResult:
    """One fantasy trajectory; deterministic given the seed.

    The initial incumbent is the best real observation (standardized). A
    fantasy refit failure ends the rollout early with MAX_LEN semantics once
    at least one step exists.
    """
    rng = np.random.default_rng(seed)
    work = model
    best = model.best_observed_std
    steps: list[SimStep] = []
    stop_reason = STOP_MAX_LEN
    roi = _roi_for(work, pool, cfg)
    for _ in range(cfg.max_len):
        params = AcqParams(
            kind=acq_kind,
            kappa=cfg.acq.kappa_ucb,
            xi=cfg.acq.xi,
            mes_samples=cfg.acq.mes_samples,
            incumbent=best,
            max_values=(
                sample_max_values(work, pool, cfg.acq.mes_samples, rng, incumbent=best)
                if acq_kind == "MES"
                else None
            ),
        )
        _, x = maximize_acq(work, pool, roi, params)
        y_sim = float(work.sample_predictive_std(x, rng))
        best = max(best, y_sim)
        steps.append(SimStep(x=x, y_sim=y_sim, best_after=best, acq_kind=acq_kind))
        try:
            work = work.with_fantasy_std(x, y_sim)
        except NumericalError:
            logger.warning(
                "fantasy refit failed at step %d of rollout (gp=%d, k=%d); truncating",
                len(steps), gp_index, rollout_index,
            )
            break
        roi = _roi_for(work, pool, cfg)
        if _max_ei_over_roi(work, pool, roi, best) < cfg.delta:
            stop_reason = STOP_BES
            break
    return RolloutResult(
        steps=tuple(steps),
        gp_index=gp_index,
        rollout_index=rollout_index,
        stop_reason=stop_reason,
    )


def rollout_acq_kind(cfg: RolloutConfig, k: int) -> str:
    """Acquisition for rollout k (1-based): fixed, or rotation EI/UCB/PI/MES."""
    if cfg.fixed_acq is not None:
        return cfg.fixed_acq
    return ACQ_ROTATION[(k - 1) % len(ACQ_ROTATION)]


def generate_buffer(
    ens: Ensemble,
    pool: CandidatePool,
    cfg: RolloutConfig,
    base_seed: int,
    real_iter: int,
) -> list[RolloutResult]:
    """M x K rollouts with per-(m, k) derived seeds; failures are skipped."""
    results: list[RolloutResult] = []
    failures = 0
    for m, model in enumerate(ens.models):
        for k in range(1, cfg.rollouts_per_gp + 1):
            kind = rollout_acq_kind(cfg, k)
            seed = stable_hash(base_seed, real_iter, m, k)
            try:
                results.append(
                    simulate_rollout(
                        model, pool, cfg, kind, seed, gp_index=m, rollout_index=k
                    )
                )
            except (NumericalError, ValueError) as exc:
                failures += 1
                logger.warning("rollout (gp=%d, k=%d) failed: %s", m, k, exc)
    if not results:
        raise NumericalError(f"all {failures} rollouts failed")
    return results


def dump_rollouts(rollouts: list[RolloutResult], path) -> None:
    """One rollout per line: gp_index, rollout_index, steps, stop_reason."""
    with open(path, "w", encoding="utf-8") as fh:
        for roll in rollouts:
            fh.write(
                json.dumps(
                    {
                        "gp_index": roll.gp_index,
                        "rollout_index": roll.rollout_index,
                        "steps": [
                            {
                                "x": step.x.tolist(),
                                "y_sim": step.y_sim,
                                "best_after": step.best_after,
                                "acq_kind": step.acq_kind,
                            }
                            for step in roll.steps
                        ],
                        "stop_reason": roll.stop_reason,
                    }
                )
                + "\n"
            )
