"""Encode rollouts as (state, action, return-to-go) sequences.

State layout, dimension 2M + 2 + d:

    [log ls_1, log os_1, ..., log ls_M, log os_M,
     best_value (standardized), iteration_fraction, best_point (d coords)]

Rewards are normalized stepwise improvements: r = max(0, best gain) / Z with
Z the largest total improvement across the whole buffer, so every
trajectory's total return lies in [0, 1] and a target return of 1.0 means
"match the best simulated run".
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from dro.ensemble import Ensemble
from dro.gp import Dataset
from dro.rollout import RolloutResult


@dataclass(frozen=True)
class TrajStep:
    state: np.ndarray
    action: np.ndarray
    rtg: float

    def __post_init__(self):
        if self.rtg < 0:
            raise ValueError("return-to-go must be non-negative")


@dataclass(frozen=True)
class TrajectorySet:
    trajectories: tuple[tuple[TrajStep, ...], ...]
    normalizer: float  # reward scale Z used for every trajectory

    def __len__(self) -> int:
        return len(self.trajectories)


def state_dim(m: int, d: int) -> int:
    return 2 * m + 2 + d


def _hyper_block(ens: Ensemble) -> np.ndarray:
    block = np.empty(2 * ens.size)
    for i, model in enumerate(ens.models):
        block[2 * i] = np.log(model.hypers.lengthscale)
        block[2 * i + 1] = np.log(model.hypers.outputscale)
    return block


def build_state(
    ens: Ensemble,
    best_value_std: float,
    iteration_fraction: float,
    best_point: np.ndarray,
) -> np.ndarray:
    if not 0.0 <= iteration_fraction <= 1.0:
        raise ValueError("iteration_fraction must lie in [0, 1]")
    return np.concatenate(
        [
            _hyper_block(ens),
            [best_value_std, iteration_fraction],
            np.asarray(best_point, dtype=float).ravel(),
        ]
    )


def live_state(
    ens: Ensemble, data: Dataset, real_iter: int, total_iters: int
) -> np.ndarray:
    """State vector of the real BO process at iteration ``real_iter``."""
    if len(data) == 0:
        raise ValueError("live_state requires observations")
    best_idx = int(np.argmax(data.values))
    model = ens.models[0]
    best_std = (float(data.values[best_idx]) - model.y_mean) / model.y_scale
    return build_state(
        ens,
        best_value_std=best_std,
        iteration_fraction=real_iter / total_iters,
        best_point=data.points[best_idx],
    )


def compute_normalizer(buffer: list[RolloutResult], real_best_std: float) -> float:
    """Z = largest total improvement over the initial incumbent in the buffer."""
    if not buffer:
        return 0.0
    return max(0.0, max(roll.final_best - real_best_std for roll in buffer))


def encode_rollout(
    roll: RolloutResult,
    ens: Ensemble,
    real_best: float,
    real_iter: int,
    total_iters: int,
    normalizer: float,
) -> list[TrajStep]:
    """One rollout to (state, action, rtg) steps on the shared reward scale.

    ``real_best`` is the standardized best real observation (the rollout's
    initial incumbent); states carry the running best value/point, starting
    from the real incumbent.
    """
    data = ens.data
    best_idx = int(np.argmax(data.values))
    best_val = real_best
    best_point = np.asarray(data.points[best_idx], dtype=float)
    frac = real_iter / total_iters

    rewards = np.empty(len(roll.steps))
    states = []
    prev_best = real_best
    for i, step in enumerate(roll.steps):
        states.append(build_state(ens, best_val, frac, best_point))
        gain = max(0.0, step.best_after - prev_best)
        rewards[i] = gain / normalizer if normalizer > 0 else 0.0
        if step.best_after > best_val:
            best_val = step.best_after
            best_point = np.asarray(step.x, dtype=float)
        prev_best = step.best_after

    total = rewards.sum()
    if total > 1.0:  # guard fp drift above the [0, 1] contract
        rewards /= total
    rtg = np.cumsum(rewards[::-1])[::-1]
    return [
        TrajStep(state=states[i], action=np.asarray(roll.steps[i].x, dtype=float), rtg=float(rtg[i]))
        for i in range(len(roll.steps))
    ]


def encode_buffer(
    buffer: list[RolloutResult], ens: Ensemble, real_iter: int, total_iters: int
) -> TrajectorySet:
    """Encode a whole buffer with the buffer-wide normalizer Z."""
    real_best = ens.models[0].best_observed_std
    z = compute_normalizer(buffer, real_best)
    trajectories = tuple(
        tuple(encode_rollout(roll, ens, real_best, real_iter, total_iters, z))
        for roll in buffer
    )
    return TrajectorySet(trajectories=trajectories, normalizer=z)


def validate_trajectory(steps: list[TrajStep]) -> bool:
    """rtg must be a non-increasing, non-negative suffix sum."""
    rtgs = [s.rtg for s in steps]
    if any(r < 0 for r in rtgs):
        return False
    return all(rtgs[i] >= rtgs[i + 1] - 1e-12 for i in range(len(rtgs) - 1))


def dump_trajectories(trajset: TrajectorySet, path) -> None:
    """Line-delimited JSON, one trajectory per line, with rtg and state."""
    with open(path, "w", encoding="utf-8") as fh:
        for traj in trajset.trajectories:
            fh.write(
                json.dumps(
                    {
                        "normalizer": trajset.normalizer,
                        "steps": [
                            {
                                "state": step.state.tolist(),
                                "action": step.action.tolist(),
                                "rtg": step.rtg,
                            }
                            for step in traj
                        ],
                    }
                )
                + "\n"
            )
