"""Benchmark objectives on the unit box (maximization convention).

Each objective maps [0, 1]^d to its native domain internally and exposes
both the noiseless value (for regret accounting) and a noisy evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

ACKLEY_BOUND = 32.768


@dataclass(frozen=True)
class ObjectiveSpec:
    name: str
    dimension: int
    noise_std: float
    true_optimum_value: float | None
    _true_fn: Callable[[np.ndarray], float] = field(repr=False)

    def true_value(self, x_unit: np.ndarray) -> float:
        """Noiseless objective value at a unit-box point."""
        x_unit = np.asarray(x_unit, dtype=float).ravel()
        if x_unit.shape != (self.dimension,):
            raise ValueError(
                f"expected a point of dimension {self.dimension}, got {x_unit.shape}"
            )
        return float(self._true_fn(x_unit))

    def evaluate(self, x_unit: np.ndarray, rng: np.random.Generator) -> float:
        """Noisy observation: true value plus N(0, noise_std^2)."""
        value = self.true_value(x_unit)
        if self.noise_std > 0:
            value += self.noise_std * rng.standard_normal()
        return value


def ackley(x_native: np.ndarray, a: float = 20.0, b: float = 0.2, c: float = 2.0 * np.pi) -> float:
    """Negated standard Ackley (so that the origin is the maximum, value 0)."""
    x = np.asarray(x_native, dtype=float).ravel()
    d = x.size
    term1 = -a * np.exp(-b * np.sqrt(np.mean(x * x)))
    term2 = -np.exp(np.mean(np.cos(c * x)))
    return float(-(term1 + term2 + a + np.e))


def make_ackley(dimension: int, shift: float = 0.0, noise_std: float = 0.1) -> ObjectiveSpec:
    """Ackley on [-32.768, 32.768]^d reached by an affine map from the unit box."""

    def fn(x_unit: np.ndarray) -> float:
        x_native = 2.0 * ACKLEY_BOUND * x_unit - ACKLEY_BOUND
        return ackley(x_native) + shift

    return ObjectiveSpec(
        name="ackley",
        dimension=dimension,
        noise_std=noise_std,
        true_optimum_value=shift,
        _true_fn=fn,
    )


def make_quadratic(
    dimension: int, center: float = 0.3, noise_std: float = 0.0
) -> ObjectiveSpec:
    """Concave paraboloid peaking at (center, ..., center), maximum 0."""

    def fn(x_unit: np.ndarray) -> float:
        return float(-np.sum((x_unit - center) ** 2))

    return ObjectiveSpec(
        name="quadratic",
        dimension=dimension,
        noise_std=noise_std,
        true_optimum_value=0.0,
        _true_fn=fn,
    )


OBJECTIVES: dict[str, Callable[..., ObjectiveSpec]] = {
    "ackley": make_ackley,
    "quadratic": make_quadratic,
}


def build_objective(name: str, dimension: int, noise_std: float, shift: float = 0.0) -> ObjectiveSpec:
    if name not in OBJECTIVES:
        raise ValueError(f"unknown objective {name!r}; known: {sorted(OBJECTIVES)}")
    if name == "ackley":
        return make_ackley(dimension, shift=shift, noise_std=noise_std)
    return make_quadratic(dimension, noise_std=noise_std)
