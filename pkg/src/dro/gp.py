"""Exact Gaussian process regression with an isotropic RBF kernel.

The model works on standardized targets (zero mean, unit variance); the
affine transform is kept on the model so posteriors can be reported in the
original units. Hyperparameters are optimized with Adam in an unconstrained
log parameterization:

    theta = (log lengthscale, log outputscale, log(noise_variance - floor))

so positivity and the noise floor hold by construction. The kernel is

    k(a, b) = outputscale * exp(-||a - b||^2 / (2 * lengthscale^2))

and the factorized matrix is K + noise_variance*I + jitter*outputscale*I.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

NOISE_FLOOR = 1e-4
DEFAULT_JITTER = 1e-6

# noise_variance == NOISE_FLOOR maps to log(noise - floor) = -inf; clamp the
# shifted value here so the raw parameterization stays finite.
_MIN_NOISE_GAP = 1e-12


class NumericalError(RuntimeError):
    """Linear-algebra failure that survived jitter escalation."""

    def __init__(self, message: str, jitter: float | None = None):
        super().__init__(message)
        self.jitter = jitter


@dataclass(frozen=True)
class GpHyperParams:
    """Isotropic RBF hyperparameters on the standardized output scale."""

    lengthscale: float
    outputscale: float = 1.0
    noise_variance: float = NOISE_FLOOR

    def __post_init__(self):
        if not self.lengthscale > 0:
            raise ValueError(f"lengthscale must be positive, got {self.lengthscale}")
        if not self.outputscale > 0:
            raise ValueError(f"outputscale must be positive, got {self.outputscale}")
        if self.noise_variance < NOISE_FLOOR - 1e-15:
            raise ValueError(
                f"noise_variance must be >= {NOISE_FLOOR}, got {self.noise_variance}"
            )


@dataclass(frozen=True)
class Dataset:
    """Observations with inputs normalized to the unit box."""

    points: np.ndarray  # (n, d)
    values: np.ndarray  # (n,)

    def __post_init__(self):
        points = np.atleast_2d(np.asarray(self.points, dtype=float))
        values = np.asarray(self.values, dtype=float).ravel()
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "values", values)
        if points.shape[0] != values.shape[0]:
            raise ValueError(
                f"points/values length mismatch: {points.shape[0]} vs {values.shape[0]}"
            )
        if points.size and (points.min() < -1e-12 or points.max() > 1 + 1e-12):
            raise ValueError("all coordinates must lie in [0, 1]")

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    def append(self, x: np.ndarray, y: float) -> "Dataset":
        x = np.asarray(x, dtype=float).reshape(1, -1)
        return Dataset(np.vstack([self.points, x]), np.append(self.values, y))

    def extends(self, other: "Dataset") -> bool:
        """True when ``self`` contains ``other`` as a prefix."""
        if len(self) < len(other) or self.dimension != other.dimension:
            return False
        return bool(
            np.array_equal(self.points[: len(other)], other.points)
            and np.array_equal(self.values[: len(other)], other.values)
        )


@dataclass(frozen=True)
class Posterior:
    mean: float
    variance: float

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError(f"variance must be non-negative, got {self.variance}")


def kernel_eval(a: np.ndarray, b: np.ndarray, hypers: GpHyperParams) -> float:
    """RBF kernel value k(a, b) = outputscale * exp(-||a-b||^2 / (2 l^2))."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    sqdist = float(np.dot(a - b, a - b))
    return hypers.outputscale * float(np.exp(-0.5 * sqdist / hypers.lengthscale**2))


def _sq_dists(x: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, (n, m)."""
    diff = x[:, np.newaxis, :] - z[np.newaxis, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _kernel_matrix(x: np.ndarray, z: np.ndarray, hypers: GpHyperParams) -> np.ndarray:
    return hypers.outputscale * np.exp(-0.5 * _sq_dists(x, z) / hypers.lengthscale**2)


def _standardize(values: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Shift/scale to zero mean, unit variance; degenerate spread keeps scale 1."""
    mean = float(values.mean())
    scale = float(values.std())
    if scale < 1e-12:
        scale = 1.0
    return (values - mean) / scale, mean, scale


def _factorize(
    points: np.ndarray, hypers: GpHyperParams, jitter: float
) -> tuple[np.ndarray, float]:
    """Cholesky of K + noise*I + jitter*outputscale*I, escalating jitter x10.

    Returns (L, jitter_used). Raises NumericalError carrying the final jitter
    tried after 3 escalations.
    """
    k = _kernel_matrix(points, points, hypers)
    diag = hypers.noise_variance * np.eye(points.shape[0])
    current = jitter
    for attempt in range(4):
        full = k + diag + current * hypers.outputscale * np.eye(points.shape[0])
        if not np.all(np.isfinite(full)):
            break  # numpy cholesky does not flag non-finite input
        try:
            return np.linalg.cholesky(full), current
        except np.linalg.LinAlgError:
            if attempt == 3:
                break
            current = 10.0 * current if current > 0 else 1e-10
    raise NumericalError(
        f"Cholesky factorization failed with jitter up to {current}", jitter=current
    )


@dataclass(frozen=True)
class GpModel:
    """Immutable fitted GP: standardized data plus cached Cholesky/alpha."""

    hypers: GpHyperParams
    data: Dataset
    y_std: np.ndarray = field(repr=False)  # standardized targets
    y_mean: float
    y_scale: float
    chol: np.ndarray = field(repr=False)  # lower triangular
    alpha: np.ndarray = field(repr=False)  # (K + sn^2 I)^-1 y_std
    jitter: float

    # -- posterior on the standardized scale ------------------------------

    def posterior_std_batch(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Latent posterior mean/variance at each row of ``x`` (standardized)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.data.dimension:
            raise ValueError(
                f"query dimension {x.shape[1]} != data dimension {self.data.dimension}"
            )
        kx = _kernel_matrix(self.data.points, x, self.hypers)  # (n, m)
        mean = kx.T @ self.alpha
        v = solve_triangular(self.chol, kx, lower=True)
        var = self.hypers.outputscale - np.einsum("ij,ij->j", v, v)
        return mean, np.maximum(var, 0.0)

    def posterior_std(self, x: np.ndarray) -> tuple[float, float]:
        mean, var = self.posterior_std_batch(np.asarray(x, dtype=float).reshape(1, -1))
        return float(mean[0]), float(var[0])

    # -- original output units --------------------------------------------

    def posterior(self, x: np.ndarray) -> Posterior:
        mean, var = self.posterior_std(x)
        return Posterior(
            mean=self.y_mean + self.y_scale * mean, variance=self.y_scale**2 * var
        )

    def sample_predictive_std(self, x: np.ndarray, rng: np.random.Generator) -> float:
        """One draw from the noisy predictive at x, standardized scale."""
        mean, var = self.posterior_std(x)
        return mean + np.sqrt(var + self.hypers.noise_variance) * rng.standard_normal()

    def sample_predictive(self, x: np.ndarray, rng: np.random.Generator) -> float:
        return self.y_mean + self.y_scale * self.sample_predictive_std(x, rng)

    def with_fantasy_std(self, x: np.ndarray, y_std: float) -> "GpModel":
        """Condition on a fantasy pair without retraining or re-standardizing.

        Hyperparameters and the output transform are frozen; only the
        Cholesky/alpha caches are rebuilt.
        """
        x = np.asarray(x, dtype=float).reshape(1, -1)
        points = np.vstack([self.data.points, x])
        y_new = np.append(self.y_std, y_std)
        chol, used = _factorize(points, self.hypers, self.jitter)
        alpha = cho_solve((chol, True), y_new)
        data = Dataset(points, np.append(self.data.values, self.y_mean + self.y_scale * y_std))
        return GpModel(
            hypers=self.hypers,
            data=data,
            y_std=y_new,
            y_mean=self.y_mean,
            y_scale=self.y_scale,
            chol=chol,
            alpha=alpha,
            jitter=used,
        )

    @property
    def best_observed_std(self) -> float:
        return float(self.y_std.max())


def gp_fit(
    data: Dataset, hypers: GpHyperParams, jitter: float = DEFAULT_JITTER
) -> GpModel:
    """Standardize targets, factorize the kernel matrix, cache alpha."""
    if len(data) == 0:
        raise ValueError("cannot fit a GP on an empty dataset")
    if jitter < 0:
        raise ValueError("jitter must be non-negative")
    y_std, y_mean, y_scale = _standardize(data.values)
    chol, used = _factorize(data.points, hypers, jitter)
    alpha = cho_solve((chol, True), y_std)
    return GpModel(
        hypers=hypers,
        data=data,
        y_std=y_std,
        y_mean=y_mean,
        y_scale=y_scale,
        chol=chol,
        alpha=alpha,
        jitter=used,
    )


def gp_posterior(model: GpModel, x: np.ndarray) -> Posterior:
    """Latent posterior (observation noise excluded), original output units."""
    return model.posterior(x)


def gp_sample_predictive(
    model: GpModel, x: np.ndarray, rng: np.random.Generator
) -> float:
    """Draw mu(x) + sqrt(sigma^2(x) + noise_variance) * z, original units."""
    return model.sample_predictive(x, rng)


# ---------------------------------------------------------------------------
# Marginal likelihood and hyperparameter training
# ---------------------------------------------------------------------------


def hypers_to_raw(hypers: GpHyperParams) -> np.ndarray:
    """Map to the unconstrained (log l, log s^2, log(sn^2 - floor)) vector."""
    gap = max(hypers.noise_variance - NOISE_FLOOR, _MIN_NOISE_GAP)
    return np.array(
        [np.log(hypers.lengthscale), np.log(hypers.outputscale), np.log(gap)]
    )


def raw_to_hypers(theta: np.ndarray) -> GpHyperParams:
    return GpHyperParams(
        lengthscale=float(np.exp(theta[0])),
        outputscale=float(np.exp(theta[1])),
        noise_variance=NOISE_FLOOR + float(np.exp(theta[2])),
    )


def _nlml_and_grad(
    data: Dataset, hypers: GpHyperParams, jitter: float, want_grad: bool
) -> tuple[float, np.ndarray | None]:
    y_std, _, _ = _standardize(data.values)
    n = len(data)
    chol, used = _factorize(data.points, hypers, jitter)
    alpha = cho_solve((chol, True), y_std)
    value = (
        0.5 * float(y_std @ alpha)
        + float(np.sum(np.log(np.diag(chol))))
        + 0.5 * n * np.log(2.0 * np.pi)
    )
    if not want_grad:
        return value, None

    # d nlml / d theta_j = 0.5 * tr((K^-1 - alpha alpha^T) dK/dtheta_j)
    k_inv = cho_solve((chol, True), np.eye(n))
    a_mat = k_inv - np.outer(alpha, alpha)
    sqd = _sq_dists(data.points, data.points)
    k_rbf = hypers.outputscale * np.exp(-0.5 * sqd / hypers.lengthscale**2)

    dk_dlog_ls = k_rbf * sqd / hypers.lengthscale**2
    dk_dlog_os = k_rbf + used * hypers.outputscale * np.eye(n)
    dnoise = hypers.noise_variance - NOISE_FLOOR  # d sn^2 / d theta_noise

    grad = np.array(
        [
            0.5 * float(np.sum(a_mat * dk_dlog_ls)),
            0.5 * float(np.sum(a_mat * dk_dlog_os)),
            0.5 * float(np.trace(a_mat)) * dnoise,
        ]
    )
    return value, grad


def nlml(
    data: Dataset, hypers: GpHyperParams, jitter: float = DEFAULT_JITTER
) -> float:
    """Negative log marginal likelihood of the standardized targets.

    nlml = 0.5 y^T K^-1 y + 0.5 log|K| + (n/2) log 2pi with K the factorized
    matrix (noise and jitter included).
    """
    if len(data) == 0:
        raise ValueError("nlml requires a non-empty dataset")
    value, _ = _nlml_and_grad(data, hypers, jitter, want_grad=False)
    return value


def nlml_grad(
    data: Dataset, hypers: GpHyperParams, jitter: float = DEFAULT_JITTER
) -> np.ndarray:
    """Analytic nlml gradient in the unconstrained parameterization.

    Component order matches :func:`hypers_to_raw`.
    """
    if len(data) == 0:
        raise ValueError("nlml_grad requires a non-empty dataset")
    _, grad = _nlml_and_grad(data, hypers, jitter, want_grad=True)
    return grad


def train_gp_hypers(
    data: Dataset,
    init: GpHyperParams,
    lr: float = 0.1,
    iters: int = 50,
    jitter: float = DEFAULT_JITTER,
) -> GpHyperParams:
    """Adam on the nlml; returns the best iterate seen (including the init)."""
    if len(data) == 0:
        raise ValueError("train_gp_hypers requires a non-empty dataset")
    theta = hypers_to_raw(init)
    best_val = nlml(data, init, jitter)
    best = init
    m = np.zeros(3)
    v = np.zeros(3)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    for step in range(1, iters + 1):
        val, grad = _nlml_and_grad(data, raw_to_hypers(theta), jitter, want_grad=True)
        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad * grad
        m_hat = m / (1.0 - beta1**step)
        v_hat = v / (1.0 - beta2**step)
        theta = theta - lr * m_hat / (np.sqrt(v_hat) + eps)
        candidate = raw_to_hypers(theta)
        val = nlml(data, candidate, jitter)
        if val < best_val:
            best_val = val
            best = candidate
    return best
