"""Candidate pools, confidence-bound ROI masks, and acquisition functions.

The continuous inner argmax is replaced by an argmax over a scrambled-Sobol
candidate pool; the region of interest (ROI) is then just a boolean mask:

    mask[i] = UCB(x_i) >= max_j LCB(x_j),   UCB/LCB = mu +/- kappa_roi * sigma

All acquisition values are computed on the model's standardized output scale
with the latent sigma (no observation noise).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import erfcx, log_ndtr, ndtr
from scipy.stats import qmc

from dro.gp import GpModel

ACQ_KINDS = ("EI", "LOG_EI", "UCB", "PI", "MES")
ACQ_ROTATION = ("EI", "UCB", "PI", "MES")

_SQRT_2PI = np.sqrt(2.0 * np.pi)
# Gumbel quantile fit constants: c_p = log(-log p) at p = 0.25 / 0.75
_C25 = np.log(-np.log(0.25))
_C75 = np.log(-np.log(0.75))


def default_pool_size(d: int) -> int:
    return min(1024 * d, 8192)


@dataclass(frozen=True)
class CandidatePool:
    points: np.ndarray  # (n_cand, d) in the unit box
    sobol_seed: int

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        object.__setattr__(self, "points", pts)
        if pts.shape[0] < 1:
            raise ValueError("candidate pool must contain at least one point")
        if pts.min() < 0.0 or pts.max() > 1.0:
            raise ValueError("candidate pool points must lie in [0, 1]^d")

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class Roi:
    mask: np.ndarray  # bool, aligned with a CandidatePool
    kappa_roi: float = 6.0

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        object.__setattr__(self, "mask", mask)
        if not mask.any():
            raise ValueError("ROI mask must select at least one candidate")

    @property
    def size(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class AcqConfig:
    """Acquisition constants shared by simulation and the GP-BO baseline."""

    kappa_ucb: float = 2.0
    xi: float = 0.01
    mes_samples: int = 10

    def __post_init__(self):
        if self.mes_samples < 1:
            raise ValueError("mes_samples must be >= 1")
        if self.kappa_ucb < 0:
            raise ValueError("kappa_ucb must be non-negative")


@dataclass(frozen=True)
class AcqParams:
    kind: str
    kappa: float = 2.0
    xi: float = 0.01
    mes_samples: int = 10
    incumbent: float | None = None
    max_values: np.ndarray | None = None  # precomputed MES max-value samples

    def __post_init__(self):
        if self.kind not in ACQ_KINDS:
            raise ValueError(f"unknown acquisition kind {self.kind!r}")
        if self.mes_samples < 1:
            raise ValueError("mes_samples must be >= 1")
        if self.kappa < 0:
            raise ValueError("kappa must be non-negative")


def make_pool(d: int, n_cand: int, seed: int, scramble: bool = True) -> CandidatePool:
    """Scrambled Sobol candidates in [0, 1]^d, deterministic given seed."""
    if d < 1 or n_cand < 1:
        raise ValueError("require d >= 1 and n_cand >= 1")
    sampler = qmc.Sobol(d, scramble=scramble, seed=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # non power-of-2 draws
        points = sampler.random(n_cand)
    return CandidatePool(points=points, sobol_seed=seed)


def compute_roi(model: GpModel, pool: CandidatePool, kappa_roi: float = 6.0) -> Roi:
    """Mask of candidates whose UCB reaches the pool-wide max LCB.

    Non-empty by construction: the LCB maximizer satisfies its own
    inequality because UCB >= LCB pointwise.
    """
    mu, var = model.posterior_std_batch(pool.points)
    sigma = np.sqrt(var)
    lcb_max = np.max(mu - kappa_roi * sigma)
    return Roi(mask=mu + kappa_roi * sigma >= lcb_max, kappa_roi=kappa_roi)


# ---------------------------------------------------------------------------
# Acquisition values (standardized scale, latent sigma)
# ---------------------------------------------------------------------------


def _ei(mu: np.ndarray, sigma: np.ndarray, incumbent: float, xi: float) -> np.ndarray:
    u = mu - incumbent - xi
    out = np.maximum(u, 0.0)  # sigma == 0 limit
    pos = sigma > 0
    if np.any(pos):
        z = u[pos] / sigma[pos]
        pdf = np.exp(-0.5 * z * z) / _SQRT_2PI
        out[pos] = u[pos] * ndtr(z) + sigma[pos] * pdf
    return out


def _log_h(z: np.ndarray) -> np.ndarray:
    """log(phi(z) + z * Phi(z)), stable for large negative z via erfcx."""
    out = np.empty_like(z)
    hi = z >= -1.0
    if np.any(hi):
        zh = z[hi]
        out[hi] = np.log(np.exp(-0.5 * zh * zh) / _SQRT_2PI + zh * ndtr(zh))
    lo = ~hi
    if np.any(lo):
        zl = z[lo]
        # phi + z*Phi = exp(-z^2/2) * (1/sqrt(2pi) + 0.5*z*erfcx(-z/sqrt(2)))
        bracket = 1.0 / _SQRT_2PI + 0.5 * zl * erfcx(-zl / np.sqrt(2.0))
        far = zl < -1e6  # bracket cancels below double precision there
        safe = np.where(far, 1.0, np.maximum(bracket, 1e-300))
        out[lo] = np.where(
            far,
            -0.5 * zl * zl - np.log(_SQRT_2PI) - 2.0 * np.log(-zl),
            -0.5 * zl * zl + np.log(safe),
        )
    return out


def _log_ei(mu: np.ndarray, sigma: np.ndarray, incumbent: float, xi: float) -> np.ndarray:
    u = mu - incumbent - xi
    out = np.full_like(mu, -np.inf)
    zero = sigma == 0
    if np.any(zero):
        upos = zero & (u > 0)
        out[upos] = np.log(u[upos])
    pos = ~zero
    if np.any(pos):
        out[pos] = np.log(sigma[pos]) + _log_h(u[pos] / sigma[pos])
    return out


def _pi(mu: np.ndarray, sigma: np.ndarray, incumbent: float, xi: float) -> np.ndarray:
    u = mu - incumbent - xi
    out = np.where(u > 0, 1.0, 0.0) + np.where(u == 0, 0.5, 0.0)
    pos = sigma > 0
    out[pos] = ndtr(u[pos] / sigma[pos])
    return out


def _mes(mu: np.ndarray, sigma: np.ndarray, max_values: np.ndarray) -> np.ndarray:
    """Average reduction in max-value entropy over sampled optima y*.

    Per sample: gamma*phi(gamma)/(2*Phi(gamma)) - log Phi(gamma) with
    gamma = (y* - mu) / sigma; zero where sigma == 0 (no information).
    """
    out = np.zeros_like(mu)
    pos = sigma > 0
    if not np.any(pos):
        return out
    gamma = (max_values[np.newaxis, :] - mu[pos, np.newaxis]) / sigma[pos, np.newaxis]
    log_pdf = -0.5 * gamma * gamma - np.log(_SQRT_2PI)
    log_cdf = log_ndtr(gamma)
    terms = 0.5 * gamma * np.exp(log_pdf - log_cdf) - log_cdf
    out[pos] = terms.mean(axis=1)
    return out


def acq_values(model: GpModel, x: np.ndarray, params: AcqParams) -> np.ndarray:
    """Vectorized acquisition values at the rows of ``x``."""
    mu, var = model.posterior_std_batch(x)
    sigma = np.sqrt(var)
    kind = params.kind
    if kind in ("EI", "LOG_EI", "PI") and params.incumbent is None:
        raise ValueError(f"{kind} requires an incumbent value")
    if kind == "EI":
        return _ei(mu, sigma, params.incumbent, params.xi)
    if kind == "LOG_EI":
        return _log_ei(mu, sigma, params.incumbent, params.xi)
    if kind == "UCB":
        return mu + params.kappa * sigma
    if kind == "PI":
        return _pi(mu, sigma, params.incumbent, params.xi)
    if kind == "MES":
        if params.max_values is None:
            raise ValueError("MES requires precomputed max_values samples")
        return _mes(mu, sigma, np.asarray(params.max_values, dtype=float))
    raise ValueError(f"unknown acquisition kind {kind!r}")


def acq_value(model: GpModel, x: np.ndarray, params: AcqParams) -> float:
    return float(acq_values(model, np.asarray(x, dtype=float).reshape(1, -1), params)[0])


def maximize_acq(
    model: GpModel, pool: CandidatePool, roi: Roi, params: AcqParams
) -> tuple[int, np.ndarray]:
    """Argmax of the acquisition over ROI candidates; ties favor lowest index."""
    mask = roi.mask
    if mask.shape[0] != len(pool):
        raise ValueError("ROI mask does not align with the candidate pool")
    if not mask.any():
        raise ValueError("ROI mask is empty")
    idx = np.flatnonzero(mask)
    values = acq_values(model, pool.points[idx], params)
    winner = int(idx[int(np.argmax(values))])
    return winner, pool.points[winner].copy()


def sample_max_values(
    model: GpModel,
    pool: CandidatePool,
    count: int,
    rng: np.random.Generator,
    incumbent: float,
) -> np.ndarray:
    """Gumbel-approximated samples of the pool-wide maximum of f.

    Fits Gumbel(a, b) to P(max f <= y) = prod_i Phi((y - mu_i)/sigma_i) by
    matching the p = 0.25 and 0.75 quantiles, then clamps every sample at
    incumbent + 1e-6.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    mu, var = model.posterior_std_batch(pool.points)
    sigma = np.maximum(np.sqrt(var), 1e-12)

    def log_p_max_le(y: float) -> float:
        return float(np.sum(log_ndtr((y - mu) / sigma)))

    lo = float(np.min(mu - 8.0 * sigma))
    hi = float(np.max(mu + 8.0 * sigma))

    def quantile(p: float) -> float:
        target = np.log(p)
        a, b = lo, hi
        for _ in range(60):
            mid = 0.5 * (a + b)
            if log_p_max_le(mid) < target:
                a = mid
            else:
                b = mid
        return 0.5 * (a + b)

    y25 = quantile(0.25)
    y75 = quantile(0.75)
    b = max((y75 - y25) / (_C25 - _C75), 0.0)
    a = y25 + b * _C25
    samples = a - b * np.log(-np.log(rng.random(count)))
    return np.maximum(samples, incumbent + 1e-6)
