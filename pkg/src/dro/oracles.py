"""Independent reference implementations used to validate the fast paths.

Everything here recomputes from first principles (dense inverses, Monte
Carlo, finite differences) and deliberately shares no numerical helper with
the modules it checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dro.gp import NOISE_FLOOR, Dataset, GpHyperParams, GpModel, Posterior


@dataclass(frozen=True)
class OracleReport:
    name: str
    max_abs_err: float
    max_rel_err: float
    n_cases: int
    passed: bool


def dense_gp_oracle(
    data: Dataset,
    hypers: GpHyperParams,
    query: np.ndarray,
    jitter: float = 1e-6,
) -> Posterior:
    """GP posterior by direct matrix inverse, no Cholesky, no cached state."""
    n = len(data)
    if n > 200:
        raise ValueError("dense oracle limited to n <= 200")
    x = data.points
    y = np.asarray(data.values, dtype=float)
    mean = y.mean()
    scale = y.std()
    if scale < 1e-12:
        scale = 1.0
    y_std = (y - mean) / scale

    def k(u, v):
        diff = u - v
        return hypers.outputscale * np.exp(
            -0.5 * float(diff @ diff) / hypers.lengthscale**2
        )

    gram = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            gram[i, j] = k(x[i], x[j])
    gram += (hypers.noise_variance + jitter * hypers.outputscale) * np.eye(n)
    try:
        inv = np.linalg.inv(gram)
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular kernel matrix; oracle skip") from exc

    q = np.asarray(query, dtype=float).ravel()
    kq = np.array([k(x[i], q) for i in range(n)])
    mu = float(kq @ inv @ y_std)
    var = float(k(q, q) - kq @ inv @ kq)
    return Posterior(mean=mean + scale * mu, variance=max(var, 0.0) * scale**2)


def dense_nlml_oracle(
    data: Dataset, hypers: GpHyperParams, jitter: float = 1e-6
) -> float:
    """0.5 y^T K^-1 y + 0.5 log det K + (n/2) log 2pi via dense solve."""
    n = len(data)
    y = np.asarray(data.values, dtype=float)
    mean, scale = y.mean(), y.std()
    if scale < 1e-12:
        scale = 1.0
    y_std = (y - mean) / scale
    diff = data.points[:, None, :] - data.points[None, :, :]
    gram = hypers.outputscale * np.exp(
        -0.5 * np.sum(diff * diff, axis=2) / hypers.lengthscale**2
    )
    gram += (hypers.noise_variance + jitter * hypers.outputscale) * np.eye(n)
    sign, logdet = np.linalg.slogdet(gram)
    if sign <= 0:
        raise ValueError("non positive-definite kernel matrix; oracle skip")
    return float(
        0.5 * y_std @ np.linalg.solve(gram, y_std)
        + 0.5 * logdet
        + 0.5 * n * np.log(2.0 * np.pi)
    )


def mc_improvement_oracle(
    mu: float,
    sigma: float,
    incumbent: float,
    xi: float,
    kind: str,
    n_samples: int,
    rng: np.random.Generator,
) -> float:
    """Monte-Carlo E[max(0, f - inc - xi)] or P(f > inc + xi) for f ~ N(mu, sigma^2)."""
    if sigma == 0.0:
        if kind == "EI":
            return max(0.0, mu - incumbent - xi)
        return float(mu > incumbent + xi)
    f = mu + sigma * rng.standard_normal(n_samples)
    if kind == "EI":
        return float(np.maximum(0.0, f - incumbent - xi).mean())
    if kind == "PI":
        return float((f > incumbent + xi).mean())
    raise ValueError(f"unsupported kind for MC oracle: {kind}")


def mc_acq_oracle(
    model: GpModel,
    x: np.ndarray,
    kind: str,
    n_samples: int,
    rng: np.random.Generator,
    incumbent: float | None = None,
    xi: float = 0.01,
) -> float:
    """MC acquisition estimate from the model's latent posterior (standardized)."""
    mu, var = model.posterior_std(x)
    if incumbent is None:
        incumbent = model.best_observed_std
    return mc_improvement_oracle(
        mu, float(np.sqrt(var)), incumbent, xi, kind, n_samples, rng
    )


def fd_gradient(fn, theta: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of a flat vector."""
    theta = np.asarray(theta, dtype=float)
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        up = theta.copy()
        dn = theta.copy()
        up[i] += h
        dn[i] -= h
        grad[i] = (fn(up) - fn(dn)) / (2.0 * h)
    return grad


# ---------------------------------------------------------------------------
# Validation suite behind the `validate` CLI subcommand
# ---------------------------------------------------------------------------


def _random_dataset(rng: np.random.Generator, n: int, d: int) -> Dataset:
    return Dataset(rng.random((n, d)), rng.standard_normal(n))


def _random_hypers(rng: np.random.Generator) -> GpHyperParams:
    return GpHyperParams(
        lengthscale=float(rng.uniform(0.2, 2.0)),
        outputscale=float(rng.uniform(0.5, 2.0)),
        noise_variance=NOISE_FLOOR + float(rng.uniform(1e-3, 0.1)),
    )


def run_validation(seed: int = 0) -> list[OracleReport]:
    """Fast oracle suite: posterior, nlml, gradients, EI/PI, log-EI."""
    from dro.acquisition import AcqParams, acq_values
    from dro.gp import gp_fit, gp_posterior, hypers_to_raw, nlml, nlml_grad, raw_to_hypers

    rng = np.random.default_rng(seed)
    reports = []

    # posterior vs dense inverse
    errs = []
    for _ in range(50):
        d = int(rng.integers(1, 6))
        data = _random_dataset(rng, int(rng.integers(2, 51)), d)
        hypers = _random_hypers(rng)
        model = gp_fit(data, hypers)
        for _ in range(4):
            q = rng.random(d)
            got = gp_posterior(model, q)
            want = dense_gp_oracle(data, hypers, q)
            errs.append(abs(got.mean - want.mean))
            errs.append(abs(got.variance - want.variance))
    max_err = max(errs)
    reports.append(
        OracleReport("gp_posterior_vs_dense", max_err, max_err, 50, max_err < 1e-8)
    )

    # nlml vs dense formula
    errs = []
    for _ in range(20):
        data = _random_dataset(rng, int(rng.integers(2, 40)), 2)
        hypers = _random_hypers(rng)
        errs.append(abs(nlml(data, hypers) - dense_nlml_oracle(data, hypers)))
    max_err = max(errs)
    reports.append(OracleReport("nlml_vs_dense", max_err, max_err, 20, max_err < 1e-8))

    # analytic gradient vs finite differences
    rels = []
    for _ in range(20):
        data = _random_dataset(rng, 10, 2)
        hypers = _random_hypers(rng)
        theta = hypers_to_raw(hypers)
        fd = fd_gradient(lambda t: nlml(data, raw_to_hypers(t)), theta)
        an = nlml_grad(data, hypers)
        rels.append(float(np.max(np.abs(an - fd) / np.maximum(np.abs(fd), 1e-8))))
    max_rel = max(rels)
    reports.append(OracleReport("nlml_grad_vs_fd", max_rel, max_rel, 20, max_rel < 1e-4))

    # EI / PI analytic vs Monte Carlo on a fitted model
    data = _random_dataset(rng, 12, 2)
    model = gp_fit(data, _random_hypers(rng))
    abs_errs = {"EI": [], "PI": []}
    for _ in range(10):
        q = rng.random(2)
        for kind, tol_samples in (("EI", 400_000), ("PI", 400_000)):
            params = AcqParams(kind=kind, incumbent=model.best_observed_std)
            analytic = float(acq_values(model, q.reshape(1, -1), params)[0])
            mc = mc_acq_oracle(
                model, q, kind, tol_samples, np.random.default_rng(rng.integers(2**32))
            )
            abs_errs[kind].append(abs(analytic - mc))
    for kind, tol in (("EI", 3e-3), ("PI", 2e-3)):
        max_err = max(abs_errs[kind])
        reports.append(
            OracleReport(f"{kind.lower()}_vs_mc", max_err, max_err, 10, max_err < tol)
        )

    # exp(log EI) vs EI
    rels = []
    for _ in range(200):
        q = rng.random((1, 2))
        ei_params = AcqParams(kind="EI", incumbent=model.best_observed_std)
        log_params = AcqParams(kind="LOG_EI", incumbent=model.best_observed_std)
        ei = float(acq_values(model, q, ei_params)[0])
        log_ei = float(acq_values(model, q, log_params)[0])
        if ei > 1e-12:
            rels.append(abs(np.exp(log_ei) - ei) / ei)
    max_rel = max(rels) if rels else 0.0
    reports.append(
        OracleReport("exp_log_ei_vs_ei", max_rel, max_rel, len(rels), max_rel < 1e-6)
    )
    return reports
