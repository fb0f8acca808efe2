"""Brute-force checks for the analytic fast paths.

Nothing here imports the code it verifies: quadrature instead of
conjugacy, LU solves instead of Cholesky, information-form Gaussians
instead of gain matrices.
"""

from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from .errors import NumericFailure


@dataclass(frozen=True)
class GridDensity:
    axes: tuple
    log_values: np.ndarray
    cell_volume: float

    def normalized(self):
        m = self.log_values.max()
        mass = np.exp(self.log_values - m).sum() * self.cell_volume
        return np.exp(self.log_values - m) / mass


def _mixture_logpdf_1d(x, weights, means, variances):
    x = np.asarray(x)[..., None]
    with np.errstate(divide="ignore"):
        log_w = np.log(np.asarray(weights, float))
    terms = log_w - 0.5 * (np.log(2 * np.pi * variances) + (x - means) ** 2 / variances)
    m = terms.max(axis=-1, keepdims=True)
    return (m + np.log(np.exp(terms - m).sum(axis=-1, keepdims=True)))[..., 0]


def _params_1d(gmm):
    if gmm.dim != 1:
        raise ValueError("quadrature oracle only supports d = 1")
    return (np.asarray(gmm.weights), np.asarray(gmm.means)[:, 0],
            np.asarray(gmm.covs)[:, 0, 0])


def default_grid(gmm, n=16385, span=10.0):
    """Uniform grid covering ``span`` standard deviations around every component."""
    _, mu, var = _params_1d(gmm)
    sd = np.sqrt(var)
    return np.linspace((mu - span * sd).min(), (mu + span * sd).max(), n)


def _mixture_logpdf_dense(points, weights, means, covs):
    """Mixture log density at ``points`` (n, d) via explicit inverses."""
    terms = []
    for w, mu, cov in zip(weights, means, covs):
        diff = points - mu
        _, logdet = np.linalg.slogdet(2 * np.pi * cov)
        quad = np.einsum("ni,ij,nj->n", diff, np.linalg.inv(cov), diff)
        with np.errstate(divide="ignore"):
            terms.append(np.log(w) - 0.5 * (logdet + quad))
    terms = np.array(terms)
    m = terms.max(axis=0)
    return m + np.log(np.exp(terms - m).sum(axis=0))


def prior_grid_density(gmm, axes=None, n=None, span=10.0):
    """Mixture log density on a regular grid, ``d`` = 1 or 2.

    Default axes cover ``span`` standard deviations of every component with
    16385 nodes (d = 1) or 401 nodes per axis (d = 2).
    """
    d = gmm.dim
    if d not in (1, 2):
        raise ValueError("grid densities only support d <= 2")
    if axes is None:
        n = n or (16385 if d == 1 else 401)
        mu = np.asarray(gmm.means)
        sd = np.sqrt(np.diagonal(np.asarray(gmm.covs), axis1=1, axis2=2))
        axes = tuple(np.linspace((mu[:, i] - span * sd[:, i]).min(),
                                 (mu[:, i] + span * sd[:, i]).max(), n) for i in range(d))
    axes = tuple(np.asarray(a, dtype=np.float64) for a in axes)
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    log_vals = _mixture_logpdf_dense(points, gmm.weights, gmm.means, gmm.covs)
    cell = float(np.prod([a[1] - a[0] for a in axes]))
    return GridDensity(axes, log_vals.reshape(mesh[0].shape), cell)


def quadrature_velocity(gmm, t, x, grid=None):
    """``(x - E[x0 | x_t = x]) / t`` with the expectation by trapezoidal quadrature."""
    if not 0.0 < t <= 1.0:
        raise ValueError("quadrature velocity needs 0 < t <= 1")
    w, mu, var = _params_1d(gmm)
    grid = default_grid(gmm) if grid is None else np.asarray(grid, dtype=np.float64)
    if grid.size < 4096:
        raise ValueError("grid needs at least 4096 nodes")
    sd = np.sqrt(var)
    if grid[0] > (mu - 4 * sd).min() or grid[-1] < (mu + 4 * sd).max():
        raise ValueError("grid must span at least 8 prior standard deviations")
    log_joint = _mixture_logpdf_1d(grid, w, mu, var) - 0.5 * ((x - (1 - t) * grid) / t) ** 2
    weights = np.exp(log_joint - log_joint.max())
    e_x0 = trapezoid(grid * weights, grid) / trapezoid(weights, grid)
    return (x - e_x0) / t


def ridge_closed_form(a, y, lam, anchor):
    """Solve ``(A^T A + lam I) z = A^T y + lam * anchor`` by LU."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    lhs = a.T @ a + lam * np.eye(a.shape[1])
    try:
        z = np.linalg.solve(lhs, a.T @ np.asarray(y, float) + lam * np.asarray(anchor, float))
    except np.linalg.LinAlgError as exc:
        raise NumericFailure(str(exc)) from exc
    if not np.all(np.isfinite(z)):
        raise NumericFailure("ridge solution is not finite")
    return z


def ula_stationary_covariance(precision, zeta, tol=1e-12, max_doublings=200):
    """Stationary covariance of ULA on ``N(., P^-1)``.

    Fixed point of ``S = M S M + 2 zeta I`` with ``M = I - zeta P``, found by
    the doubling iteration ``S <- S + A S A^T``, ``A <- A^2`` (each pass
    squares the number of summed terms).
    """
    p = np.atleast_2d(np.asarray(precision, dtype=np.float64))
    lam_max = np.linalg.eigvalsh(p).max()
    if not 0 < zeta < 2.0 / lam_max:
        raise ValueError(f"zeta={zeta} unstable: need 0 < zeta < 2/lambda_max = {2 / lam_max:.4g}")
    m = np.eye(p.shape[0]) - zeta * p
    s = 2.0 * zeta * np.eye(p.shape[0])
    a = m
    for _ in range(max_doublings):
        inc = a @ s @ a.T
        s = s + inc
        a = a @ a
        if np.abs(inc).max() <= tol * np.abs(s).max():
            return s
    raise NumericFailure("Lyapunov iteration did not converge")


def finite_difference_gradient(f, x, h=1e-5):
    """Central differences of a scalar field."""
    if not h > 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=np.float64)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


@dataclass(frozen=True)
class MomentReport:
    mean_error: float
    cov_error: float
    mean_abs_err: np.ndarray
    cov_abs_err: np.ndarray
    mean_se: np.ndarray
    cov_se: np.ndarray

    def within(self, n_se=3.0):
        """True when every mean and covariance entry is within ``n_se`` standard errors."""
        return bool(np.all(self.mean_abs_err <= n_se * self.mean_se)
                    and np.all(self.cov_abs_err <= n_se * self.cov_se))

    def worst_z(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.concatenate([(self.mean_abs_err / self.mean_se).ravel(),
                                (self.cov_abs_err / self.cov_se).ravel()])
        return float(np.nanmax(z))


def mixture_moments(weights, means, covs):
    weights, means, covs = (np.asarray(v, float) for v in (weights, means, covs))
    mean = weights @ means
    centred = means - mean
    cov = np.einsum("k,kij->ij", weights, covs) + np.einsum("k,ki,kj->ij", weights, centred, centred)
    return mean, cov


def moment_distance(samples, target):
    """Mean/covariance discrepancy of ``samples`` against an analytic mixture.

    Standard errors come from the samples: ``sd(x_i) / sqrt(n)`` for means and
    ``sd((x_i - m_i)(x_j - m_j)) / sqrt(n)`` for covariance entries.
    """
    x = np.asarray(samples, dtype=np.float64)
    n = x.shape[0]
    if n < 1000:
        raise ValueError("moment_distance needs at least 1000 samples")
    mean, cov = mixture_moments(target.weights, target.means, target.covs)
    emp_mean = x.mean(0)
    c = x - emp_mean
    prods = c[:, :, None] * c[:, None, :]
    emp_cov = prods.mean(0)
    mean_abs = np.abs(emp_mean - mean)
    cov_abs = np.abs(emp_cov - cov)
    return MomentReport(
        mean_error=float(mean_abs.max()),
        cov_error=float(cov_abs.max()),
        mean_abs_err=mean_abs,
        cov_abs_err=cov_abs,
        mean_se=x.std(0) / np.sqrt(n),
        cov_se=prods.std(0) / np.sqrt(n),
    )


def pcn_log_acceptance_ratio(x_old, x_new, rho, noise_scale=None):
    """Log Metropolis-Hastings ratio of ``x' = rho x + noise_scale z`` under N(0, I).

    ``noise_scale`` defaults to the pCN value ``sqrt(1 - rho^2)``, for which
    the ratio is identically zero for every pair of points; any other scale
    gives a proposal that does not preserve N(0, I).
    """
    if not 0.0 <= rho < 1.0:
        raise ValueError("rho must lie in [0, 1) for a proper proposal density")
    x_old = np.asarray(x_old, float)
    x_new = np.asarray(x_new, float)
    var = 1.0 - rho * rho if noise_scale is None else float(noise_scale) ** 2

    def log_n(x, m, v):
        return -0.5 * (((x - m) ** 2).sum() / v + x.size * np.log(2 * np.pi * v))

    return (log_n(x_new, 0.0, 1.0) + log_n(x_old, rho * x_new, var)
            - log_n(x_old, 0.0, 1.0) - log_n(x_new, rho * x_old, var))


def joint_posterior_draws(weights, means, covs, a, y, sigma_n, t, x_t, rng):
    """One exact draw of ``x0 | x_t, y`` per row of ``x_t``.

    Per component the law is Gaussian with precision
    ``Sigma_k^-1 + ((1-t)/t)^2 I + A^T A / sigma_n^2``; the component itself is
    drawn from its exact responsibility, computed from the joint Gaussian of
    ``(x_t, y)`` given the component.
    """
    weights, means, covs = (np.asarray(v, float) for v in (weights, means, covs))
    a = np.atleast_2d(np.asarray(a, float))
    y = np.asarray(y, float)
    x_t = np.atleast_2d(np.asarray(x_t, float))
    n, d = x_t.shape
    k_count = len(weights)
    s = 1.0 - t
    m = a.shape[0]

    # joint observation o = (x_t, y) = B x0 + noise, B = [(1-t) I; A]
    b = np.vstack([s * np.eye(d), a])
    noise_cov = np.diag(np.concatenate([np.full(d, t * t), np.full(m, sigma_n ** 2)]))
    obs = np.hstack([x_t, np.broadcast_to(y, (n, m))])
    log_r = np.empty((n, k_count))
    post_means = np.empty((n, k_count, d))
    post_covs = np.empty((k_count, d, d))
    noise_prec = np.linalg.inv(noise_cov)
    for k in range(k_count):
        ocov = b @ covs[k] @ b.T + noise_cov
        diff = obs - b @ means[k]
        sol = np.linalg.solve(ocov, diff.T).T
        _, logdet = np.linalg.slogdet(ocov)
        with np.errstate(divide="ignore"):
            log_r[:, k] = np.log(weights[k]) - 0.5 * ((diff * sol).sum(1) + logdet)
        prec = np.linalg.inv(covs[k]) + b.T @ noise_prec @ b
        post_covs[k] = np.linalg.inv(prec)
        rhs = np.linalg.solve(covs[k], means[k]) + obs @ (noise_prec @ b)
        post_means[:, k] = rhs @ post_covs[k]
    log_r -= log_r.max(1, keepdims=True)
    probs = np.exp(log_r)
    probs /= probs.sum(1, keepdims=True)
    u = rng.random(n)
    labels = np.minimum((probs.cumsum(1) < u[:, None]).sum(1), k_count - 1)
    post_covs = 0.5 * (post_covs + np.swapaxes(post_covs, 1, 2))
    chols = np.linalg.cholesky(post_covs)
    eps = rng.standard_normal((n, d))
    return post_means[np.arange(n), labels] + np.einsum("nij,nj->ni", chols[labels], eps)


def posterior_mixture(weights, means, covs, a, y, sigma_n):
    """Parameters ``(weights, means, covs)`` of ``p(x0 | y)`` in information form."""
    weights, means, covs = (np.asarray(v, float) for v in (weights, means, covs))
    a = np.atleast_2d(np.asarray(a, float))
    y = np.asarray(y, float)
    k_count, d = means.shape
    log_r = np.empty(k_count)
    pm = np.empty((k_count, d))
    pc = np.empty((k_count, d, d))
    for k in range(k_count):
        ocov = a @ covs[k] @ a.T + sigma_n ** 2 * np.eye(a.shape[0])
        diff = y - a @ means[k]
        _, logdet = np.linalg.slogdet(ocov)
        log_r[k] = np.log(weights[k]) - 0.5 * (diff @ np.linalg.solve(ocov, diff) + logdet)
        prec = np.linalg.inv(covs[k]) + a.T @ a / sigma_n ** 2
        pc[k] = np.linalg.inv(prec)
        pm[k] = pc[k] @ (np.linalg.solve(covs[k], means[k]) + a.T @ y / sigma_n ** 2)
    probs = np.exp(log_r - log_r.max())
    return probs / probs.sum(), pm, 0.5 * (pc + np.swapaxes(pc, 1, 2))


def exact_posterior_draws(weights, means, covs, a, y, sigma_n, n, rng):
    """``n`` draws of ``x0 | y``."""
    probs, pm, pc = posterior_mixture(weights, means, covs, a, y, sigma_n)
    labels = rng.choice(len(probs), size=n, p=probs)
    chols = np.linalg.cholesky(pc)
    return pm[labels] + np.einsum("nij,nj->ni", chols[labels], rng.standard_normal((n, pm.shape[1])))
