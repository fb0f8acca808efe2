"""Closed-form rectified flow over Gaussian-mixture data.

With data ``x0 ~ q`` (a Gaussian mixture) and noise ``x1 ~ N(0, I)``
coupled independently, the interpolant ``x_t = t*x1 + (1-t)*x0`` has a
Gaussian-mixture marginal, and ``x0 | x_t`` is again a Gaussian mixture.
Everything the sampler needs from a "flow model" (velocity, Tweedie pair)
follows exactly from those two facts, so no network is trained.

All functions accept a single point of shape ``(d,)`` or a batch ``(n, d)``
where noted.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .errors import FitFailure, NumericFailure, UnsupportedOperation

_JITTERS = (0.0, 1e-12, 1e-9, 1e-6)
_LOG_2PI = np.log(2.0 * np.pi)

#: time used in place of t=0 when the velocity is queried there
T_EPS = 1e-6


def cholesky(mat):
    """Cholesky factor with escalating diagonal jitter.

    Raises :class:`NumericFailure` once the largest jitter also fails.
    """
    mat = np.asarray(mat, dtype=np.float64)
    eye = np.eye(mat.shape[-1])
    for jitter in _JITTERS:
        try:
            return np.linalg.cholesky(mat + jitter * eye)
        except np.linalg.LinAlgError:
            continue
    raise NumericFailure("matrix is not positive definite even with 1e-6 jitter")


def _batched_cholesky(mats):
    try:
        return np.linalg.cholesky(mats)
    except np.linalg.LinAlgError:
        return np.stack([cholesky(m) for m in mats])


def _symmetrize(mats):
    return 0.5 * (mats + np.swapaxes(mats, -1, -2))


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """Mixture ``sum_k w_k N(mu_k, Sigma_k)`` over R^d.

    Arrays are copied and frozen on construction. ``log_weights`` is kept
    alongside ``weights`` so far-apart components never underflow.
    """

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    log_weights: np.ndarray = field(default=None, repr=False)
    chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        means = np.array(self.means, dtype=np.float64, ndmin=2)
        k, d = means.shape
        covs = np.array(self.covs, dtype=np.float64)
        if covs.shape != (k, d, d):
            raise ValueError(f"covs must have shape {(k, d, d)}, got {covs.shape}")
        if self.log_weights is not None:
            log_w = np.array(self.log_weights, dtype=np.float64).reshape(k)
            log_w = log_w - logsumexp(log_w)
            weights = np.exp(log_w)
        else:
            weights = np.array(self.weights, dtype=np.float64).reshape(-1)
            if weights.shape != (k,):
                raise ValueError("need one weight per component")
            if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
                raise ValueError("weights must be nonnegative and sum to 1")
            with np.errstate(divide="ignore"):
                log_w = np.log(weights)
        asym = np.abs(covs - np.swapaxes(covs, 1, 2)).max(initial=0.0)
        if asym > 1e-12 * max(1.0, np.abs(covs).max(initial=0.0)):
            raise ValueError(f"covariances not symmetric (max asymmetry {asym:.3g})")
        chol = _batched_cholesky(covs)
        for name, arr in (("weights", weights), ("means", means), ("covs", covs),
                          ("log_weights", log_w), ("chol", chol)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_components(cls, components):
        """Build from an iterable of ``(weight, mean, cov)`` triples."""
        w, mu, cov = zip(*components)
        return cls(np.array(w, float), np.array(mu, float), np.array(cov, float))

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def n_components(self):
        return self.means.shape[0]

    @property
    def components(self):
        return list(zip(self.weights, self.means, self.covs))

    def mean(self):
        return self.weights @ self.means

    def cov(self):
        m = self.mean()
        second = np.einsum("k,kij->ij", self.weights, self.covs)
        second += np.einsum("k,ki,kj->ij", self.weights, self.means, self.means)
        return second - np.outer(m, m)


@dataclass(frozen=True)
class TweediePair:
    """Clean and noise estimates at time ``t``; ``(1-t)*x0_hat + t*x1_hat = x_t``."""

    x0_hat: np.ndarray
    x1_hat: np.ndarray
    t: float


def _as_batch(gmm, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    if xb.ndim != 2 or xb.shape[1] != gmm.dim:
        raise ValueError(f"expected points of dimension {gmm.dim}, got shape {x.shape}")
    return xb, single


def _gauss_logpdf(x, means, chol):
    """log N(x_i; means_k, L_k L_k^T) for all i, k -> (n, K)."""
    n, d = x.shape
    out = np.empty((n, means.shape[0]))
    for k in range(means.shape[0]):
        sol = solve_triangular(chol[k], (x - means[k]).T, lower=True)
        logdet = 2.0 * np.log(np.diag(chol[k])).sum()
        out[:, k] = -0.5 * (np.einsum("ij,ij->j", sol, sol) + logdet + d * _LOG_2PI)
    return out


def component_log_densities(gmm, x):
    """Per-component ``log w_k + log N(x; mu_k, Sigma_k)``, shape ``(n, K)``."""
    xb, _ = _as_batch(gmm, x)
    return gmm.log_weights + _gauss_logpdf(xb, gmm.means, gmm.chol)


def log_density(gmm, x):
    """Log density in nats at a point or a batch of points."""
    xb, single = _as_batch(gmm, x)
    out = logsumexp(component_log_densities(gmm, xb), axis=1)
    return float(out[0]) if single else out


def sample(gmm, rng, n):
    """Draw ``n`` i.i.d. points, shape ``(n, d)``."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    labels = rng.choice(gmm.n_components, size=n, p=gmm.weights)
    eps = rng.standard_normal((n, gmm.dim))
    return gmm.means[labels] + np.einsum("nij,nj->ni", gmm.chol[labels], eps)


def _check_time(t, lo_open=False):
    t = float(t)
    if not 0.0 <= t <= 1.0 or (lo_open and t == 0.0):
        raise ValueError(f"time must lie in {'(0' if lo_open else '[0'}, 1], got {t}")
    return t


def marginal_at(gmm, t):
    """Law of ``x_t``: component k -> N((1-t) mu_k, (1-t)^2 Sigma_k + t^2 I)."""
    t = _check_time(t)
    if t == 0.0:
        return gmm
    s = 1.0 - t
    covs = s * s * gmm.covs + t * t * np.eye(gmm.dim)
    return GaussianMixture(None, s * gmm.means, covs, log_weights=gmm.log_weights)


def _conditional_parts(gmm, t):
    s = 1.0 - t
    eye = np.eye(gmm.dim)
    marg_cov = s * s * gmm.covs + t * t * eye
    marg_chol = _batched_cholesky(marg_cov)
    # gain_k = s * Sigma_k C_k^{-1}
    gain = np.empty_like(gmm.covs)
    for k in range(gmm.n_components):
        half = solve_triangular(marg_chol[k], gmm.covs[k], lower=True)
        cinv_sigma = solve_triangular(marg_chol[k].T, half, lower=False)
        gain[k] = s * cinv_sigma.T
    cond_cov = _symmetrize(gmm.covs - s * gain @ gmm.covs)
    return s * gmm.means, marg_chol, gain, cond_cov


def _conditional_batch(gmm, t, xb):
    marg_means, marg_chol, gain, cond_cov = _conditional_parts(gmm, t)
    log_r = gmm.log_weights + _gauss_logpdf(xb, marg_means, marg_chol)
    log_r -= logsumexp(log_r, axis=1, keepdims=True)
    # cond_mean_nk = mu_k + gain_k (x_n - (1-t) mu_k)
    resid = xb[:, None, :] - marg_means[None]
    cond_means = gmm.means[None] + np.einsum("kij,nkj->nki", gain, resid)
    return log_r, cond_means, cond_cov


def conditional_x0_given_xt(gmm, t, x_t):
    """Exact law of ``x0`` given one observed ``x_t``, as a mixture."""
    t = _check_time(t, lo_open=True)
    xb, single = _as_batch(gmm, x_t)
    if not single:
        raise ValueError("conditional_x0_given_xt takes a single point")
    log_r, cond_means, cond_cov = _conditional_batch(gmm, t, xb)
    return GaussianMixture(None, cond_means[0], cond_cov, log_weights=log_r[0])


def posterior_mean_x0(gmm, t, x_t):
    """``E[x0 | x_t]`` for a point or batch (``t`` > 0)."""
    t = _check_time(t, lo_open=True)
    xb, single = _as_batch(gmm, x_t)
    log_r, cond_means, _ = _conditional_batch(gmm, t, xb)
    m0 = np.einsum("nk,nki->ni", np.exp(log_r), cond_means)
    return m0[0] if single else m0


def velocity(gmm, t, x_t):
    """Marginal velocity ``E[x1 | x_t] - E[x0 | x_t] = (x_t - E[x0 | x_t]) / t``.

    At ``t == 0`` the conditional degenerates; the one-sided value at
    ``T_EPS`` is returned instead.
    """
    t = _check_time(t)
    t_eval = max(t, T_EPS)
    x = np.asarray(x_t, dtype=np.float64)
    return (x - posterior_mean_x0(gmm, t_eval, x)) / t_eval


def tweedie_from_velocity(x_t, v, t):
    return TweediePair(x0_hat=x_t - t * v, x1_hat=x_t + (1.0 - t) * v, t=float(t))


def tweedie_pair(gmm, t, x_t):
    """Clean/noise estimates ``x_t - t v`` and ``x_t + (1-t) v``."""
    x = np.asarray(x_t, dtype=np.float64)
    return tweedie_from_velocity(x, velocity(gmm, t, x), _check_time(t))


def posterior_x0_given_y(gmm, op, y, sigma_n, decoder=None):
    """Exact ``p(x0 | y)`` for ``y = A x0 + sigma_n * eps`` with linear ``A``.

    Component k becomes ``N(m_k, S_k)`` with ``S_k = (Sigma_k^-1 + A^T A / sigma_n^2)^-1``,
    reweighted by its evidence ``N(y; A mu_k, A Sigma_k A^T + sigma_n^2 I)``.
    The Woodbury form is used so singular ``Sigma_k`` is fine.
    """
    if decoder is not None and not getattr(decoder, "is_identity", False):
        raise UnsupportedOperation("exact posterior requires the identity decoder")
    if not sigma_n > 0:
        raise ValueError("sigma_n must be positive")
    a = op.materialize()
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if a.shape != (y.shape[0], gmm.dim):
        raise ValueError("operator, measurement and prior dimensions disagree")
    k_count = gmm.n_components
    means = np.empty_like(gmm.means)
    covs = np.empty_like(gmm.covs)
    log_w = np.empty(k_count)
    eye_m = np.eye(a.shape[0])
    for k in range(k_count):
        sig_at = gmm.covs[k] @ a.T
        evid_cov = a @ sig_at + sigma_n ** 2 * eye_m
        lc = cholesky(_symmetrize(evid_cov))
        resid = y - a @ gmm.means[k]
        # gain = Sigma A^T (A Sigma A^T + s^2 I)^-1
        gain = solve_triangular(lc.T, solve_triangular(lc, sig_at.T, lower=True),
                                lower=False).T
        means[k] = gmm.means[k] + gain @ resid
        covs[k] = gmm.covs[k] - gain @ sig_at.T
        log_w[k] = gmm.log_weights[k] + _gauss_logpdf(resid[None], np.zeros((1, len(y))),
                                                      lc[None])[0, 0]
    return GaussianMixture(None, means, _symmetrize(covs), log_weights=log_w)


# ---------------------------------------------------------------------------
# EM
# ---------------------------------------------------------------------------

def _floor_cov(cov, floor):
    vals, vecs = np.linalg.eigh(_symmetrize(cov))
    if vals.min() >= floor:
        return _symmetrize(cov)
    return _symmetrize((vecs * np.maximum(vals, floor)) @ vecs.T)


def _kmeans_pp(data, k, rng):
    n = data.shape[0]
    centers = [data[rng.integers(n)]]
    d2 = ((data - centers[0]) ** 2).sum(1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.integers(n) if total <= 0 else rng.choice(n, p=d2 / total)
        centers.append(data[idx])
        d2 = np.minimum(d2, ((data - data[idx]) ** 2).sum(1))
    return np.array(centers)


def fit_em(data, k, rng=None, max_iter=100, tol=1e-8, cov_floor=1e-6, max_restarts=3):
    """Maximum-likelihood mixture fit by EM with k-means++ initialisation.

    Stops after ``max_iter`` iterations or when the relative change of the
    mean log-likelihood drops below ``tol``. Covariance eigenvalues are
    floored at ``cov_floor``. A component that loses all responsibility is
    re-seeded on a random data point; more than ``max_restarts`` re-seeds
    raises :class:`FitFailure`.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise ValueError("data must be an (n, d) array")
    n, d = data.shape
    if k < 1 or n < k * (d + 1):
        raise ValueError(f"need at least k*(d+1) = {k * (d + 1)} points, got {n}")
    if rng is None:
        rng = np.random.default_rng(0)

    centers = _kmeans_pp(data, k, rng)
    labels = ((data[:, None, :] - centers[None]) ** 2).sum(-1).argmin(1)
    resp = np.eye(k)[labels]

    restarts = 0
    prev_ll = None
    gmm = None
    for _ in range(max_iter):
        nk = resp.sum(0)
        empty = nk < 1e-10 * n
        if empty.any():
            restarts += int(empty.sum())
            if restarts > max_restarts:
                raise FitFailure(f"empty component after {max_restarts} restarts")
            for j in np.flatnonzero(empty):
                far = data[rng.integers(n)]
                resp[:, j] = 0.0
                nearest = ((data - far) ** 2).sum(1) <= np.partition(
                    ((data - far) ** 2).sum(1), d)[d]
                resp[nearest] = 0.0
                resp[nearest, j] = 1.0
            nk = resp.sum(0)
        weights = nk / n
        means = (resp.T @ data) / nk[:, None]
        covs = np.empty((k, d, d))
        for j in range(k):
            diff = data - means[j]
            covs[j] = _floor_cov((resp[:, j, None] * diff).T @ diff / nk[j], cov_floor)
        gmm = GaussianMixture(weights / weights.sum(), means, covs)

        log_p = component_log_densities(gmm, data)
        norm = logsumexp(log_p, axis=1, keepdims=True)
        ll = float(norm.mean())
        resp = np.exp(log_p - norm)
        if prev_ll is not None and abs(ll - prev_ll) <= tol * abs(prev_ll):
            break
        prev_ll = ll
    if gmm is None:
        raise FitFailure("EM ran zero iterations")
    return gmm
