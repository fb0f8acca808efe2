import numpy as np
import pytest

from flowlps import oracle
from flowlps.errors import NumericFailure
from flowlps.prior import GaussianMixture, sample
from flowlps.rng import derive

SHIFTED = GaussianMixture([1.0], [[2.0]], [[[1.0]]])
SYM = GaussianMixture([0.5, 0.5], [[-2.0], [2.0]], [[[0.25]], [[0.25]]])


# -- grid densities / quadrature ----------------------------------------------------

@pytest.mark.parametrize("gmm", [
    SHIFTED, SYM,
    GaussianMixture([0.3, 0.7], [[0.0, 1.0], [2.0, -1.0]], [np.eye(2) * 0.5, [[1.0, 0.3], [0.3, 0.4]]]),
])
def test_grid_density_normalises(gmm):
    g = oracle.prior_grid_density(gmm)
    assert np.exp(g.log_values).sum() * g.cell_volume == pytest.approx(1.0, abs=1e-3)
    assert g.normalized().sum() * g.cell_volume == pytest.approx(1.0, abs=1e-12)


def test_grid_density_rejects_3d():
    with pytest.raises(ValueError):
        oracle.prior_grid_density(GaussianMixture([1.0], [np.zeros(3)], [np.eye(3)]))


def test_quadrature_symmetric_zero():
    assert abs(oracle.quadrature_velocity(SYM, 0.3, 0.0)) <= 1e-8


def test_quadrature_conjugate_example():
    assert oracle.quadrature_velocity(SHIFTED, 0.5, 1.0) == pytest.approx(-2.0, abs=1e-6)


def test_quadrature_guards():
    with pytest.raises(ValueError):
        oracle.quadrature_velocity(SHIFTED, 0.0, 1.0)
    with pytest.raises(ValueError):
        oracle.quadrature_velocity(SHIFTED, 0.5, 1.0, grid=np.linspace(-5, 5, 100))
    with pytest.raises(ValueError):
        oracle.quadrature_velocity(SHIFTED, 0.5, 1.0, grid=np.linspace(0, 4, 8000))
    with pytest.raises(ValueError):
        oracle.quadrature_velocity(GaussianMixture([1.0], [[0.0, 0.0]], [np.eye(2)]), 0.5, 0.0)


# -- ridge -------------------------------------------------------------------------

def test_ridge_scalar():
    assert oracle.ridge_closed_form([[1.0]], [1.0], 1.0, [0.0])[0] == pytest.approx(0.5)


def test_ridge_large_lambda():
    anchor = np.array([0.3, -0.4])
    z = oracle.ridge_closed_form(np.eye(2), [5.0, 5.0], 1e9, anchor)
    assert np.linalg.norm(z - anchor) <= 1e-6 * np.linalg.norm(anchor)


def test_ridge_normal_equation_residual():
    rng = derive(0, "ridge")
    a = rng.standard_normal((8, 16))
    y, anchor = rng.standard_normal(8), rng.standard_normal(16)
    z = oracle.ridge_closed_form(a, y, 0.01, anchor)
    resid = (a.T @ a + 0.01 * np.eye(16)) @ z - (a.T @ y + 0.01 * anchor)
    assert np.abs(resid).max() <= 1e-10


def test_ridge_requires_positive_lambda():
    with pytest.raises(ValueError):
        oracle.ridge_closed_form(np.eye(2), [1.0, 1.0], 0.0, [0.0, 0.0])


def test_ridge_nan_is_numeric_failure():
    with pytest.raises(NumericFailure):
        oracle.ridge_closed_form(np.array([[np.nan]]), [1.0], 1.0, [0.0])


# -- ULA Lyapunov ------------------------------------------------------------------

def test_ula_scalar():
    s = oracle.ula_stationary_covariance([[1.0]], 0.1)
    assert s[0, 0] == pytest.approx(1 / (1 - 0.05), abs=1e-12)


def test_ula_small_step_limit():
    p = np.array([[2.0, 0.5], [0.5, 1.0]])
    s = oracle.ula_stationary_covariance(p, 1e-6)
    assert np.linalg.norm(s - np.linalg.inv(p)) <= 1e-5 * np.linalg.norm(np.linalg.inv(p))


def test_ula_diagonal_decouples():
    zeta = 0.05
    s = oracle.ula_stationary_covariance(np.diag([1.0, 4.0]), zeta)
    want = [1 / (lam * (1 - zeta * lam / 2)) for lam in (1.0, 4.0)]
    assert np.allclose(np.diag(s), want, rtol=1e-12)
    assert abs(s[0, 1]) <= 1e-15


def test_ula_fixed_point():
    p = np.array([[3.0, 1.0], [1.0, 2.0]])
    zeta = 0.2
    s = oracle.ula_stationary_covariance(p, zeta)
    m = np.eye(2) - zeta * p
    assert np.allclose(s, m @ s @ m + 2 * zeta * np.eye(2), atol=1e-12)


def test_ula_unstable_step():
    with pytest.raises(ValueError):
        oracle.ula_stationary_covariance([[4.0]], 0.6)


# -- finite differences ----------------------------------------------------------------

def test_fd_quadratic():
    g = oracle.finite_difference_gradient(lambda x: x @ x, np.array([1.0, 2.0]), 1e-5)
    assert np.allclose(g, [2.0, 4.0], atol=1e-6)


def test_fd_linear():
    c = np.array([0.3, -1.7, 2.2])
    g = oracle.finite_difference_gradient(lambda x: c @ x, np.array([5.0, 1.0, -3.0]))
    assert np.allclose(g, c, atol=1e-9)


def test_fd_requires_positive_h():
    with pytest.raises(ValueError):
        oracle.finite_difference_gradient(lambda x: 0.0, np.zeros(2), 0.0)


# -- moments -------------------------------------------------------------------------

def test_moments_self_consistent():
    gmm = GaussianMixture([0.4, 0.6], [[0.0, 1.0], [2.0, -1.0]], [np.eye(2) * 0.5, [[1.0, 0.3], [0.3, 0.4]]])
    x = sample(gmm, derive(0, "mom"), 100_000)
    assert oracle.moment_distance(x, gmm).within(3.0)


def test_moments_constant_samples():
    gmm = GaussianMixture([1.0], [[0.0, 0.0]], [[[2.0, 0.5], [0.5, 1.0]]])
    rep = oracle.moment_distance(np.zeros((1000, 2)), gmm)
    assert rep.cov_error == pytest.approx(2.0)
    assert not rep.within(3.0)


def test_moments_affine_transform():
    rng = derive(1, "mom")
    gmm = GaussianMixture([0.5, 0.5], [[1.0, 0.0], [-1.0, 0.5]], [np.eye(2) * 0.3, np.eye(2) * 0.6])
    m = np.array([[1.0, 0.5], [-0.2, 2.0]])
    b = np.array([0.3, -1.0])
    x = sample(gmm, rng, 100_000) @ m.T + b
    target = GaussianMixture(gmm.weights, gmm.means @ m.T + b, m @ gmm.covs @ m.T)
    assert oracle.moment_distance(x, target).within(3.0)


def test_moments_need_enough_samples():
    with pytest.raises(ValueError):
        oracle.moment_distance(np.zeros((10, 1)), SHIFTED)


def test_mixture_moments_match_gmm_methods():
    gmm = GaussianMixture([0.2, 0.8], [[1.0, 2.0], [0.0, -1.0]], [np.eye(2), np.eye(2) * 2])
    mean, cov = oracle.mixture_moments(gmm.weights, gmm.means, gmm.covs)
    assert np.allclose(mean, gmm.mean()) and np.allclose(cov, gmm.cov())


# -- pCN ratio / posterior draws ---------------------------------------------------------

def test_pcn_ratio_is_one_for_any_pair():
    rng = derive(4, "mh")
    old, new = rng.standard_normal(3), 5 * rng.standard_normal(3)
    assert abs(oracle.pcn_log_acceptance_ratio(old, new, 0.5)) <= 1e-12


def test_pcn_ratio_detects_mis_scaled_proposal():
    old, new = np.array([0.5, -1.0]), np.array([1.5, 0.2])
    assert abs(oracle.pcn_log_acceptance_ratio(old, new, 0.5, noise_scale=1.0)) > 1e-3


def test_pcn_ratio_rho_range():
    with pytest.raises(ValueError):
        oracle.pcn_log_acceptance_ratio(np.zeros(2), np.zeros(2), 1.0)


def test_exact_posterior_draws_moments():
    gmm = GaussianMixture([0.4, 0.6], [[-1.0, 0.5], [1.2, -0.3]],
                          [[[0.5, 0.2], [0.2, 0.4]], [[0.3, -0.1], [-0.1, 0.6]]])
    a = np.array([[1.0, 0.0]])
    y = np.array([0.3])
    w, m, c = oracle.posterior_mixture(gmm.weights, gmm.means, gmm.covs, a, y, 0.1)
    x = oracle.exact_posterior_draws(gmm.weights, gmm.means, gmm.covs, a, y, 0.1, 100_000, derive(2, "p"))
    assert oracle.moment_distance(x, GaussianMixture(w, m, c)).within(3.0)


def test_joint_posterior_without_measurement_is_prior_conditional():
    gmm = GaussianMixture([1.0], [[0.0, 0.0]], [np.eye(2)])
    x_t = np.array([[0.8, -0.4]])
    draws = oracle.joint_posterior_draws(gmm.weights, gmm.means, gmm.covs, np.zeros((0, 2)), np.zeros(0),
                                         1.0, 0.5, np.repeat(x_t, 100_000, 0), derive(3, "p"))
    # conditional of standard normal data at t = 0.5 is N(x_t, 0.5 I)
    assert oracle.moment_distance(draws, GaussianMixture([1.0], x_t, [0.5 * np.eye(2)])).within(3.0)
