import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowlps import oracle
from flowlps.errors import NumericFailure, UnsupportedOperation
from flowlps.forward import Dense, Identity, Mask, SmoothDecoder
from flowlps.prior import (GaussianMixture, conditional_x0_given_xt, fit_em, log_density,
                           marginal_at, posterior_mean_x0, posterior_x0_given_y, sample,
                           tweedie_pair, velocity)
from flowlps.rng import derive

STD1 = GaussianMixture([1.0], [[0.0]], [[[1.0]]])
SHIFTED = GaussianMixture([1.0], [[2.0]], [[[1.0]]])


def sym_mixture(var):
    return GaussianMixture([0.5, 0.5], [[-2.0], [2.0]], [[[var]], [[var]]])


def random_mixture(rng, k=3, d=3):
    covs = []
    for _ in range(k):
        b = rng.standard_normal((d, d))
        covs.append(b @ b.T / d + 0.2 * np.eye(d))
    w = rng.dirichlet(np.ones(k))
    return GaussianMixture(w / w.sum(), 2 * rng.standard_normal((k, d)), np.array(covs))


# -- construction -------------------------------------------------------------

def test_weights_must_sum_to_one():
    with pytest.raises(ValueError):
        GaussianMixture([0.5, 0.6], [[0.0], [1.0]], [[[1.0]], [[1.0]]])


def test_asymmetric_covariance_rejected():
    with pytest.raises(ValueError):
        GaussianMixture([1.0], [[0.0, 0.0]], [[[1.0, 0.1], [0.0, 1.0]]])


def test_non_spd_covariance_is_numeric_failure():
    with pytest.raises(NumericFailure):
        GaussianMixture([1.0], [[0.0, 0.0]], [[[1.0, 2.0], [2.0, 1.0]]])


def test_singular_covariance_survives_with_jitter():
    gmm = GaussianMixture([1.0], [[0.0, 0.0]], [[[1.0, 1.0], [1.0, 1.0]]])
    assert np.all(np.isfinite(gmm.chol))


def test_arrays_are_read_only():
    with pytest.raises(ValueError):
        SHIFTED.means[0, 0] = 5.0


def test_far_apart_components_do_not_underflow():
    gmm = GaussianMixture(None, [[-1e3], [1e3]], [[[1.0]], [[1.0]]], log_weights=[-2000.0, 0.0])
    assert gmm.weights[1] == 1.0
    assert np.isfinite(log_density(gmm, np.array([1e3])))


# -- log_density ---------------------------------------------------------------

def test_log_density_standard_normal_at_mode():
    assert log_density(STD1, np.array([0.0])) == pytest.approx(-0.5 * np.log(2 * np.pi), abs=1e-12)


def test_log_density_two_components():
    gmm = GaussianMixture([0.5, 0.5], [[-1.0], [1.0]], [[[1.0]], [[1.0]]])
    assert log_density(gmm, np.array([0.0])) == pytest.approx(-1.41894, abs=1e-5)


def test_log_density_single_component_matches_gaussian():
    gmm = GaussianMixture([1.0], [[1.0, -1.0]], [[[2.0, 0.3], [0.3, 1.0]]])
    x = np.array([0.2, 0.4])
    cov = gmm.covs[0]
    diff = x - gmm.means[0]
    ref = -0.5 * (diff @ np.linalg.solve(cov, diff) + np.log(np.linalg.det(2 * np.pi * cov)))
    assert log_density(gmm, x) == pytest.approx(ref, abs=1e-12)


def test_log_density_dimension_mismatch():
    with pytest.raises(ValueError):
        log_density(STD1, np.zeros(2))


# -- sample ------------------------------------------------------------------

def test_sample_mean_clt():
    gmm = GaussianMixture([1.0], [[0.0, 0.0]], [np.eye(2)])
    x = sample(gmm, derive(0, "test"), 100_000)
    assert np.all(np.abs(x.mean(0)) < 0.02)


def test_sample_deterministic():
    a = sample(SHIFTED, derive(3, "s"), 10)
    b = sample(SHIFTED, derive(3, "s"), 10)
    assert np.array_equal(a, b)


def test_sample_zero_weight_excluded():
    gmm = GaussianMixture([1.0, 0.0], [[0.0], [100.0]], [[[1.0]], [[1.0]]])
    assert np.all(sample(gmm, derive(0, "z"), 1000) < 10)


# -- marginal_at --------------------------------------------------------------

def test_marginal_endpoints():
    gmm = random_mixture(derive(0, "m"))
    m1 = marginal_at(gmm, 1.0)
    assert np.allclose(m1.means, 0.0) and np.allclose(m1.covs, np.eye(3))
    assert marginal_at(gmm, 0.0) is gmm


def test_marginal_example():
    m = marginal_at(SHIFTED, 0.5)
    assert m.means[0, 0] == pytest.approx(1.0)
    assert m.covs[0, 0, 0] == pytest.approx(0.5)


@pytest.mark.parametrize("t", [-0.1, 1.5])
def test_marginal_time_range(t):
    with pytest.raises(ValueError):
        marginal_at(SHIFTED, t)


# -- conditional_x0_given_xt ------------------------------------------------------

def test_conditional_at_marginal_mean():
    c = conditional_x0_given_xt(SHIFTED, 0.5, np.array([1.0]))
    assert c.means[0, 0] == pytest.approx(2.0)
    assert c.covs[0, 0, 0] == pytest.approx(0.5)


def test_conditional_standard_normal():
    gmm = GaussianMixture([1.0], [[0.0, 0.0]], [np.eye(2)])
    x = np.array([0.7, -1.3])
    c = conditional_x0_given_xt(gmm, 0.5, x)
    assert np.allclose(c.means[0], x) and np.allclose(c.covs[0], 0.5 * np.eye(2))


def test_conditional_symmetric_weights():
    c = conditional_x0_given_xt(sym_mixture(1.0), 0.4, np.array([0.0]))
    assert np.allclose(c.weights, [0.5, 0.5])


def test_conditional_t_zero_rejected():
    with pytest.raises(ValueError):
        conditional_x0_given_xt(SHIFTED, 0.0, np.array([1.0]))


def test_conditional_matches_information_form():
    rng = derive(1, "cond")
    gmm = random_mixture(rng)
    t = 0.35
    x = rng.standard_normal(3)
    c = conditional_x0_given_xt(gmm, t, x)
    # information form: precision Sigma^-1 + ((1-t)/t)^2 I, observation x/(1-t)
    for k in range(gmm.n_components):
        prec = np.linalg.inv(gmm.covs[k]) + ((1 - t) / t) ** 2 * np.eye(3)
        cov = np.linalg.inv(prec)
        mean = cov @ (np.linalg.solve(gmm.covs[k], gmm.means[k]) + (1 - t) / t ** 2 * x)
        assert np.allclose(c.covs[k], cov, atol=1e-10)
        assert np.allclose(c.means[k], mean, atol=1e-10)


def test_conjugacy_consistency():
    """x0 ~ p(x0 | x_t) re-embedded with fresh noise has the law of x_t."""
    rng = derive(2, "conj")
    gmm = GaussianMixture([0.3, 0.7], [[-1.0, 0.5], [1.0, 0.0]],
                          [[[0.4, 0.1], [0.1, 0.3]], [[0.2, 0.0], [0.0, 0.5]]])
    t, n = 0.6, 100_000
    x_t = sample(marginal_at(gmm, t), rng, n)
    x0 = oracle.joint_posterior_draws(gmm.weights, gmm.means, gmm.covs, np.zeros((0, 2)),
                                      np.zeros(0), 1.0, t, x_t, rng)
    x_t2 = (1 - t) * x0 + t * rng.standard_normal((n, 2))
    assert oracle.moment_distance(x_t2, marginal_at(gmm, t)).within(3.0)


# -- velocity / Tweedie ---------------------------------------------------------

def test_velocity_standard_normal_half():
    gmm = GaussianMixture([1.0], [[0.0, 0.0]], [np.eye(2)])
    assert np.allclose(velocity(gmm, 0.5, np.array([0.3, -2.0])), 0.0, atol=1e-14)


def test_velocity_example():
    assert velocity(SHIFTED, 0.5, np.array([1.0]))[0] == pytest.approx(-2.0)


def test_velocity_symmetric_zero():
    assert velocity(sym_mixture(0.25), 0.3, np.array([0.0]))[0] == pytest.approx(0.0, abs=1e-14)


def test_velocity_at_t_zero_is_finite():
    v = velocity(SHIFTED, 0.0, np.array([1.5]))
    assert np.all(np.isfinite(v))


def test_velocity_batch_matches_pointwise():
    gmm = random_mixture(derive(4, "v"))
    x = derive(5, "v").standard_normal((6, 3))
    batch = velocity(gmm, 0.4, x)
    assert np.allclose(batch, [velocity(gmm, 0.4, xi) for xi in x], atol=1e-13)


def test_tweedie_example():
    pair = tweedie_pair(SHIFTED, 0.5, np.array([1.0]))
    assert pair.x0_hat[0] == pytest.approx(2.0) and pair.x1_hat[0] == pytest.approx(0.0, abs=1e-14)


def test_tweedie_endpoints():
    x = np.array([0.7])
    assert np.array_equal(tweedie_pair(SHIFTED, 0.0, x).x0_hat, x)
    assert np.array_equal(tweedie_pair(SHIFTED, 1.0, x).x1_hat, x)


@settings(max_examples=50, deadline=None)
@given(t=st.floats(0.0, 1.0), x=st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_affine_identity(t, x):
    gmm = random_mixture(derive(6, "aff"))
    x = np.array(x)
    pair = tweedie_pair(gmm, t, x)
    recon = (1 - t) * pair.x0_hat + t * pair.x1_hat
    assert np.allclose(recon, x, rtol=1e-9, atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(t=st.floats(0.05, 1.0), x=st.floats(-4, 4))
def test_velocity_vs_quadrature_property(t, x):
    gmm = GaussianMixture([0.3, 0.7], [[-1.5], [1.0]], [[[0.2]], [[0.5]]])
    ref = oracle.quadrature_velocity(gmm, t, x)
    assert velocity(gmm, t, np.array([x]))[0] == pytest.approx(ref, abs=1e-6)


# -- posterior_x0_given_y ---------------------------------------------------------

def test_posterior_mask_example():
    gmm = GaussianMixture([1.0], [[0.0, 0.0]], [np.eye(2)])
    post = posterior_x0_given_y(gmm, Mask([0], 2), np.array([1.0]), 1.0)
    assert np.allclose(post.means[0], [0.5, 0.0])
    assert np.allclose(np.diag(post.covs[0]), [0.5, 1.0])


def test_posterior_uninformative():
    gmm = random_mixture(derive(7, "p"))
    post = posterior_x0_given_y(gmm, Identity(3), np.array([1.0, 2.0, 3.0]), 1e6)
    assert np.allclose(post.means, gmm.means, atol=1e-5)


def test_posterior_identity_fusion():
    gmm = GaussianMixture([1.0], [[0.0, 0.0]], [np.eye(2)])
    y = np.array([3.0, -1.0])
    post = posterior_x0_given_y(gmm, Identity(2), y, 1.0)
    assert np.allclose(post.means[0], y / 2) and np.allclose(post.covs[0], np.eye(2) / 2)


def test_posterior_weights_normalized_and_match_oracle():
    rng = derive(8, "p")
    gmm = random_mixture(rng)
    a = rng.standard_normal((2, 3))
    y = rng.standard_normal(2)
    post = posterior_x0_given_y(gmm, Dense(a), y, 0.3)
    assert post.weights.sum() == pytest.approx(1.0, abs=1e-12)
    w, m, c = oracle.posterior_mixture(gmm.weights, gmm.means, gmm.covs, a, y, 0.3)
    assert np.allclose(post.weights, w, atol=1e-10)
    assert np.allclose(post.means, m, atol=1e-10)
    assert np.allclose(post.covs, c, atol=1e-10)


def test_posterior_rejects_nonlinear_decoder():
    gmm = GaussianMixture([1.0], [[0.0, 0.0]], [np.eye(2)])
    dec = SmoothDecoder.random(2, 0.5, derive(0, "d"))
    with pytest.raises(UnsupportedOperation):
        posterior_x0_given_y(gmm, Identity(2), np.zeros(2), 1.0, decoder=dec)


def test_posterior_mean_x0_requires_positive_t():
    with pytest.raises(ValueError):
        posterior_mean_x0(SHIFTED, 0.0, np.array([1.0]))


# -- fit_em --------------------------------------------------------------------

def test_fit_em_single_gaussian_mean():
    data = 2.0 + derive(0, "em").standard_normal((10_000, 1))
    gmm = fit_em(data, 1)
    assert abs(gmm.means[0, 0] - 2.0) < 0.05


def test_fit_em_k1_is_sample_moments():
    data = derive(1, "em").standard_normal((500, 2)) @ np.array([[1.0, 0.3], [0.0, 0.5]])
    gmm = fit_em(data, 1, max_iter=1)
    assert np.allclose(gmm.means[0], data.mean(0))
    assert np.allclose(gmm.covs[0], np.cov(data.T, bias=True))


def test_fit_em_duplicate_dataset():
    data = derive(2, "em").standard_normal((400, 2))
    a = fit_em(data, 1)
    b = fit_em(np.vstack([data, data]), 1)
    assert np.allclose(a.means, b.means) and np.allclose(a.covs, b.covs)


def test_fit_em_recovers_separated_components():
    truth = GaussianMixture([0.4, 0.6], [[-4.0, 0.0], [4.0, 1.0]], [np.eye(2) * 0.5, np.eye(2)])
    gmm = fit_em(sample(truth, derive(3, "em"), 5000), 2, rng=derive(3, "init"))
    order = np.argsort(gmm.means[:, 0])
    assert np.allclose(gmm.means[order], truth.means, atol=0.1)
    assert np.allclose(gmm.weights[order], truth.weights, atol=0.03)


def test_fit_em_too_few_points():
    with pytest.raises(ValueError):
        fit_em(np.zeros((5, 3)), 2)


def test_fit_em_covariance_floor():
    data = np.repeat(derive(4, "em").standard_normal((1, 2)), 50, axis=0)
    data[:, 1] += derive(5, "em").standard_normal(50)
    gmm = fit_em(data, 1, cov_floor=1e-6)
    assert np.linalg.eigvalsh(gmm.covs[0]).min() >= 1e-6 * (1 - 1e-9)
