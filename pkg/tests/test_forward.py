import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowlps import oracle
from flowlps.forward import (CircularBlur, Dense, Downsample, Identity, IdentityDecoder, Mask,
                             Measurement, SmoothDecoder, data_fidelity_grad, simulate_measurement)
from flowlps.rng import derive


def all_operators(rng):
    return [
        Identity(12),
        Mask.random(12, 0.4, rng),
        CircularBlur.gaussian((12,), 1.5, 5),
        CircularBlur.gaussian((4, 6), 1.0, 3),
        CircularBlur(rng.standard_normal((3, 5)), (6, 8)),
        Downsample(3, (12,)),
        Downsample(2, (4, 6)),
        Dense(rng.standard_normal((5, 12))),
    ]


def test_identity_examples():
    op = Identity(3)
    x = np.array([1.0, 2.0, 3.0])
    assert np.array_equal(op.apply(x), x) and np.array_equal(op.adjoint(x), x)


def test_mask_examples():
    op = Mask([0], 2)
    assert np.array_equal(op.apply(np.array([3.0, 7.0])), [3.0])
    assert np.array_equal(op.adjoint(np.array([3.0])), [3.0, 0.0])


def test_mask_empty_rejected():
    with pytest.raises(ValueError):
        Mask([], 4)


def test_downsample_examples():
    op = Downsample(2, (4,))
    assert np.allclose(op.apply(np.array([1.0, 3.0, 5.0, 7.0])), [2.0, 6.0])
    assert np.allclose(op.adjoint(np.array([2.0, 6.0])), [1.0, 1.0, 3.0, 3.0])


def test_downsample_2d_block_means():
    x = np.arange(16.0)
    got = Downsample(2, (4, 4)).apply(x)
    assert np.allclose(got, [2.5, 4.5, 10.5, 12.5])


def test_downsample_not_divisible():
    with pytest.raises(ValueError):
        Downsample(3, (4, 4))


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        Identity(3).apply(np.zeros(4))
    with pytest.raises(ValueError):
        Mask([0], 2).adjoint(np.zeros(2))


def test_adjoint_identity_all_kinds():
    rng = derive(0, "adj")
    for op in all_operators(rng):
        for _ in range(100):
            u = rng.standard_normal(op.in_dim)
            v = rng.standard_normal(op.out_dim)
            lhs, rhs = op.apply(u) @ v, u @ op.adjoint(v)
            assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(lhs)), op.kind


def test_materialize_matches_apply():
    rng = derive(1, "mat")
    for op in all_operators(rng):
        a = op.materialize()
        x = rng.standard_normal(op.in_dim)
        assert np.allclose(a @ x, op.apply(x), atol=1e-12), op.kind
        assert np.allclose(op.gram(), a.T @ a)


def test_blur_mass_preserving():
    rng = derive(2, "blur")
    for op in (CircularBlur.gaussian((16,), 2.0, 7), CircularBlur.gaussian((5, 7), 1.2, 5)):
        x = rng.random(op.in_dim)
        assert op.apply(x).sum() == pytest.approx(x.sum(), rel=1e-9)


def test_blur_matches_direct_circular_convolution():
    rng = derive(3, "blur")
    ker = rng.standard_normal((3, 3))
    img = rng.standard_normal((5, 6))
    got = CircularBlur(ker, (5, 6)).apply(img.ravel()).reshape(5, 6)
    ref = np.zeros_like(img)
    for di in range(-1, 2):
        for dj in range(-1, 2):
            ref += ker[di + 1, dj + 1] * np.roll(np.roll(img, di, 0), dj, 1)
    assert np.allclose(got, ref)


def test_blur_kernel_validation():
    with pytest.raises(ValueError):
        CircularBlur.gaussian((8,), 1.0, 4)
    with pytest.raises(ValueError):
        CircularBlur(np.ones((3, 3)), (9,))


# -- decoders -----------------------------------------------------------------

def test_identity_decoder():
    dec = IdentityDecoder()
    z, u = np.array([1.0, 2.0]), np.array([3.0, 4.0])
    assert np.array_equal(dec.decode(z), z) and np.array_equal(dec.vjp(z, u), u)


def test_smooth_decoder_zero_gain_is_identity():
    dec = SmoothDecoder.random(4, 0.0, derive(0, "dec"))
    z = derive(1, "dec").standard_normal(4)
    assert dec.is_identity
    assert np.array_equal(dec.decode(z), z)
    assert np.array_equal(dec.vjp(z, z), z)


@pytest.mark.parametrize("gain", [0.1, 0.8])
def test_smooth_decoder_vjp_jvp_finite_differences(gain):
    rng = derive(2, "dec")
    dec = SmoothDecoder.random(5, gain, rng)
    for _ in range(10):
        z, u = rng.standard_normal(5), rng.standard_normal(5)
        fd = oracle.finite_difference_gradient(lambda v: dec.decode(v) @ u, z, h=1e-5)
        assert np.allclose(dec.vjp(z, u), fd, rtol=1e-5, atol=1e-8)
        h = 1e-5
        jvp_fd = (dec.decode(z + h * u) - dec.decode(z - h * u)) / (2 * h)
        assert np.allclose(dec.jvp(z, u), jvp_fd, rtol=1e-5, atol=1e-8)


# -- measurements ---------------------------------------------------------------

def test_noiseless_measurement_exact():
    op = Mask([1, 3], 4)
    dec = SmoothDecoder.random(4, 0.3, derive(0, "m"))
    x = np.array([0.1, 0.2, 0.3, 0.4])
    meas = simulate_measurement(x, op, dec, 0.0, derive(0, "noise"))
    assert np.array_equal(meas.y, op.apply(dec.decode(x)))


def test_noise_level():
    op = Identity(1000)
    x = np.zeros(1000)
    resid = []
    for i in range(100):
        meas = simulate_measurement(x, op, IdentityDecoder(), 0.03, derive(i, "noise"))
        resid.append(meas.y @ meas.y / 1000)
    assert np.mean(resid) == pytest.approx(9e-4, rel=0.1)


def test_measurement_deterministic():
    x = np.ones(6)
    a = simulate_measurement(x, Identity(6), IdentityDecoder(), 0.1, derive(5, "n"))
    b = simulate_measurement(x, Identity(6), IdentityDecoder(), 0.1, derive(5, "n"))
    assert np.array_equal(a.y, b.y)


def test_measurement_validation():
    with pytest.raises(ValueError):
        Measurement(np.zeros(3), Identity(2), IdentityDecoder(), 0.1)
    with pytest.raises(ValueError):
        Measurement(np.zeros(2), Identity(2), IdentityDecoder(3), 0.1)
    with pytest.raises(ValueError):
        Measurement(np.zeros(2), Identity(2), IdentityDecoder(), -1.0)


def test_grad_zero_at_consistent_point():
    rng = derive(0, "g")
    op = Dense(rng.standard_normal((3, 5)))
    dec = SmoothDecoder.random(5, 0.4, rng)
    z = rng.standard_normal(5)
    meas = Measurement(op.apply(dec.decode(z)), op, dec, 0.1)
    assert np.allclose(data_fidelity_grad(meas, z), 0.0, atol=1e-14)


def test_grad_identity_example():
    z = np.array([1.0, -2.0, 0.5])
    meas = Measurement(np.zeros(3), Identity(3), IdentityDecoder(), 0.1)
    assert np.allclose(data_fidelity_grad(meas, z), 2 * z)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), op_index=st.integers(0, 7), gain=st.sampled_from([0.0, 0.2, 0.7]))
def test_grad_matches_finite_differences(seed, op_index, gain):
    rng = derive(seed, "fd")
    op = all_operators(rng)[op_index]
    dec = SmoothDecoder.random(op.in_dim, gain, rng) if gain else IdentityDecoder()
    meas = Measurement(rng.standard_normal(op.out_dim), op, dec, 0.1)
    z = rng.standard_normal(op.in_dim)
    fd = oracle.finite_difference_gradient(meas.residual_sq, z, h=1e-5)
    g = data_fidelity_grad(meas, z)
    assert np.linalg.norm(g - fd) <= 1e-5 * max(1.0, np.linalg.norm(fd))
