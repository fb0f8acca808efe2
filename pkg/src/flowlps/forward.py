"""Measurement models ``y = A(D(z)) + sigma_n * eps``.

Operators are linear maps on flat vectors; image-like operators carry the
signal shape (``(n,)`` or ``(h, w)``) they act on. ``D`` is either the
identity or a smooth residual-tanh map standing in for a VAE decoder, which
makes ``A o D`` nonlinear in the latent.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels


class ForwardOperator:
    """Base class: subclasses implement ``_apply`` / ``_adjoint`` on flat vectors."""

    kind = "abstract"
    in_dim: int
    out_dim: int

    def apply(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.in_dim,):
            raise ValueError(f"{self.kind}: expected input of length {self.in_dim}, got {x.shape}")
        return self._apply(x)

    def adjoint(self, u):
        u = np.asarray(u, dtype=np.float64)
        if u.shape != (self.out_dim,):
            raise ValueError(f"{self.kind}: expected input of length {self.out_dim}, got {u.shape}")
        return self._adjoint(u)

    __call__ = apply

    def materialize(self):
        """Dense ``(out_dim, in_dim)`` matrix, built column by column."""
        eye = np.eye(self.in_dim)
        return np.stack([self._apply(eye[j]) for j in range(self.in_dim)], axis=1)

    def gram(self):
        a = self.materialize()
        return a.T @ a


class Identity(ForwardOperator):
    kind = "identity"

    def __init__(self, dim):
        self.in_dim = self.out_dim = int(dim)

    def _apply(self, x):
        return x.copy()

    def _adjoint(self, u):
        return u.copy()

    def materialize(self):
        return np.eye(self.in_dim)


class Mask(ForwardOperator):
    """Keep the coordinates in ``keep`` (sorted, unique)."""

    kind = "mask"

    def __init__(self, keep, dim):
        keep = np.unique(np.asarray(keep, dtype=np.int64))
        if keep.size == 0:
            raise ValueError("mask keeps no coordinates: the measurement would be empty")
        if keep[0] < 0 or keep[-1] >= dim:
            raise ValueError("mask index out of range")
        self.keep = keep
        self.keep.setflags(write=False)
        self.in_dim = int(dim)
        self.out_dim = int(keep.size)

    @classmethod
    def random(cls, dim, keep_fraction, rng):
        n_keep = int(round(keep_fraction * dim))
        return cls(rng.choice(dim, size=max(n_keep, 1), replace=False), dim)

    def _apply(self, x):
        return x[self.keep]

    def _adjoint(self, u):
        out = np.zeros(self.in_dim)
        out[self.keep] = u
        return out


def _as_shape(shape):
    shape = tuple(int(s) for s in np.atleast_1d(shape))
    if len(shape) not in (1, 2) or min(shape) < 1:
        raise ValueError(f"signal shape must be (n,) or (h, w), got {shape}")
    return shape


class CircularBlur(ForwardOperator):
    """Convolution with a centred kernel and wrap-around boundary."""

    kind = "circular-blur"

    def __init__(self, kernel, shape):
        self.shape = _as_shape(shape)
        kernel = np.asarray(kernel, dtype=np.float64)
        if kernel.ndim != len(self.shape):
            raise ValueError("kernel and signal must have the same number of axes")
        self.kernel = kernel.copy()
        self.kernel.setflags(write=False)
        self._kernel2d = self.kernel.reshape(1, -1) if kernel.ndim == 1 else self.kernel
        self.in_dim = self.out_dim = int(np.prod(self.shape))

    @classmethod
    def gaussian(cls, shape, sigma, size):
        """Normalised Gaussian kernel of odd ``size`` along each axis."""
        shape = _as_shape(shape)
        if size % 2 == 0 or size < 1:
            raise ValueError("kernel size must be a positive odd integer")
        r = np.arange(size) - size // 2
        g = np.exp(-0.5 * (r / sigma) ** 2)
        k = g if len(shape) == 1 else np.outer(g, g)
        return cls(k / k.sum(), shape)

    def _grid(self, v):
        return v.reshape(1, -1) if len(self.shape) == 1 else v.reshape(self.shape)

    def _apply(self, x):
        return _kernels.circular_conv(self._grid(x), self._kernel2d).reshape(-1)

    def _adjoint(self, u):
        return _kernels.circular_conv(self._grid(u), self._kernel2d, adjoint=True).reshape(-1)


class Downsample(ForwardOperator):
    """Average over non-overlapping blocks of ``f`` (1D) or ``f x f`` (2D)."""

    kind = "downsample"

    def __init__(self, factor, shape):
        self.shape = _as_shape(shape)
        self.factor = int(factor)
        if self.factor < 1 or any(s % self.factor for s in self.shape):
            raise ValueError(f"shape {self.shape} not divisible by factor {self.factor}")
        self.in_dim = int(np.prod(self.shape))
        self.out_shape = tuple(s // self.factor for s in self.shape)
        self.out_dim = int(np.prod(self.out_shape))

    def _apply(self, x):
        f = self.factor
        if len(self.shape) == 1:
            return x.reshape(-1, f).mean(axis=1)
        h, w = self.out_shape
        return x.reshape(h, f, w, f).mean(axis=(1, 3)).reshape(-1)

    def _adjoint(self, u):
        f = self.factor
        if len(self.shape) == 1:
            return np.repeat(u / f, f)
        grid = u.reshape(self.out_shape) / (f * f)
        return np.repeat(np.repeat(grid, f, axis=0), f, axis=1).reshape(-1)


class Dense(ForwardOperator):
    kind = "dense"

    def __init__(self, matrix):
        self.matrix = np.array(matrix, dtype=np.float64, ndmin=2)
        self.matrix.setflags(write=False)
        self.out_dim, self.in_dim = self.matrix.shape

    def _apply(self, x):
        return self.matrix @ x

    def _adjoint(self, u):
        return self.matrix.T @ u

    def materialize(self):
        return np.array(self.matrix)


# ---------------------------------------------------------------------------
# decoders
# ---------------------------------------------------------------------------

class IdentityDecoder:
    kind = "identity"
    is_identity = True

    def __init__(self, dim=None):
        self.dim = dim

    def decode(self, z):
        return np.asarray(z, dtype=np.float64)

    def vjp(self, z, u):
        return np.asarray(u, dtype=np.float64)

    def jvp(self, z, u):
        return np.asarray(u, dtype=np.float64)


class SmoothDecoder:
    """``D(z) = z + gain * tanh(W z + b)``; Jacobian ``I + gain * diag(sech^2) W``."""

    kind = "smooth"

    def __init__(self, weight, bias, gain):
        self.weight = np.array(weight, dtype=np.float64, ndmin=2)
        self.bias = np.array(bias, dtype=np.float64).reshape(-1)
        self.gain = float(gain)
        d = self.weight.shape[0]
        if self.weight.shape != (d, d) or self.bias.shape != (d,):
            raise ValueError("smooth decoder needs a square W and matching b")
        self.dim = d
        self.weight.setflags(write=False)
        self.bias.setflags(write=False)

    @property
    def is_identity(self):
        return self.gain == 0.0

    @classmethod
    def random(cls, dim, gain, rng):
        """W with entries N(0, 1/d), b ~ N(0, 0.25)."""
        w = rng.standard_normal((dim, dim)) / np.sqrt(dim)
        b = 0.5 * rng.standard_normal(dim)
        return cls(w, b, gain)

    def decode(self, z):
        z = np.asarray(z, dtype=np.float64)
        return z + self.gain * np.tanh(self.weight @ z + self.bias)

    def _sech2(self, z):
        return 1.0 - np.tanh(self.weight @ z + self.bias) ** 2

    def vjp(self, z, u):
        u = np.asarray(u, dtype=np.float64)
        return u + self.gain * (self.weight.T @ (self._sech2(z) * u))

    def jvp(self, z, u):
        u = np.asarray(u, dtype=np.float64)
        return u + self.gain * self._sech2(z) * (self.weight @ u)


@dataclass(frozen=True)
class Measurement:
    y: np.ndarray
    operator: ForwardOperator
    decoder: object
    sigma_n: float

    def __post_init__(self):
        y = np.array(self.y, dtype=np.float64).reshape(-1)
        y.setflags(write=False)
        object.__setattr__(self, "y", y)
        if y.shape[0] != self.operator.out_dim:
            raise ValueError("measurement length does not match operator output")
        dec_dim = getattr(self.decoder, "dim", None)
        if dec_dim is not None and dec_dim != self.operator.in_dim:
            raise ValueError("decoder output dimension does not match operator input")
        if self.sigma_n < 0:
            raise ValueError("sigma_n must be nonnegative")

    @property
    def is_linear(self):
        return bool(self.decoder.is_identity)

    def forward(self, z):
        return self.operator.apply(self.decoder.decode(z))

    def residual(self, z):
        return self.y - self.forward(z)

    def residual_sq(self, z):
        r = self.residual(z)
        return float(r @ r)


def simulate_measurement(x0_true, op, dec, sigma_n, rng):
    """``y = op(dec(x0_true)) + sigma_n * eps`` with ``eps`` drawn from ``rng``."""
    if sigma_n < 0:
        raise ValueError("sigma_n must be nonnegative")
    clean = op.apply(dec.decode(x0_true))
    y = clean + sigma_n * rng.standard_normal(op.out_dim) if sigma_n > 0 else clean
    return Measurement(y=y, operator=op, decoder=dec, sigma_n=float(sigma_n))


def data_fidelity_grad(meas, z):
    """Gradient of ``||y - A(D(z))||^2`` (no 1/2 factor): ``-2 J^T A^T r``."""
    z = np.asarray(z, dtype=np.float64)
    r = meas.residual(z)
    return -2.0 * meas.decoder.vjp(z, meas.operator.adjoint(r))
