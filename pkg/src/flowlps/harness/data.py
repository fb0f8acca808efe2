"""Synthetic signals with an exactly known Gaussian-mixture law.

Component k has a smooth template mean in ``[0.25, 0.75]``: a bump for even
``k`` and a soft step for odd ``k``, centred at ``(k + 1) / (K + 1)`` along
the signal (along the anti-diagonal in 2D). Every component shares the
covariance ``BLOB_SD**2 * R + NUGGET * I`` where ``R`` is a squared-exponential
correlation with length ``LENGTH_SCALE`` pixels. Samples are not clipped.
"""

import numpy as np

from ..prior import GaussianMixture, sample

BLOB_SD = 0.06
NUGGET = 1e-4
LENGTH_SCALE = 1.5
MAX_DIM = 256


def parse_shape(shape):
    """``16``, ``"16"``, ``"8x8"`` or ``(8, 8)`` -> tuple."""
    if isinstance(shape, str):
        shape = [int(s) for s in shape.lower().split("x")]
    shape = tuple(int(s) for s in np.atleast_1d(shape))
    if len(shape) not in (1, 2) or min(shape) < 1:
        raise ValueError(f"shape must be n or h x w, got {shape}")
    return shape


def _coords(shape):
    if len(shape) == 1:
        u = (np.arange(shape[0]) + 0.5) / shape[0]
        return u[:, None], np.arange(shape[0], dtype=float)[:, None]
    h, w = shape
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    pix = np.stack([ii.ravel(), jj.ravel()], axis=1).astype(float)
    unit = (pix + 0.5) / np.array([h, w])
    return unit, pix


def templates(shape, k):
    unit, _ = _coords(shape)
    pos = unit.mean(axis=1)
    out = []
    for j in range(k):
        c = (j + 1) / (k + 1)
        if j % 2 == 0:
            base = np.exp(-0.5 * ((pos - c) / 0.12) ** 2)
        else:
            base = 1.0 / (1.0 + np.exp(-(pos - c) / 0.05))
        out.append(0.25 + 0.5 * base)
    return np.array(out)


def blob_prior(shape, k=3):
    """The generating mixture for ``shape`` with ``k`` equally weighted templates."""
    shape = parse_shape(shape)
    d = int(np.prod(shape))
    if d > MAX_DIM:
        raise ValueError(f"total dimension {d} exceeds {MAX_DIM}")
    _, pix = _coords(shape)
    sq = ((pix[:, None, :] - pix[None, :, :]) ** 2).sum(-1)
    cov = BLOB_SD ** 2 * np.exp(-0.5 * sq / LENGTH_SCALE ** 2) + NUGGET * np.eye(d)
    return GaussianMixture(np.full(k, 1.0 / k), templates(shape, k), np.repeat(cov[None], k, 0))


def generate_blob_dataset(shape, n, rng, k=3):
    """Return ``(samples (n, d), generating GaussianMixture)``."""
    gmm = blob_prior(shape, k)
    return sample(gmm, rng, n), gmm
