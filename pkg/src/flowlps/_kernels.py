"""Hot inner loops, with a numba path and a pure-numpy fallback.

The backend is chosen once at import from ``LPS_BACKEND`` (``numba`` or
``numpy``; default ``numba`` when it imports). Both implementations are
always importable as ``numpy_impl`` / ``numba_impl`` so the benchmark and
the tests can compare them directly.

Kernels never draw random numbers; callers pass pre-drawn noise so that
both backends consume the generator identically.
"""

import os
import types

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


# ---------------------------------------------------------------------------
# numpy fallback
# ---------------------------------------------------------------------------

def _ula_chain_np(z0, drift_matrix, drift_offset, zeta, noise, record):
    # z <- z + zeta * (b - H z) + sqrt(2 zeta) * eps
    z = z0.copy()
    scale = np.sqrt(2.0 * zeta)
    n = noise.shape[0]
    out = np.empty((n if record else 1, z.shape[0]))
    for i in range(n):
        z = z + zeta * (drift_offset - drift_matrix @ z) + scale * noise[i]
        if record:
            out[i] = z
    if not record:
        out[0] = z
    return out


def _circular_conv_np(x, kernel, adjoint):
    kh, kw = kernel.shape
    ch, cw = kh // 2, kw // 2
    out = np.zeros_like(x)
    sign = -1 if adjoint else 1
    for a in range(kh):
        for b in range(kw):
            w = kernel[a, b]
            if w == 0.0:
                continue
            out += w * np.roll(x, (sign * (a - ch), sign * (b - cw)), axis=(0, 1))
    return out


numpy_impl = types.SimpleNamespace(
    ula_chain=_ula_chain_np, circular_conv=_circular_conv_np, name="numpy"
)


# ---------------------------------------------------------------------------
# numba
# ---------------------------------------------------------------------------

if numba is not None:

    @numba.njit(cache=True)
    def _ula_chain_nb(z0, drift_matrix, drift_offset, zeta, noise, record):
        d = z0.shape[0]
        n = noise.shape[0]
        z = z0.copy()
        nxt = np.empty(d)
        scale = np.sqrt(2.0 * zeta)
        rows = n if record else 1
        out = np.empty((rows, d))
        for i in range(n):
            for p in range(d):
                acc = 0.0
                for q in range(d):
                    acc += drift_matrix[p, q] * z[q]
                nxt[p] = z[p] + zeta * (drift_offset[p] - acc) + scale * noise[i, p]
            for p in range(d):
                z[p] = nxt[p]
            if record:
                for p in range(d):
                    out[i, p] = z[p]
        if not record:
            for p in range(d):
                out[0, p] = z[p]
        return out

    @numba.njit(cache=True)
    def _circular_conv_nb(x, kernel, adjoint):
        h, w = x.shape
        kh, kw = kernel.shape
        ch, cw = kh // 2, kw // 2
        sign = -1 if adjoint else 1
        out = np.zeros((h, w))
        for i in range(h):
            for j in range(w):
                acc = 0.0
                for a in range(kh):
                    ii = (i - sign * (a - ch)) % h
                    for b in range(kw):
                        jj = (j - sign * (b - cw)) % w
                        acc += kernel[a, b] * x[ii, jj]
                out[i, j] = acc
        return out

    numba_impl = types.SimpleNamespace(
        ula_chain=_ula_chain_nb, circular_conv=_circular_conv_nb, name="numba"
    )
else:  # pragma: no cover
    numba_impl = None


def _select(name):
    name = (name or "numba").strip().lower()
    if name not in ("numba", "numpy"):
        raise ValueError(f"LPS_BACKEND must be 'numba' or 'numpy', got {name!r}")
    if name == "numba" and numba_impl is not None:
        return numba_impl
    return numpy_impl


_active = _select(os.environ.get("LPS_BACKEND"))


def backend():
    """Name of the active backend."""
    return _active.name


def available_backends():
    return ("numpy", "numba") if numba_impl is not None else ("numpy",)


def use_backend(name):
    """Switch backend at runtime (used by the benchmark and tests)."""
    global _active
    _active = _select(name)
    return _active.name


def ula_chain(z0, drift_matrix, drift_offset, zeta, noise, record=True):
    """Run ULA on the Gaussian target with score ``drift_offset - drift_matrix @ z``.

    Returns the ``(n, d)`` iterates if ``record`` else a ``(1, d)`` array with
    the final state.
    """
    return _active.ula_chain(
        np.ascontiguousarray(z0, dtype=np.float64),
        np.ascontiguousarray(drift_matrix, dtype=np.float64),
        np.ascontiguousarray(drift_offset, dtype=np.float64),
        float(zeta),
        np.ascontiguousarray(noise, dtype=np.float64),
        bool(record),
    )


def circular_conv(x, kernel, adjoint=False):
    """2D circular convolution with a centred kernel (correlation if ``adjoint``)."""
    return _active.circular_conv(
        np.ascontiguousarray(x, dtype=np.float64),
        np.ascontiguousarray(kernel, dtype=np.float64),
        bool(adjoint),
    )
