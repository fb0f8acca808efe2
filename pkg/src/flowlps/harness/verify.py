"""Oracle-backed self-checks behind ``flowlps verify``.

``fast`` runs deterministic algebraic checks (well under 30 s); ``full``
adds the sampling-based acceptance criteria at 10^5 draws and the ablation
and determinism runs.
"""

import json
import time

import numpy as np

from .. import _kernels, forward as fwd, oracle
from ..prior import (GaussianMixture, conditional_x0_given_xt, log_density,
                     posterior_x0_given_y, tweedie_pair, velocity)
from ..rng import derive
from . import acceptance

_FAST = []
_FULL = []


def check(level):
    def register(fn):
        (_FAST if level == "fast" else _FULL).append(fn)
        return fn
    return register


def _close(a, b, tol):
    err = float(np.max(np.abs(np.asarray(a, float) - np.asarray(b, float))))
    return err <= tol, f"max abs err {err:.3g} (tol {tol:g})"


@check("fast")
def worked_example_1d():
    gmm = GaussianMixture([1.0], [[2.0]], [[[1.0]]])
    pair = tweedie_pair(gmm, 0.5, np.array([1.0]))
    cond = conditional_x0_given_xt(gmm, 0.5, np.array([1.0]))
    got = [velocity(gmm, 0.5, np.array([1.0]))[0], pair.x0_hat[0], pair.x1_hat[0],
           cond.means[0, 0], cond.covs[0, 0, 0], log_density(gmm, np.array([2.0]))]
    return _close(got, [-2.0, 2.0, 0.0, 2.0, 0.5, -0.5 * np.log(2 * np.pi)], 1e-12)


@check("fast")
def posterior_vs_information_form():
    rng = derive(0, "verify-posterior")
    d, m, k = 4, 3, 3
    covs = []
    for _ in range(k):
        b = rng.standard_normal((d, d))
        covs.append(b @ b.T / d + 0.1 * np.eye(d))
    gmm = GaussianMixture(np.full(k, 1 / k), rng.standard_normal((k, d)), np.array(covs))
    a = rng.standard_normal((m, d))
    y = rng.standard_normal(m)
    post = posterior_x0_given_y(gmm, fwd.Dense(a), y, 0.2)
    w, mu, cv = oracle.posterior_mixture(gmm.weights, gmm.means, gmm.covs, a, y, 0.2)
    ok = [_close(post.weights, w, 1e-10), _close(post.means, mu, 1e-10), _close(post.covs, cv, 1e-10)]
    return all(o for o, _ in ok), "; ".join(msg for _, msg in ok)


@check("fast")
def operator_adjoints():
    rng = derive(0, "verify-adjoint")
    ops = [fwd.Identity(12), fwd.Mask.random(12, 0.5, rng),
           fwd.CircularBlur.gaussian((4, 6), 1.0, 3), fwd.Downsample(2, (4, 6)),
           fwd.Dense(rng.standard_normal((5, 12)))]
    worst = 0.0
    for op in ops:
        x = rng.standard_normal(op.in_dim)
        u = rng.standard_normal(op.out_dim)
        lhs, rhs = op.apply(x) @ u, x @ op.adjoint(u)
        worst = max(worst, abs(lhs - rhs) / max(1.0, abs(lhs)))
    return worst <= 1e-12, f"max relative <Ax,u> - <x,A^T u> = {worst:.3g}"


@check("fast")
def decoder_vjp_vs_finite_differences():
    rng = derive(0, "verify-decoder")
    dec = fwd.SmoothDecoder.random(6, 0.5, rng)
    z, u = rng.standard_normal(6), rng.standard_normal(6)
    fd = oracle.finite_difference_gradient(lambda v: dec.decode(v) @ u, z, h=1e-6)
    return _close(dec.vjp(z, u), fd, 1e-7)


@check("fast")
def kernel_backends_agree():
    if "numba" not in _kernels.available_backends():
        return True, "numba unavailable; numpy only"
    rng = derive(0, "verify-kernels")
    h = np.array([[3.0, 0.5], [0.5, 2.0]])
    args = (rng.standard_normal(2), h, rng.standard_normal(2), 1e-2, rng.standard_normal((50, 2)))
    img, ker = rng.standard_normal((5, 7)), rng.standard_normal((3, 3))
    res = []
    for impl in (_kernels.numpy_impl, _kernels.numba_impl):
        res.append((impl.ula_chain(*args, True), impl.circular_conv(img, ker, False),
                    impl.circular_conv(img, ker, True)))
    worst = max(float(np.max(np.abs(a - b))) for a, b in zip(*res))
    return worst <= 1e-12, f"max abs difference {worst:.3g}"


def _from_criterion(fn):
    def run():
        res = fn()
        return res.passed, res.line()
    run.__name__ = fn.__name__
    return run


for _fn in (acceptance.criterion_1, acceptance.criterion_5, acceptance.criterion_6,
            acceptance.criterion_7):
    check("fast")(_from_criterion(_fn))
for _fn in (acceptance.criterion_2, acceptance.criterion_3, acceptance.criterion_4,
            acceptance.criterion_8, acceptance.criterion_9):
    check("full")(_from_criterion(_fn))


def checks(level):
    if level not in ("fast", "full"):
        raise ValueError("level must be 'fast' or 'full'")
    return list(_FAST) + (list(_FULL) if level == "full" else [])


def run_suite(level="fast", report_path=None, stream=None):
    """Run the checks; returns a list of ``{check, passed, detail, seconds}`` dicts."""
    report = []
    for fn in checks(level):
        start = time.perf_counter()
        try:
            passed, detail = fn()
        except Exception as exc:  # a crashing check is a failing check
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        entry = {"check": fn.__name__, "passed": bool(passed), "detail": detail,
                 "seconds": round(time.perf_counter() - start, 3)}
        report.append(entry)
        if stream is not None:
            print(f"{'PASS' if passed else 'FAIL'} {fn.__name__}: {detail}", file=stream, flush=True)
    if report_path:
        with open(report_path, "w") as fh:
            for entry in report:
                fh.write(json.dumps(entry) + "\n")
    return report
