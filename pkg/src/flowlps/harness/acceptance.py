"""Acceptance criteria as callable checks.

Each ``criterion_N`` returns a :class:`CriterionResult`; the pytest suite
and ``flowlps verify`` both run these same functions.
"""

import contextlib
import filecmp
import io
import statistics
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .. import oracle
from ..baselines import euler_trajectory, preset_pure_proximal, preset_unconditional
from ..forward import Dense, Identity, IdentityDecoder, Mask, Measurement, simulate_measurement
from ..prior import GaussianMixture, sample, velocity
from ..rng import derive
from ..sampler import (TASK_DEFAULTS, LinearDecay, LPSConfig, ProximalSolver, RhoSchedule,
                       initial_latent, langevin_chain, pcn_renoise, proximal_phase,
                       resolve_rho, solve, time_schedule)


@dataclass(frozen=True)
class CriterionResult:
    number: int
    name: str
    passed: bool
    metric: float
    tolerance: float
    detail: str
    seconds: float = 0.0

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"[{status}] criterion {self.number} {self.name}: metric={self.metric:.6g} "
                f"tol={self.tolerance:.6g} ({self.detail}) {self.seconds:.1f}s")


def _timed(fn):
    def wrapper(*args, **kwargs):
        start = time.perf_counter()
        res = fn(*args, **kwargs)
        return CriterionResult(**{**res.__dict__, "seconds": time.perf_counter() - start})
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# -- 1: proximal solvers vs closed-form ridge --------------------------------

def random_ridge_instance(rng, d=16, m=8, sv_sq=(2.5, 8.0)):
    """Random ``A = U diag(s) V^T`` with ``s^2`` uniform in ``sv_sq``.

    The singular-value range keeps every curvature ``2 (s^2 + lambda)`` inside
    the band the inpainting gradient-descent schedule (lr 0.1, x0.65 every 10)
    can contract; see the decisions ledger.
    """
    u, _ = np.linalg.qr(rng.standard_normal((m, m)))
    v, _ = np.linalg.qr(rng.standard_normal((d, m)))
    s = np.sqrt(rng.uniform(*sv_sq, size=m))
    a = u @ np.diag(s) @ v.T
    x = rng.standard_normal(d)
    anchor = x + 0.3 * rng.standard_normal(d)
    return a, x, anchor


@_timed
def criterion_1(n_instances=100, sigma_n=0.03, gd_iters=100, tol=1e-4, seed=1):
    """Gradient-descent and CG proximal solutions equal the ridge solution."""
    rng = derive(seed, "acceptance-1")
    gd = ProximalSolver("gradient-descent", **TASK_DEFAULTS["random-inpainting"]["proximal"])
    cg = ProximalSolver("conjugate-gradient", tol=1e-14)
    worst = {"gradient-descent": 0.0, "conjugate-gradient": 0.0}
    for i in range(n_instances):
        t = (0.1, 0.5, 0.9)[i % 3]
        a, x, anchor = random_ridge_instance(rng)
        meas = simulate_measurement(x, Dense(a), IdentityDecoder(), sigma_n, rng)
        ref = oracle.ridge_closed_form(a, meas.y, sigma_n ** 2 / t, anchor)
        for solver, n_iter in ((gd, gd_iters), (cg, None)):
            z = proximal_phase(meas, anchor, t, solver, n_iter)
            rel = np.linalg.norm(z - ref) / np.linalg.norm(ref)
            worst[solver.kind] = max(worst[solver.kind], rel)
    metric = max(worst.values())
    return CriterionResult(1, "proximal == ridge", metric <= tol, metric, tol,
                           f"worst rel err GD={worst['gradient-descent']:.2e} "
                           f"CG={worst['conjugate-gradient']:.2e} over {n_instances} instances")


# -- 2: re-noised exact posterior draws have the right marginal ---------------

def proposition_1_setup():
    prior = GaussianMixture([0.4, 0.6], [[-1.0, 0.5], [1.2, -0.3]],
                            [[[0.5, 0.2], [0.2, 0.4]], [[0.3, -0.1], [-0.1, 0.6]]])
    op = Mask([0], 2)
    y = np.array([0.3])
    return prior, op, y, 0.1


@_timed
def criterion_2(n=100_000, n_se=3.0, seed=2, times=(0.2, 0.5, 0.8)):
    """x0 ~ p(x0 | x_t, y) exactly, eps by one pCN move, x_t' = (1-t')x0 + t' eps."""
    prior, op, y, sigma_n = proposition_1_setup()
    a = op.materialize()
    w, mu, cov = prior.weights, prior.means, prior.covs
    post_w, post_m, post_c = oracle.posterior_mixture(w, mu, cov, a, y, sigma_n)
    rng = derive(seed, "acceptance-2")
    worst, ok = 0.0, True
    for t_next in times:
        t = min(t_next + 0.1, 1.0)
        # x_t | y: exact draw of x0 | y pushed through the forward interpolation
        x0_path = oracle.exact_posterior_draws(w, mu, cov, a, y, sigma_n, n, rng)
        x_t = (1 - t) * x0_path + t * rng.standard_normal((n, 2))
        x0 = oracle.joint_posterior_draws(w, mu, cov, a, y, sigma_n, t, x_t, rng)
        eps = pcn_renoise(rng.standard_normal((n, 2)),
                          resolve_rho(RhoSchedule(), t_next), rng)
        x_next = (1 - t_next) * x0 + t_next * eps
        target = GaussianMixture(post_w, (1 - t_next) * post_m,
                                 (1 - t_next) ** 2 * post_c + t_next ** 2 * np.eye(2))
        rep = oracle.moment_distance(x_next, target)
        ok &= rep.within(n_se)
        worst = max(worst, rep.worst_z())
    return CriterionResult(2, "pCN re-noising preserves p(x_t'|y)", bool(ok), worst, n_se,
                           f"worst |error|/SE over t'={times}, n={n}")


# -- 3: Langevin chain vs exact ULA stationary covariance --------------------

@_timed
def criterion_3(n_keep=100_000, burn=2_000, zeta=4e-3, t=0.1, sigma_n=0.1, tol=0.05, seed=3):
    a = np.array([[1.0, 0.3], [0.2, 0.9]])
    meas = Measurement(np.array([0.4, -0.2]), Dense(a), IdentityDecoder(), sigma_n)
    anchor = np.array([0.1, 0.2])
    chain = langevin_chain(meas, anchor, anchor, t, burn + n_keep, zeta, derive(seed, "acceptance-3"))
    emp = np.cov(chain[burn:].T)
    precision = a.T @ a / sigma_n ** 2 + np.eye(2) / t
    ref = oracle.ula_stationary_covariance(precision, zeta)
    rel = np.linalg.norm(emp - ref) / np.linalg.norm(ref)
    cont = np.linalg.inv(precision)
    gap = np.linalg.norm(ref - cont) / np.linalg.norm(cont)
    return CriterionResult(3, "ULA stationary covariance", rel <= tol, rel, tol,
                           f"Frobenius rel err, {n_keep} iterates; discretisation gap to P^-1 = {gap:.3f}")


# -- 4: pCN preserves N(0, I) and is always accepted -------------------------

@_timed
def criterion_4(n=100_000, n_props=1_000, d=2, n_se=3.0, seed=4):
    rhos = (0.0, 0.5, float(np.sqrt(1 - 3 / 43)))
    rng = derive(seed, "acceptance-4")
    std = GaussianMixture([1.0], np.zeros((1, d)), np.eye(d)[None])
    worst_z, worst_ratio = 0.0, 0.0
    moments_ok = True
    for rho in rhos:
        x = rng.standard_normal((n, d))
        rep = oracle.moment_distance(pcn_renoise(x, rho, rng), std)
        moments_ok &= rep.within(n_se)
        worst_z = max(worst_z, rep.worst_z())
        for _ in range(n_props):
            old = rng.standard_normal(d)
            new = pcn_renoise(old, rho, rng)
            ratio = np.exp(oracle.pcn_log_acceptance_ratio(old, new, rho))
            worst_ratio = max(worst_ratio, abs(ratio - 1.0))
    passed = bool(moments_ok) and worst_ratio <= 1e-12
    return CriterionResult(4, "pCN invariance and acceptance", passed, worst_ratio, 1e-12,
                           f"max |MH ratio - 1| over {n_props} proposals per rho; "
                           f"moment worst |error|/SE = {worst_z:.2f} (tol {n_se})")


# -- 5: closed-form velocity vs quadrature -----------------------------------

def velocity_test_priors():
    return (
        GaussianMixture([1.0], [[0.3]], [[[0.8]]]),
        GaussianMixture([0.3, 0.7], [[-1.5], [1.0]], [[[0.2]], [[0.5]]]),
        GaussianMixture([0.2, 0.5, 0.3], [[-2.0], [0.0], [2.5]], [[[0.3]], [[0.1]], [[0.6]]]),
    )


@_timed
def criterion_5(n_points=20, tol=1e-6, seed=5):
    rng = derive(seed, "acceptance-5")
    worst = 0.0
    for gmm in velocity_test_priors():
        grid = oracle.default_grid(gmm)
        for _ in range(n_points):
            t = rng.uniform(0.05, 1.0)
            x = (1 - t) * sample(gmm, rng, 1)[0, 0] + t * rng.standard_normal()
            got = velocity(gmm, t, np.array([x]))[0]
            ref = oracle.quadrature_velocity(gmm, t, x, grid)
            worst = max(worst, abs(got - ref))
    return CriterionResult(5, "velocity vs quadrature", worst <= tol, worst, tol,
                           f"max abs error, {n_points} points x 3 priors")


# -- 6: collapse to the unconditional Euler sampler ---------------------------

@_timed
def criterion_6(n_steps=40, seed=6):
    prior = GaussianMixture([0.5, 0.5], [[1.0, -1.0, 0.0], [-1.0, 0.5, 2.0]],
                            np.repeat(0.3 * np.eye(3)[None], 2, 0))
    meas = Measurement(np.zeros(3), Identity(3), IdentityDecoder(), 0.03)
    cfg = preset_unconditional(LPSConfig(n_steps=n_steps, seed=seed))
    _, traj = solve(meas, prior, cfg)
    flow = np.array([r.z_next for r in traj])
    _, z1 = initial_latent(cfg, prior.dim)
    euler = euler_trajectory(prior, z1, n_steps, cfg.alpha)
    n_diff = int(np.sum(flow != euler))
    return CriterionResult(6, "collapse to Euler", n_diff == 0, float(n_diff), 0.0,
                           f"differing entries over {n_steps} steps (bit-identical required)")


# -- 7: defaults match the published hyperparameters -------------------------

PUBLISHED = {
    "box-inpainting": dict(zeta=1e-4, alpha=3, n_langevin=4, n_total=15),
    "random-inpainting": dict(zeta=1e-4, alpha=3, n_langevin=5, n_total=15),
    "gaussian-deblur": dict(zeta=1e-4, alpha=3, n_langevin=6, n_total=15),
    "motion-deblur": dict(zeta=1e-4, alpha=3, n_langevin=6, n_total=15),
    "super-resolution": dict(zeta=1e-4, alpha=5, n_langevin=4, n_total=15),
}


@_timed
def criterion_7():
    mismatches = []
    for task, want in PUBLISHED.items():
        cfg = LPSConfig.for_task(task)
        for key, val in want.items():
            if getattr(cfg, key) != val:
                mismatches.append(f"{task}.{key}={getattr(cfg, key)} != {val}")
        end = time_schedule(cfg.n_steps, cfg.alpha)[-1]
        if abs(end - cfg.alpha / (cfg.n_steps + cfg.alpha)) > 1e-15:
            mismatches.append(f"{task} end time {end}")
    default = LPSConfig()
    if (default.zeta, default.n_total, default.n_steps, default.alpha) != (1e-4, 15, 40, 3):
        mismatches.append("LPSConfig() defaults")
    if time_schedule(40, 3)[-1] != 3 / 43:
        mismatches.append("t_final(40, 3) != 3/43")
    return CriterionResult(7, "published hyperparameters", not mismatches,
                           float(len(mismatches)), 0.0, "; ".join(mismatches) or "all match")


# -- 8: ablation trends on toy random inpainting ------------------------------

def inpainting_suite(n_instances=50, shape=(8, 8), keep=0.3, sigma_n=0.03, seed=8):
    from .data import blob_prior

    prior = blob_prior(shape)
    op = Mask.random(prior.dim, keep, derive(seed, "acceptance-8-mask"))
    dec = IdentityDecoder(prior.dim)
    out = []
    for i in range(n_instances):
        x = sample(prior, derive(seed, "acceptance-8-truth", i), 1)[0]
        out.append((x, simulate_measurement(x, op, dec, sigma_n, derive(seed, "acceptance-8-noise", i))))
    return prior, out


def median_mse(prior, suite, cfg):
    errs = []
    for i, (x, meas) in enumerate(suite):
        recon, _ = solve(meas, prior, cfg.with_(seed=i))
        errs.append(float(np.mean((recon - x) ** 2)))
    return statistics.median(errs)


@_timed
def criterion_8(n_instances=50, parity=0.05):
    prior, suite = inpainting_suite(n_instances)
    base = LPSConfig.for_task("random-inpainting")
    med = {
        "N_L=5": median_mse(prior, suite, base.with_(n_langevin=5)),
        "pure-proximal": median_mse(prior, suite, preset_pure_proximal(base)),
        "N_L=6": median_mse(prior, suite, base.with_(n_langevin=6)),
        "N_L=6->1": median_mse(prior, suite, base.with_(n_langevin=LinearDecay(6, 1))),
    }
    trend = med["N_L=5"] <= med["pure-proximal"]
    gap = abs(med["N_L=6->1"] - med["N_L=6"]) / med["N_L=6"]
    detail = ", ".join(f"{k} {v:.5f}" for k, v in med.items())
    detail += f"; N_L=5 <= pure-proximal: {trend}; decay gap {gap:.3f}"
    return CriterionResult(8, "ablation trends (median MSE)", bool(trend and gap <= parity),
                           gap, parity, detail)


# -- 9: determinism of the CLI artefacts -------------------------------------

DETERMINISM_CONFIG = {
    "seed": 9,
    "instances": 3,
    "prior": {"source": "blobs", "shape": "8x8", "k": 3},
    "task": {"name": "random-inpainting", "operator": {"kind": "mask", "mask_keep": 0.3},
             "sigma_n": 0.03},
    "solvers": ["flowlps", "pure-proximal", "single-gradient"],
    "sweep": {"n_langevin": [0, 5, "6->1"]},
}


def _tree_identical(a, b):
    files_a = sorted(p.relative_to(a) for p in Path(a).rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(b) for p in Path(b).rglob("*") if p.is_file())
    if files_a != files_b or not files_a:
        return False, len(files_a)
    same = all(filecmp.cmp(Path(a) / f, Path(b) / f, shallow=False) for f in files_a)
    return same, len(files_a)


@_timed
def criterion_9():
    from .cli import main

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        cfg_path = tmp / "cfg.yaml"
        cfg_path.write_text(yaml.safe_dump(DETERMINISM_CONFIG))
        outcomes = []
        for cmd in ("solve", "bench"):
            runs = []
            for k in range(2):
                out = tmp / f"{cmd}{k}"
                args = [cmd, "--config", str(cfg_path), "--out", str(out)]
                if cmd == "solve":
                    args += ["--seed", "11"]
                with contextlib.redirect_stdout(io.StringIO()):
                    code = main(args)
                if code != 0:
                    return CriterionResult(9, "determinism", False, 1.0, 0.0, f"{cmd} failed")
                runs.append(out)
            outcomes.append((cmd, *_tree_identical(*runs)))
    passed = all(ok for _, ok, _ in outcomes)
    detail = ", ".join(f"{cmd}: {n} files {'identical' if ok else 'DIFFER'}" for cmd, ok, n in outcomes)
    return CriterionResult(9, "determinism", passed, float(not passed), 0.0, detail)


CRITERIA = (criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9)
