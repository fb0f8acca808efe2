"""FlowLPS: Langevin-proximal posterior sampling along a rectified flow.

One flow step at time ``t`` (next time ``t' = t - dt``):

1. velocity ``v`` at ``z_t``; Tweedie pair ``z0 = z_t - t v``, ``z1 = z_t + (1-t) v``
2. pCN re-noising of ``z1`` with mixing ``rho(t')``
3. ``N_L`` Langevin steps on ``p(z0 | z_t, y)`` under the surrogate
   ``p(z0 | z_t) = N(z0_hat, t I)``, anchored at the initial ``z0_hat``
4. proximal mode seeking ``min ||y - A(D(z))||^2 + (sigma_n^2 / t) ||z - anchor||^2``
   started from the Langevin output, which is also the anchor
5. re-interpolation ``z_{t'} = (1 - t') z* + t' eps_hat``

The returned reconstruction is ``D(z*)`` from the last step of a truncated
schedule; the sampler never reaches ``t = 0``.
"""

import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import _kernels, prior as prior_mod
from .errors import UnsupportedOperation
from .forward import data_fidelity_grad
from .rng import derive

PHASES = ("tweedie", "pcn", "langevin", "proximal", "interp")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearDecay:
    """Langevin step count decaying linearly from ``start`` to ``end`` over the run."""

    start: int
    end: int

    def __str__(self):
        return f"{self.start}->{self.end}"


@dataclass(frozen=True)
class RhoSchedule:
    """pCN mixing rate as a function of the next time (``sigma_t`` is ``t``)."""

    kind: str = "sqrt-one-minus-sigma"
    value: float = 0.0

    KINDS = ("zero", "const", "one-minus-sigma", "sqrt-one-minus-sigma")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown rho schedule {self.kind!r}")
        if self.kind == "const" and not 0.0 <= self.value <= 1.0:
            raise ValueError("constant rho must lie in [0, 1]")

    @classmethod
    def parse(cls, spec):
        """Accept ``0``, ``0.5``, ``"const(0.5)"``, ``"1-sigma"``, ``"sqrt(1-sigma)"`` or a kind name."""
        if isinstance(spec, RhoSchedule):
            return spec
        if isinstance(spec, (int, float)):
            return cls("zero") if spec == 0 else cls("const", float(spec))
        text = str(spec).strip().lower().replace(" ", "")
        aliases = {"0": "zero", "1-sigma": "one-minus-sigma", "1-t": "one-minus-sigma",
                   "sqrt(1-sigma)": "sqrt-one-minus-sigma", "sqrt(1-t)": "sqrt-one-minus-sigma"}
        text = aliases.get(text, text)
        if text.startswith("const(") and text.endswith(")"):
            return cls("const", float(text[6:-1]))
        if text in cls.KINDS:
            return cls(text)
        try:
            return cls.parse(float(text))
        except ValueError:
            raise ValueError(f"cannot parse rho schedule {spec!r}") from None

    def __str__(self):
        return f"const({self.value:g})" if self.kind == "const" else self.kind


@dataclass(frozen=True)
class ProximalSolver:
    """How the proximal subproblem is solved.

    ``gradient-descent`` uses a step-decayed learning rate that restarts in
    every flow step; ``conjugate-gradient`` and ``exact-ridge`` need a linear
    operator with the identity decoder.
    """

    kind: str = "gradient-descent"
    lr0: float = 0.1
    decay_factor: float = 0.65
    decay_every: int = 10
    tol: float = 1e-12
    max_iter: Optional[int] = None

    KINDS = ("exact-ridge", "conjugate-gradient", "gradient-descent")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown proximal solver {self.kind!r}")
        if self.lr0 <= 0 or not 0 < self.decay_factor <= 1 or self.decay_every < 1:
            raise ValueError("invalid gradient-descent schedule")


@dataclass(frozen=True)
class LPSConfig:
    n_steps: int = 40
    alpha: int = 3
    n_langevin: Union[int, LinearDecay] = 5
    n_total: int = 15
    n_proximal: Optional[int] = None
    zeta: float = 1e-4
    rho_schedule: RhoSchedule = field(default_factory=RhoSchedule)
    proximal: ProximalSolver = field(default_factory=ProximalSolver)
    n_pcn: int = 1
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.rho_schedule, (str, int, float)):
            object.__setattr__(self, "rho_schedule", RhoSchedule.parse(self.rho_schedule))
        if self.n_steps < 1:
            raise ValueError("n_steps must be at least 1")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if not self.zeta > 0:
            raise ValueError("zeta must be positive")
        if self.n_pcn < 0:
            raise ValueError("n_pcn must be nonnegative")
        if min(self._langevin_range()) < 0:
            raise ValueError("Langevin step counts must be nonnegative")
        if self.peak_langevin > self.n_total:
            raise ValueError(f"N_L ({self.peak_langevin}) exceeds N_P ({self.n_total})")
        if self.n_proximal is not None and self.n_proximal < 0:
            raise ValueError("n_proximal must be nonnegative")

    def _langevin_range(self):
        nl = self.n_langevin
        return (nl.start, nl.end) if isinstance(nl, LinearDecay) else (nl,)

    @property
    def peak_langevin(self):
        return max(self._langevin_range())

    @property
    def proximal_iterations(self):
        """Per-step proximal budget: ``N_P`` minus the schedule's peak ``N_L``.

        With a decaying ``N_L`` the proximal count stays fixed, so the total
        per-step budget shrinks towards the end of sampling.
        """
        if self.n_proximal is not None:
            return self.n_proximal
        return self.n_total - self.peak_langevin

    @property
    def dt(self):
        return 1.0 / (self.n_steps + self.alpha)

    @staticmethod
    def s_sq(t):
        """Variance of the Gaussian surrogate for ``p(z0 | z_t)``."""
        return t

    def with_(self, **changes):
        return replace(self, **changes)

    @classmethod
    def for_task(cls, task, **overrides):
        """Per-task defaults (Langevin count, schedule offset, proximal schedule)."""
        try:
            preset = TASK_DEFAULTS[task]
        except KeyError:
            raise ValueError(f"unknown task {task!r}; choose from {sorted(TASK_DEFAULTS)}") from None
        kw = dict(alpha=preset["alpha"], n_langevin=preset["n_langevin"],
                  proximal=ProximalSolver(**preset["proximal"]))
        kw.update(overrides)
        return cls(**kw)


_GD_INPAINT = dict(lr0=0.1, decay_factor=0.65, decay_every=10)
_GD_SR = dict(lr0=0.5, decay_factor=0.85, decay_every=5)
_GD_PLAIN = dict(lr0=0.1, decay_factor=1.0, decay_every=1)

TASK_DEFAULTS = {
    "box-inpainting": dict(alpha=3, n_langevin=4, proximal=_GD_INPAINT),
    "random-inpainting": dict(alpha=3, n_langevin=5, proximal=_GD_INPAINT),
    "gaussian-deblur": dict(alpha=3, n_langevin=6, proximal=_GD_PLAIN),
    "motion-deblur": dict(alpha=3, n_langevin=6, proximal=_GD_PLAIN),
    "super-resolution": dict(alpha=5, n_langevin=4, proximal=_GD_SR),
}


# ---------------------------------------------------------------------------
# state and logs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SamplerState:
    t: float
    z_t: np.ndarray
    x0_anchor: Optional[np.ndarray] = None
    x1_hat: Optional[np.ndarray] = None
    z_star: Optional[np.ndarray] = None
    step_index: int = 0


@dataclass(frozen=True)
class PhaseEntry:
    phase: str
    residual_sq: float
    anchor_dist_sq: float
    mse_true: Optional[float] = None


@dataclass(frozen=True)
class TrajectoryRecord:
    """Log of one flow step: one :class:`PhaseEntry` per phase.

    For each phase, ``residual_sq`` is ``||y - A(D(c))||^2`` for the clean
    latent estimate ``c`` after the phase (for ``interp`` the new noisy
    state), and ``anchor_dist_sq`` is the squared move made by the phase
    (for ``proximal`` that is the distance to its anchor).
    """

    step: int
    t: float
    t_next: float
    n_langevin: int
    entries: tuple
    z_next: np.ndarray = field(repr=False, compare=False)

    def log_rows(self):
        rows = []
        for e in self.entries:
            row = {"step": self.step, "t": self.t, "phase": e.phase,
                   "residual_sq": e.residual_sq, "anchor_dist_sq": e.anchor_dist_sq}
            if e.mse_true is not None:
                row["mse_true"] = e.mse_true
            rows.append(row)
        return rows


# ---------------------------------------------------------------------------
# schedules
# ---------------------------------------------------------------------------

def time_schedule(n_steps, alpha):
    """Times ``t_i = 1 - i / (N + alpha)`` for ``i = 0..N``."""
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    total = n_steps + alpha
    return np.array([(total - i) / total for i in range(n_steps + 1)])


def resolve_rho(schedule, t_next):
    schedule = RhoSchedule.parse(schedule)
    if not 0.0 <= t_next <= 1.0:
        raise ValueError("t_next must lie in [0, 1]")
    if schedule.kind == "zero":
        return 0.0
    if schedule.kind == "const":
        return schedule.value
    if schedule.kind == "one-minus-sigma":
        return 1.0 - t_next
    return float(np.sqrt(1.0 - t_next))


def resolve_n_langevin(spec, step_index, n_steps):
    if not 0 <= step_index < n_steps:
        raise ValueError("step_index out of range")
    if not isinstance(spec, LinearDecay):
        return int(spec)
    if n_steps == 1:
        return spec.start
    x = spec.start + (spec.end - spec.start) * step_index / (n_steps - 1)
    return int(np.floor(x + 0.5))


# ---------------------------------------------------------------------------
# phases
# ---------------------------------------------------------------------------

def pcn_renoise(x1_hat, rho, rng):
    """One pCN move ``rho * x + sqrt(1 - rho^2) * z`` targeting N(0, I)."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    x1_hat = np.asarray(x1_hat, dtype=np.float64)
    z = rng.standard_normal(x1_hat.shape)
    return rho * x1_hat + np.sqrt(1.0 - rho * rho) * z


def _check_langevin(meas, t, n_steps):
    if n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    if n_steps and meas.sigma_n <= 0:
        raise ValueError("Langevin needs sigma_n > 0 (use at least 1e-4)")
    if n_steps and t <= 0:
        raise ValueError("Langevin needs t > 0")


def langevin_phase(meas, anchor, z_init, t, n_steps, zeta, rng):
    """``n_steps`` of ULA on ``log p(y | z) + log N(z; anchor, t I)``.

    The anchor stays fixed for the whole chain.
    """
    _check_langevin(meas, t, n_steps)
    z = np.array(z_init, dtype=np.float64)
    if n_steps == 0:
        return z
    noise = rng.standard_normal((n_steps, z.shape[0]))
    inv_2s2 = 0.5 / meas.sigma_n ** 2
    scale = np.sqrt(2.0 * zeta)
    for j in range(n_steps):
        score = -inv_2s2 * data_fidelity_grad(meas, z) - (z - anchor) / t
        z = z + zeta * score + scale * noise[j]
    return z


def langevin_chain(meas, anchor, z_init, t, n_steps, zeta, rng, record=True):
    """Same chain as :func:`langevin_phase`, optionally keeping every iterate.

    For a linear operator with the identity decoder the chain runs in the
    compiled kernel on the dense Gaussian drift; otherwise it loops in numpy.
    Returns ``(n_steps, d)`` iterates, or the final state if ``record`` is false.
    """
    _check_langevin(meas, t, n_steps)
    z = np.array(z_init, dtype=np.float64)
    if meas.is_linear:
        noise = rng.standard_normal((n_steps, z.shape[0]))
        a = meas.operator.materialize()
        inv_s2 = 1.0 / meas.sigma_n ** 2
        drift = inv_s2 * (a.T @ a) + np.eye(z.shape[0]) / t
        offset = inv_s2 * (a.T @ meas.y) + np.asarray(anchor) / t
        out = _kernels.ula_chain(z, drift, offset, zeta, noise, record)
        return out if record else out[0]
    out = np.empty((n_steps, z.shape[0]))
    for j in range(n_steps):
        z = langevin_phase(meas, anchor, z, t, 1, zeta, rng)
        out[j] = z
    return out if record else z


def _require_linear(meas, what):
    if not meas.is_linear:
        raise UnsupportedOperation(f"{what} needs the identity decoder")


def _conjugate_gradient(matvec, b, x0, tol, max_iter):
    x = x0.copy()
    r = b - matvec(x)
    p = r.copy()
    rs = r @ r
    stop = (tol * np.linalg.norm(b)) ** 2
    for _ in range(max_iter):
        if rs <= stop:
            break
        ap = matvec(p)
        step = rs / (p @ ap)
        x += step * p
        r -= step * ap
        rs_new = r @ r
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x


def proximal_phase(meas, anchor, t, solver=None, n_iter=None):
    """Minimise ``||y - A(D(z))||^2 + (sigma_n^2 / t) ||z - anchor||^2``.

    ``n_iter`` is the iteration budget. Zero skips the phase and returns the
    anchor. ``exact-ridge`` ignores the budget size, conjugate gradient
    stops at it or at ``solver.max_iter`` or ``d``, whichever is smallest,
    and gradient descent uses it as its step count (default
    ``solver.max_iter`` or 100).
    """
    solver = solver or ProximalSolver()
    if not t > 0:
        raise ValueError("proximal phase needs t > 0")
    anchor = np.asarray(anchor, dtype=np.float64)
    if n_iter == 0:
        return anchor.copy()
    lam = meas.sigma_n ** 2 / t
    op = meas.operator

    if solver.kind == "exact-ridge":
        _require_linear(meas, "exact-ridge")
        a = op.materialize()
        if lam == 0.0:
            # ridge limit lam -> 0+: minimum-norm correction of the anchor
            delta = np.linalg.lstsq(a, meas.y - a @ anchor, rcond=None)[0]
            return anchor + delta
        lhs = a.T @ a + lam * np.eye(a.shape[1])
        return cho_solve(cho_factor(lhs), a.T @ meas.y + lam * anchor)

    if solver.kind == "conjugate-gradient":
        _require_linear(meas, "conjugate-gradient")
        caps = [op.in_dim] + [c for c in (solver.max_iter, n_iter) if c is not None]
        b = op.adjoint(meas.y) + lam * anchor
        return _conjugate_gradient(lambda v: op.adjoint(op.apply(v)) + lam * v,
                                   b, anchor, solver.tol, min(caps))

    steps = n_iter if n_iter is not None else (solver.max_iter or 100)
    z = anchor.copy()
    for k in range(steps):
        lr = solver.lr0 * solver.decay_factor ** (k // solver.decay_every)
        grad = data_fidelity_grad(meas, z) + 2.0 * lam * (z - anchor)
        z = z - lr * grad
    return z


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def initial_latent(cfg, dim):
    """``z_1 ~ N(0, I)``, the first draw of the sampler stream for ``cfg.seed``."""
    rng = derive(cfg.seed, "sampler")
    return rng, rng.standard_normal(dim)


def _mse(meas, z, x_true):
    if x_true is None:
        return None
    diff = meas.decoder.decode(z) - x_true
    return float(diff @ diff) / diff.size


def flow_step(state, prior, meas, cfg, rng, x_true=None):
    """Advance one flow step; returns ``(new_state, TrajectoryRecord)``."""
    i = state.step_index
    t = state.t
    if not t > 0:
        raise ValueError("flow_step needs t > 0")
    total = cfg.n_steps + cfg.alpha
    t_next = (total - i - 1) / total
    z_t = state.z_t

    v = prior_mod.velocity(prior, t, z_t)
    pair = prior_mod.tweedie_from_velocity(z_t, v, t)
    z0_hat, z1_hat = pair.x0_hat, pair.x1_hat

    rho = resolve_rho(cfg.rho_schedule, t_next)
    eps_hat = z1_hat
    for _ in range(cfg.n_pcn):
        eps_hat = pcn_renoise(eps_hat, rho, rng)

    n_l = resolve_n_langevin(cfg.n_langevin, i, cfg.n_steps)
    z_lang = langevin_phase(meas, z0_hat, z0_hat, t, n_l, cfg.zeta, rng)

    z_star = proximal_phase(meas, z_lang, t, cfg.proximal, cfg.proximal_iterations)
    z_next = (1.0 - t_next) * z_star + t_next * eps_hat

    def entry(phase, c, moved_from, moved_to):
        d = moved_to - moved_from
        return PhaseEntry(phase, meas.residual_sq(c), float(d @ d), _mse(meas, c, x_true))

    entries = (
        entry("tweedie", z0_hat, z_t, z0_hat),
        entry("pcn", z0_hat, z1_hat, eps_hat),
        entry("langevin", z_lang, z0_hat, z_lang),
        entry("proximal", z_star, z_lang, z_star),
        entry("interp", z_next, z_t, z_next),
    )
    record = TrajectoryRecord(step=i, t=t, t_next=t_next, n_langevin=n_l,
                              entries=entries, z_next=z_next)
    new_state = SamplerState(t=t_next, z_t=z_next, x0_anchor=z_lang, x1_hat=eps_hat,
                             z_star=z_star, step_index=i + 1)
    return new_state, record


def _warn_if_unstable(meas, cfg):
    if cfg.peak_langevin == 0 or meas.sigma_n <= 0:
        return
    a = meas.operator.materialize()
    t_min = (cfg.alpha + 1) * cfg.dt  # smallest time a Langevin chain runs at
    lip = np.linalg.norm(a, 2) ** 2 / meas.sigma_n ** 2 + 1.0 / t_min
    if cfg.zeta * lip >= 2.0:
        warnings.warn(f"Langevin step zeta={cfg.zeta:g} exceeds the stability bound "
                      f"2/L with L~{lip:.3g}; the chain may diverge", RuntimeWarning,
                      stacklevel=3)


def solve(meas, prior, cfg, x_true=None):
    """Run FlowLPS; returns ``(D(z*_final), [TrajectoryRecord, ...])``."""
    if prior.dim != meas.operator.in_dim:
        raise ValueError("prior dimension does not match the operator input")
    _warn_if_unstable(meas, cfg)
    rng, z = initial_latent(cfg, prior.dim)
    state = SamplerState(t=1.0, z_t=z)
    trajectory = []
    for _ in range(cfg.n_steps):
        state, record = flow_step(state, prior, meas, cfg, rng, x_true=x_true)
        trajectory.append(record)
    return meas.decoder.decode(state.z_star), trajectory
