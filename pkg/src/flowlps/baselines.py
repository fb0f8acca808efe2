"""Reference solvers.

Most baselines are FlowLPS with a different configuration: pure proximal
optimisation (no Langevin), pure Langevin with full re-noising (no
proximal step), and the unconditional Euler sampler. The single-gradient
solver takes one measurement gradient step on the Tweedie estimate per
flow step and is implemented separately.
"""

import numpy as np

from . import prior as prior_mod
from .forward import data_fidelity_grad
from .rng import derive
from .sampler import LPSConfig, RhoSchedule, solve, time_schedule

SOLVERS = ("flowlps", "pure-proximal", "pure-langevin", "single-gradient", "unconditional")


def preset_pure_proximal(base):
    """All of ``N_P`` goes to the proximal phase."""
    return base.with_(n_langevin=0, n_proximal=base.n_total)


def preset_pure_langevin(base):
    """All of ``N_P`` goes to Langevin, no proximal step, full re-noising."""
    return base.with_(n_langevin=base.n_total, n_proximal=0,
                      rho_schedule=RhoSchedule("zero"))


def preset_unconditional(base):
    return base.with_(n_langevin=0, n_proximal=0,
                      rho_schedule=RhoSchedule("const", 1.0))


PRESETS = {
    "flowlps": lambda cfg: cfg,
    "pure-proximal": preset_pure_proximal,
    "pure-langevin": preset_pure_langevin,
    "unconditional": preset_unconditional,
}


def expand(name, base):
    """Config a preset runs with; ``single-gradient`` has none."""
    try:
        return PRESETS[name](base)
    except KeyError:
        raise ValueError(f"solver {name!r} is not a config preset; known: {sorted(PRESETS)}") from None


def euler_trajectory(prior, z1, n_steps, alpha):
    """Unconditional Euler states ``z_{t_1}, ..., z_{t_N}`` of the flow ODE.

    Each step is written as the interpolation
    ``(1 - t') E[x0 | z_t] + t' E[x1 | z_t]``, which is algebraically the
    Euler update ``z_t - dt * v``.
    """
    times = time_schedule(n_steps, alpha)
    z = np.array(z1, dtype=np.float64)
    states = []
    for t, t_next in zip(times[:-1], times[1:]):
        pair = prior_mod.tweedie_pair(prior, t, z)
        z = (1.0 - t_next) * pair.x0_hat + t_next * pair.x1_hat
        states.append(z)
    return np.array(states)


def single_gradient_solve(meas, prior, n_steps, step_size, alpha=3, seed=0):
    """One gradient step on ``||y - A(D(x0_hat))||^2`` per flow step.

    Re-interpolates with the model's own noise estimate (no re-noising) and
    returns ``D`` of the last corrected Tweedie estimate.
    """
    if step_size < 0:
        raise ValueError("step_size must be nonnegative")
    times = time_schedule(n_steps, alpha)
    z = derive(seed, "sampler").standard_normal(prior.dim)
    x0 = z
    for t, t_next in zip(times[:-1], times[1:]):
        pair = prior_mod.tweedie_pair(prior, t, z)
        x0 = pair.x0_hat - step_size * data_fidelity_grad(meas, pair.x0_hat)
        z = (1.0 - t_next) * x0 + t_next * pair.x1_hat
    return meas.decoder.decode(x0)


def run_solver(name, meas, prior, cfg, x_true=None, step_size=0.1):
    """Dispatch by solver name; returns ``(reconstruction, trajectory)``.

    ``single-gradient`` produces no trajectory (an empty list).
    """
    if name == "single-gradient":
        recon = single_gradient_solve(meas, prior, cfg.n_steps, step_size,
                                      alpha=cfg.alpha, seed=cfg.seed)
        return recon, []
    return solve(meas, prior, expand(name, cfg), x_true=x_true)


__all__ = ["SOLVERS", "expand", "euler_trajectory", "preset_pure_langevin",
           "preset_pure_proximal", "preset_unconditional", "run_solver",
           "single_gradient_solve", "LPSConfig"]
