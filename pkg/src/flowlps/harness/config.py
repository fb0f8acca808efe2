"""Experiment configuration (YAML; JSON is accepted as a subset).

See ``docs/config.example.yaml`` for the annotated schema. Everything is
validated up front by :func:`load_config` / :func:`parse_config`; building
the prior, operator and decoder is deterministic in the master seed.
"""

from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .. import forward as fwd
from ..baselines import SOLVERS, expand
from ..prior import fit_em, sample
from ..rng import derive
from ..sampler import LinearDecay, LPSConfig, ProximalSolver, RhoSchedule
from .data import blob_prior, parse_shape
from .io import load_prior

_LPS_KEYS = {"n_steps", "alpha", "n_langevin", "n_total", "n_proximal", "zeta",
             "rho_schedule", "n_pcn"}
_SWEEP_KEYS = ("n_langevin", "rho_schedule", "n_total")


def parse_n_langevin(value):
    if isinstance(value, LinearDecay):
        return value
    if isinstance(value, dict):
        return LinearDecay(int(value["start"]), int(value["end"]))
    if isinstance(value, str) and "->" in value:
        start, end = value.split("->")
        return LinearDecay(int(start), int(end))
    return int(value)


@dataclass(frozen=True)
class PriorSpec:
    source: str = "blobs"
    shape: tuple = (16,)
    k: int = 3
    path: Optional[str] = None
    fit_em_n: Optional[int] = None
    fit_em_k: Optional[int] = None


@dataclass(frozen=True)
class TaskSpec:
    name: Optional[str] = None
    operator: dict = field(default_factory=lambda: {"kind": "identity"})
    decoder: dict = field(default_factory=lambda: {"kind": "identity"})
    sigma_n: float = 0.03


@dataclass(frozen=True)
class SolverSetting:
    """One concrete solver run: a name plus its (already expanded) config."""

    name: str
    cfg: LPSConfig
    step_size: float = 0.1

    def columns(self):
        if self.name == "single-gradient":
            return {"n_langevin": "0", "n_total": 0, "rho_schedule": "const(1)"}
        return {"n_langevin": str(self.cfg.n_langevin), "n_total": self.cfg.n_total,
                "rho_schedule": str(self.cfg.rho_schedule)}

    def slug(self):
        c = self.columns()
        rho = c["rho_schedule"].replace("(", "").replace(")", "")
        return f"{self.name}_nl{c['n_langevin'].replace('->', 'to')}_np{c['n_total']}_rho{rho}"


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    instances: int = 1
    out: str = "runs/default"
    peak: float = 1.0
    record_timing: bool = False
    write_trajectories: bool = True
    render_instances: int = 4
    prior: PriorSpec = field(default_factory=PriorSpec)
    task: TaskSpec = field(default_factory=TaskSpec)
    solvers: tuple = ("flowlps",)
    lps: LPSConfig = field(default_factory=LPSConfig)
    step_size: float = 0.1
    sweep: dict = field(default_factory=dict)

    # -- construction --------------------------------------------------------

    def build_true_prior(self):
        if self.prior.source == "file":
            return load_prior(self.prior.path)
        return blob_prior(self.prior.shape, self.prior.k)

    def build_solver_prior(self, true_prior):
        """The prior handed to solvers: the truth, or an EM fit to draws from it."""
        if self.prior.fit_em_n:
            data = sample(true_prior, derive(self.seed, "em-data"), self.prior.fit_em_n)
            return fit_em(data, self.prior.fit_em_k or true_prior.n_components,
                          rng=derive(self.seed, "em-init"))
        return true_prior

    @property
    def shape(self):
        if self.prior.source == "file":
            return (self.build_true_prior().dim,)
        return self.prior.shape

    def build_operator(self, dim):
        o = self.task.operator
        kind = o.get("kind", "identity")
        shape = self.shape if int(np.prod(self.shape)) == dim else (dim,)
        if kind == "identity":
            return fwd.Identity(dim)
        if kind == "mask":
            keep = o.get("mask_keep", 0.3)
            if isinstance(keep, (list, tuple)):
                return fwd.Mask(keep, dim)
            return fwd.Mask.random(dim, float(keep), derive(self.seed, "mask"))
        if kind == "circular-blur":
            return fwd.CircularBlur.gaussian(shape, float(o.get("kernel_sigma", 1.0)),
                                             int(o.get("kernel_size", 5)))
        if kind == "downsample":
            return fwd.Downsample(int(o.get("factor", 2)), shape)
        if kind == "dense":
            rows = int(o.get("rows", max(dim // 2, 1)))
            mat = derive(self.seed, "dense-operator").standard_normal((rows, dim)) / np.sqrt(rows)
            return fwd.Dense(mat)
        raise ValueError(f"unknown operator kind {kind!r}")

    def build_decoder(self, dim):
        d = self.task.decoder
        kind = d.get("kind", "identity")
        if kind == "identity":
            return fwd.IdentityDecoder(dim)
        if kind == "smooth":
            return fwd.SmoothDecoder.random(dim, float(d.get("gain", 0.1)),
                                            derive(self.seed, "decoder"))
        raise ValueError(f"unknown decoder kind {kind!r}")

    def settings(self):
        """Expand solvers x sweep axes into concrete :class:`SolverSetting` s."""
        axes = [(k, self.sweep[k]) for k in _SWEEP_KEYS if self.sweep.get(k)]
        combos = list(product(*[vals for _, vals in axes])) if axes else [()]
        out, seen = [], set()
        for name in self.solvers:
            for combo in combos:
                overrides = {}
                for (key, _), val in zip(axes, combo):
                    if key == "n_langevin":
                        val = parse_n_langevin(val)
                    elif key == "rho_schedule":
                        val = RhoSchedule.parse(val)
                    else:
                        val = int(val)
                    overrides[key] = val
                if "n_total" in overrides and "n_langevin" not in overrides:
                    nl = self.lps.n_langevin
                    peak = max(nl.start, nl.end) if isinstance(nl, LinearDecay) else nl
                    overrides["n_langevin"] = nl if peak <= overrides["n_total"] else overrides["n_total"]
                cfg = self.lps.with_(**overrides)
                setting = SolverSetting(name, cfg if name == "single-gradient" else expand(name, cfg),
                                        self.step_size)
                if setting.slug() not in seen:
                    seen.add(setting.slug())
                    out.append(setting)
        return out


def _lps_from(section, task_name):
    kw = {k: section[k] for k in _LPS_KEYS if k in section}
    if "n_langevin" in kw:
        kw["n_langevin"] = parse_n_langevin(kw["n_langevin"])
    if "rho_schedule" in kw:
        kw["rho_schedule"] = RhoSchedule.parse(kw["rho_schedule"])
    if "proximal" in section:
        base = LPSConfig.for_task(task_name).proximal if task_name else ProximalSolver()
        kw["proximal"] = ProximalSolver(**{**base.__dict__, **section["proximal"]})
    return LPSConfig.for_task(task_name, **kw) if task_name else LPSConfig(**kw)


def parse_config(raw):
    """Validate a parsed YAML mapping and return an :class:`ExperimentConfig`."""
    if not isinstance(raw, dict):
        raise ValueError("config must be a mapping")
    known = {"seed", "instances", "out", "peak", "record_timing", "write_trajectories",
             "render_instances", "prior", "task", "solver", "solvers", "sweep"}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")

    p = raw.get("prior", {}) or {}
    fit = p.get("fit_em") or {}
    prior = PriorSpec(source=p.get("source", "blobs"), shape=parse_shape(p.get("shape", 16)),
                      k=int(p.get("k", 3)), path=p.get("path"),
                      fit_em_n=fit.get("n_train"), fit_em_k=fit.get("k"))
    if prior.source not in ("blobs", "file"):
        raise ValueError("prior.source must be 'blobs' or 'file'")
    if prior.source == "file" and not prior.path:
        raise ValueError("prior.path is required when prior.source is 'file'")

    t = raw.get("task", {}) or {}
    task = TaskSpec(name=t.get("name"), operator=dict(t.get("operator", {"kind": "identity"})),
                    decoder=dict(t.get("decoder", {"kind": "identity"})),
                    sigma_n=float(t.get("sigma_n", 0.03)))
    if task.sigma_n < 0:
        raise ValueError("sigma_n must be nonnegative")

    s = raw.get("solver", {}) or {}
    solvers = raw.get("solvers") or [s.get("name", "flowlps")]
    solvers = tuple([solvers] if isinstance(solvers, str) else solvers)
    for name in solvers:
        if name not in SOLVERS:
            raise ValueError(f"unknown solver {name!r}; choose from {SOLVERS}")
    lps = _lps_from(s, task.name)

    sweep = dict(raw.get("sweep") or {})
    bad = set(sweep) - set(_SWEEP_KEYS)
    if bad:
        raise ValueError(f"unknown sweep axes: {sorted(bad)}")

    cfg = ExperimentConfig(
        seed=int(raw.get("seed", 0)), instances=int(raw.get("instances", 1)),
        out=str(raw.get("out", "runs/default")), peak=float(raw.get("peak", 1.0)),
        record_timing=bool(raw.get("record_timing", False)),
        write_trajectories=bool(raw.get("write_trajectories", True)),
        render_instances=int(raw.get("render_instances", 4)),
        prior=prior, task=task, solvers=solvers, lps=lps,
        step_size=float(s.get("step_size", 0.1)), sweep=sweep,
    )
    if cfg.instances < 0 or cfg.peak <= 0:
        raise ValueError("instances must be >= 0 and peak > 0")
    # fail early on inconsistent dimensions and impossible operators
    true_prior = cfg.build_true_prior()
    op = cfg.build_operator(true_prior.dim)
    cfg.build_decoder(true_prior.dim)
    if op.in_dim != true_prior.dim:
        raise ValueError("operator input dimension does not match the prior")
    cfg.settings()
    return cfg


def load_config(path):
    raw = yaml.safe_load(Path(path).read_text())
    return parse_config(raw or {})
