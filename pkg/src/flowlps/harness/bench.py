"""Benchmark runner: instances x solver settings -> CSV, trajectories, renders."""

import os
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..baselines import run_solver
from ..forward import simulate_measurement
from ..prior import sample
from ..rng import derive, derive_seed
from .io import CSV_FIELDS, write_metrics_csv, write_pgm, write_trajectory
from .metrics import MetricsRecord, compute_psnr, mse

SUMMARY_FIELDS = ("solver", "n_langevin", "n_total", "rho_schedule", "n_instances",
                  "median_mse", "mean_mse", "median_psnr_db", "median_residual_sq")


def thread_count():
    """``LPS_THREADS`` (0 or unset = one per CPU)."""
    raw = os.environ.get("LPS_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"LPS_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ValueError("LPS_THREADS must be >= 0")
    return n if n > 0 else (os.cpu_count() or 1)


def instance_seed(master_seed, index):
    return derive_seed(master_seed, "instance", index)


@dataclass(frozen=True)
class Instance:
    index: int
    seed: int
    z_true: np.ndarray
    x_true: np.ndarray
    meas: object


def make_instance(cfg, true_prior, op, dec, index, seed=None):
    """Simulate the measurement for one instance; everything follows from ``seed``."""
    seed = instance_seed(cfg.seed, index) if seed is None else seed
    z_true = sample(true_prior, derive(seed, "truth"), 1)[0]
    meas = simulate_measurement(z_true, op, dec, cfg.task.sigma_n, derive(seed, "noise"))
    return Instance(index, seed, z_true, dec.decode(z_true), meas)


@dataclass
class InstanceResult:
    index: int
    rows: list
    trajectories: dict = field(default_factory=dict)
    recons: dict = field(default_factory=dict)


def _residual_sq(meas, x):
    """``||y - A x||^2`` for a reconstruction already in signal space."""
    r = meas.y - meas.operator.apply(x)
    return float(r @ r)


def run_instance(cfg, settings, solver_prior, inst):
    res = InstanceResult(inst.index, [])
    for s in settings:
        scfg = s.cfg.with_(seed=inst.seed)
        start = time.perf_counter()
        recon, traj = run_solver(s.name, inst.meas, solver_prior, scfg,
                                 x_true=inst.x_true, step_size=s.step_size)
        wall = time.perf_counter() - start if cfg.record_timing else 0.0
        rec = MetricsRecord(
            instance=inst.index, solver=s.name, **s.columns(),
            mse=mse(recon, inst.x_true), psnr_db=compute_psnr(recon, inst.x_true, cfg.peak),
            residual_sq=_residual_sq(inst.meas, recon),
            wall_s=wall, seed=inst.seed,
        )
        res.rows.append(rec.as_row())
        if traj:
            res.trajectories[s.slug()] = traj
        res.recons[s.slug()] = recon
    return res


def summarize(rows):
    groups = {}
    for r in rows:
        key = (r["solver"], str(r["n_langevin"]), int(r["n_total"]), r["rho_schedule"])
        groups.setdefault(key, []).append(r)
    out = []
    for (solver, nl, n_total, rho), rs in groups.items():
        errs = [float(r["mse"]) for r in rs]
        out.append({
            "solver": solver, "n_langevin": nl, "n_total": n_total, "rho_schedule": rho,
            "n_instances": len(rs), "median_mse": statistics.median(errs),
            "mean_mse": statistics.fmean(errs),
            "median_psnr_db": statistics.median(float(r["psnr_db"]) for r in rs),
            "median_residual_sq": statistics.median(float(r["residual_sq"]) for r in rs),
        })
    return out


def _image(v, shape):
    return v.reshape(shape) if len(shape) == 2 else v.reshape(1, -1)


def _prepare_out(out):
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from exc
    return out


@dataclass(frozen=True)
class BenchmarkResult:
    rows: list
    summary: list
    out: Path


def run_benchmark(cfg, out=None, settings=None):
    """Run every solver setting on every instance and write the artifacts.

    Writes ``results.csv`` (one row per instance and setting, sorted by
    instance), ``summary.csv`` (median/mean per setting), and unless disabled
    ``traj/<instance>_<setting>.jsonl`` and ``renders/*.pgm`` for the first
    ``render_instances`` instances.
    """
    out = _prepare_out(out or cfg.out)
    settings = cfg.settings() if settings is None else settings
    true_prior = cfg.build_true_prior()
    solver_prior = cfg.build_solver_prior(true_prior)
    op = cfg.build_operator(true_prior.dim)
    dec = cfg.build_decoder(true_prior.dim)
    instances = [make_instance(cfg, true_prior, op, dec, i) for i in range(cfg.instances)]

    def work(inst):
        return run_instance(cfg, settings, solver_prior, inst)

    n_threads = min(thread_count(), max(len(instances), 1))
    if n_threads > 1:
        with ThreadPoolExecutor(n_threads) as pool:
            results = list(pool.map(work, instances))
    else:
        results = [work(inst) for inst in instances]
    results.sort(key=lambda r: r.index)

    rows = [row for r in results for row in r.rows]
    write_metrics_csv(rows, out / "results.csv", CSV_FIELDS)
    summary = summarize(rows)
    write_metrics_csv(summary, out / "summary.csv", SUMMARY_FIELDS)

    if cfg.write_trajectories:
        (out / "traj").mkdir(exist_ok=True)
        for r in results:
            for slug, traj in r.trajectories.items():
                write_trajectory(traj, out / "traj" / f"{r.index:04d}_{slug}.jsonl")
    if cfg.render_instances > 0 and results:
        shape = cfg.shape
        (out / "renders").mkdir(exist_ok=True)
        for r, inst in zip(results[:cfg.render_instances], instances):
            write_pgm(_image(inst.x_true, shape), out / "renders" / f"{r.index:04d}_truth.pgm", cfg.peak)
            back = inst.meas.operator.adjoint(inst.meas.y)
            write_pgm(_image(back, shape), out / "renders" / f"{r.index:04d}_measured.pgm", cfg.peak)
            for slug, recon in r.recons.items():
                write_pgm(_image(recon, shape), out / "renders" / f"{r.index:04d}_{slug}.pgm", cfg.peak)
    return BenchmarkResult(rows, summary, out)
