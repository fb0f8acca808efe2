"""File formats.

Prior file (JSON)::

    {
      "dim": 2,
      "components": [
        {"weight": 0.5, "mean": [0.0, 1.0], "cov": [1.0, 0.0, 0.0, 1.0]},
        ...
      ]
    }

``cov`` is the d x d covariance flattened row-major; a nested list of rows
is accepted on input too. Weights must sum to 1.

Trajectory log: JSON lines, one per phase per flow step, with keys
``step, t, phase, residual_sq, anchor_dist_sq`` and optionally ``mse_true``.

Metrics CSV: header ``instance,solver,n_langevin,n_total,rho_schedule,mse,
psnr_db,residual_sq,wall_s,seed``.

Renders: binary 8-bit PGM (P5), values clamped to ``[0, peak]``.
"""

import csv
import json
from pathlib import Path

import numpy as np

from ..prior import GaussianMixture

CSV_FIELDS = ("instance", "solver", "n_langevin", "n_total", "rho_schedule",
              "mse", "psnr_db", "residual_sq", "wall_s", "seed")


def prior_to_dict(gmm):
    return {
        "dim": gmm.dim,
        "components": [
            {"weight": float(w), "mean": [float(v) for v in mu],
             "cov": [float(v) for v in cov.reshape(-1)]}
            for w, mu, cov in gmm.components
        ],
    }


def prior_from_dict(spec):
    try:
        dim = int(spec["dim"])
        comps = spec["components"]
        weights = np.array([c["weight"] for c in comps], dtype=np.float64)
        means = np.array([c["mean"] for c in comps], dtype=np.float64).reshape(len(comps), dim)
        covs = np.array([c["cov"] for c in comps], dtype=np.float64).reshape(len(comps), dim, dim)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed prior specification: {exc}") from exc
    return GaussianMixture(weights, means, covs)


def save_prior(gmm, path):
    Path(path).write_text(json.dumps(prior_to_dict(gmm), indent=2) + "\n")


def load_prior(path):
    return prior_from_dict(json.loads(Path(path).read_text()))


def write_trajectory(records, path):
    with open(path, "w") as fh:
        for rec in records:
            for row in rec.log_rows():
                fh.write(json.dumps(row) + "\n")


def read_trajectory(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metrics_csv(rows, path, fields=CSV_FIELDS):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fields)
        for row in rows:
            writer.writerow([_fmt(row[f]) for f in fields])


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_pgm(image, path, peak=1.0):
    """Write a 2D array (1D is drawn as a single row) as binary PGM."""
    img = np.atleast_2d(np.asarray(image, dtype=np.float64))
    scaled = np.clip(img, 0.0, peak) / peak * 255.0
    data = np.floor(scaled + 0.5).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path):
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    return np.frombuffer(parts[4], dtype=np.uint8, count=w * h).reshape(h, w), maxval
