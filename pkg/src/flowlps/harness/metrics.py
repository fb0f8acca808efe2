from dataclasses import dataclass

import numpy as np

#: reported when the reconstruction is exact (MSE = 0)
PSNR_CAP_DB = 99.0


def mse(x, ref):
    diff = np.asarray(x, float) - np.asarray(ref, float)
    return float(np.mean(diff * diff))


def compute_psnr(x, ref, peak=1.0):
    """``10 log10(peak^2 / MSE)`` in dB, capped at :data:`PSNR_CAP_DB`."""
    if not peak > 0:
        raise ValueError("peak must be positive")
    err = mse(x, ref)
    if err == 0.0:
        return PSNR_CAP_DB
    return float(min(10.0 * np.log10(peak * peak / err), PSNR_CAP_DB))


@dataclass(frozen=True)
class MetricsRecord:
    instance: int
    solver: str
    n_langevin: str
    n_total: int
    rho_schedule: str
    mse: float
    psnr_db: float
    residual_sq: float
    wall_s: float
    seed: int

    def as_row(self):
        return dict(self.__dict__)
