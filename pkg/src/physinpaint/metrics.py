"""RMSE, global SSIM, R^2 and dataset eigen-spectra."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

SSIM_C1 = 0.01
SSIM_C2 = 0.03


def _pair(u, v) -> tuple[np.ndarray, np.ndarray]:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ShapeError(f"field shapes differ: {u.shape} vs {v.shape}")
    return u, v


def rmse(u, v) -> float:
    u, v = _pair(u, v)
    return float(np.sqrt(np.mean((u - v) ** 2)))


def ssim(u, v, c1: float = SSIM_C1, c2: float = SSIM_C2) -> float:
    """Single-window SSIM over the whole image, population moments."""
    u, v = _pair(u, v)
    mu_u, mu_v = u.mean(), v.mean()
    var_u = np.mean((u - mu_u) ** 2)
    var_v = np.mean((v - mu_v) ** 2)
    cov_uv = np.mean((u - mu_u) * (v - mu_v))
    num = (2 * mu_u * mu_v + c1) * (2 * cov_uv + c2)
    den = (mu_u**2 + mu_v**2 + c1) * (var_u + var_v + c2)
    return float(num / den)


def r_squared(truth, pred) -> float:
    truth, pred = _pair(truth, pred)
    tss = np.sum((truth - truth.mean()) ** 2)
    if tss == 0:
        raise ValueError("r_squared is undefined for a constant truth field")
    return float(1.0 - np.sum((truth - pred) ** 2) / tss)


@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray  # top-k, nonincreasing
    trace: float  # trace of the sample covariance
    reference: "SpectrumReport | None" = field(default=None, repr=False)

    @property
    def retained_energy_curve(self) -> np.ndarray:
        """Cumulative fractions of the sample-covariance trace."""
        if self.trace <= 0:
            return np.zeros_like(self.eigenvalues)
        return np.cumsum(self.eigenvalues) / self.trace

    def relative_curve(self, total: float) -> np.ndarray:
        """Cumulative fractions against an externally supplied total (e.g. a truncated prior)."""
        return np.cumsum(self.eigenvalues) / total


def dataset_spectrum(samples, k: int) -> SpectrumReport:
    """Top-k eigenvalues of the sample covariance (divisor n-1) of flattened fields.

    ``samples`` is (n, ny, nx) or (n, p). Uses the n x n Gram matrix when it is
    smaller than the p x p covariance; nonzero spectra coincide.
    """
    x = np.asarray(samples, dtype=float)
    n = x.shape[0]
    if n < 2:
        raise ValueError("dataset_spectrum needs at least 2 samples")
    x = x.reshape(n, -1)
    x = x - x.mean(axis=0)
    if n <= x.shape[1]:
        w = np.linalg.eigvalsh(x @ x.T / (n - 1))
    else:
        w = np.linalg.eigvalsh(x.T @ x / (n - 1))
    w = np.clip(w[::-1], 0.0, None)
    trace = float(np.sum(x**2) / (n - 1))
    top = np.zeros(k)
    top[: min(k, w.size)] = w[:k]
    return SpectrumReport(eigenvalues=top, trace=trace)


@dataclass
class ConsistencyReport:
    rmse: np.ndarray  # per sample, NaN where the solve failed
    ssim: np.ndarray
    failed: np.ndarray  # bool per sample

    @property
    def mean_rmse(self) -> float:
        ok = ~self.failed
        return float(np.mean(self.rmse[ok])) if ok.any() else float("nan")

    @property
    def mean_ssim(self) -> float:
        ok = ~self.failed
        return float(np.mean(self.ssim[ok])) if ok.any() else float("nan")


def consistency_check(samples, bc, grid, q=None, solver_cfg=None) -> ConsistencyReport:
    """Compare each sample's h channel with the solver's h for that sample's lnK channel.

    ``samples`` are generated fields in physical units, (n, 4, ny, nx).
    """
    from .darcy import solve_head
    from .errors import NumericalError

    samples = np.asarray(samples, dtype=float)
    n = samples.shape[0]
    out_rmse = np.full(n, np.nan)
    out_ssim = np.full(n, np.nan)
    failed = np.zeros(n, dtype=bool)
    for s in range(n):
        try:
            h = solve_head(np.exp(samples[s, 0]), bc, grid, q, solver_cfg)
        except (NumericalError, ValueError):
            failed[s] = True
            continue
        out_rmse[s] = rmse(samples[s, 1], h)
        out_ssim[s] = ssim(samples[s, 1], h)
    return ConsistencyReport(out_rmse, out_ssim, failed)
