"""Gaussian-process prior for lnK and its truncated Karhunen-Loeve basis."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.linalg

from .errors import ConfigError, NumericalError, ShapeError
from .grid import GridSpec

# 16384 cells -> 2 GiB dense float64 covariance
MAX_COVARIANCE_CELLS = 16384

KERNELS = ("gaussian", "exponential")


@dataclass(frozen=True)
class CovarianceSpec:
    """Stationary lnK covariance.

    ``kernel="gaussian"``: sigma2 * exp(-(dx^2 / 2 l1^2 + dy^2 / 2 l2^2)).
    ``kernel="exponential"``: sigma2 * exp(-sqrt((dx / l1)^2 + (dy / l2)^2)).
    """

    mu: float = 0.0
    sigma2: float = 1.0
    l1: float = 0.5
    l2: float = 0.5
    kernel: str = "gaussian"

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ConfigError(f"sigma2 must be positive, got {self.sigma2}")
        if not (self.l1 > 0 and self.l2 > 0):
            raise ConfigError(f"correlation lengths must be positive, got {self.l1}, {self.l2}")
        if self.kernel not in KERNELS:
            raise ConfigError(f"kernel must be one of {KERNELS}, got {self.kernel!r}")

    def to_dict(self) -> dict:
        return {"mu": self.mu, "sigma2": self.sigma2, "l1": self.l1, "l2": self.l2, "kernel": self.kernel}


def build_covariance(grid: GridSpec, cov: CovarianceSpec, max_cells: int = MAX_COVARIANCE_CELLS) -> np.ndarray:
    if grid.size > max_cells:
        raise MemoryError(
            f"dense covariance for {grid.size} cells exceeds the cap of {max_cells} cells"
        )
    xx, yy = grid.mesh()
    x = xx.ravel()
    y = yy.ravel()
    sx = (x[:, None] - x[None, :]) / cov.l1
    sy = (y[:, None] - y[None, :]) / cov.l2
    if cov.kernel == "gaussian":
        return cov.sigma2 * np.exp(-0.5 * (sx**2 + sy**2))
    return cov.sigma2 * np.exp(-np.sqrt(sx**2 + sy**2))


@dataclass(frozen=True)
class KLBasis:
    grid: GridSpec
    eigenvalues: np.ndarray  # (m,), nonincreasing, >= 0
    eigenvectors: np.ndarray  # (nx*ny, m), orthonormal columns
    trace: float
    all_eigenvalues: np.ndarray  # full spectrum, nonincreasing

    @property
    def truncation(self) -> int:
        return self.eigenvalues.shape[0]

    def mode(self, i: int) -> np.ndarray:
        return self.eigenvectors[:, i].reshape(self.grid.shape)


def eigendecompose(cov_matrix: np.ndarray, m: int, grid: GridSpec) -> KLBasis:
    cov_matrix = np.asarray(cov_matrix, dtype=float)
    n = cov_matrix.shape[0]
    if cov_matrix.shape != (n, n) or n != grid.size:
        raise ShapeError(f"covariance shape {cov_matrix.shape} does not match grid size {grid.size}")
    if not 1 <= m <= n:
        raise ConfigError(f"truncation m must lie in [1, {n}], got {m}")
    try:
        w, v = scipy.linalg.eigh(cov_matrix, overwrite_a=False, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigensolver failed: {exc}") from exc
    w = w[::-1]
    v = v[:, ::-1][:, :m]
    w = np.where(w < 0, 0.0, w)  # roundoff negatives; covariance is PSD
    # deterministic sign: largest-magnitude entry of each mode is positive
    idx = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[idx, np.arange(m)])
    signs[signs == 0] = 1.0
    v = np.ascontiguousarray(v * signs)
    return KLBasis(
        grid=grid,
        eigenvalues=w[:m].copy(),
        eigenvectors=v,
        trace=float(np.trace(cov_matrix)),
        all_eigenvalues=w,
    )


def kl_basis(grid: GridSpec, cov: CovarianceSpec, m: int) -> KLBasis:
    """Covariance assembly plus eigendecomposition in one call."""
    return eigendecompose(build_covariance(grid, cov), m, grid)


def retained_energy(
    basis: KLBasis,
    k: int,
    denominator: Literal["full_trace", "truncated_total"] = "full_trace",
) -> float:
    if not 1 <= k <= basis.truncation:
        raise ValueError(f"k must lie in [1, {basis.truncation}], got {k}")
    num = float(np.sum(basis.eigenvalues[:k]))
    if denominator == "full_trace":
        return num / basis.trace
    if denominator == "truncated_total":
        return num / float(np.sum(basis.eigenvalues))
    raise ValueError(f"unknown denominator {denominator!r}")


def sample_lnk(basis: KLBasis, cov: CovarianceSpec, z) -> np.ndarray:
    """lnK = mu + sum_i sqrt(lambda_i) phi_i z_i, returned as an (ny, nx) field."""
    z = np.asarray(z, dtype=float)
    if z.shape != (basis.truncation,):
        raise ShapeError(f"z must have length {basis.truncation}, got shape {z.shape}")
    values = cov.mu + basis.eigenvectors @ (np.sqrt(basis.eigenvalues) * z)
    return values.reshape(basis.grid.shape)


def sample_lnk_batch(basis: KLBasis, cov: CovarianceSpec, z) -> np.ndarray:
    """Vectorized ``sample_lnk`` for z of shape (n, m); returns (n, ny, nx)."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 2 or z.shape[1] != basis.truncation:
        raise ShapeError(f"z must have shape (n, {basis.truncation}), got {z.shape}")
    values = cov.mu + (z * np.sqrt(basis.eigenvalues)) @ basis.eigenvectors.T
    return values.reshape((z.shape[0],) + basis.grid.shape)


def truncated_variance(basis: KLBasis) -> np.ndarray:
    """Pointwise variance sum_i lambda_i phi_i(p)^2 of the truncated expansion."""
    return (basis.eigenvectors**2 @ basis.eigenvalues).reshape(basis.grid.shape)
