"""Steady saturated flow, div(K grad h) + q = 0, on a cell-centered grid.

Two-point flux finite volumes: interior faces use the harmonic mean of the two
adjacent conductivities, Dirichlet faces use the half-cell transmissibility
2K/dx against the prescribed head, Neumann faces contribute their prescribed
outward flux to the right-hand side.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, NonConvergenceError, ShapeError, SingularSystemError
from .grid import BoundarySpec, GridSpec
from .kl import CovarianceSpec, KLBasis, sample_lnk


@dataclass(frozen=True)
class SolverConfig:
    method: str = "direct"  # "direct" | "cg"
    tolerance: float = 1e-10
    max_iterations: int = 20000

    def __post_init__(self):
        if self.method not in ("direct", "cg"):
            raise ConfigError(f"solver method must be 'direct' or 'cg', got {self.method!r}")
        if not self.tolerance > 0:
            raise ConfigError("solver tolerance must be positive")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")


@dataclass(frozen=True)
class LinearSystem:
    grid: GridSpec
    matrix: sp.csr_matrix
    rhs: np.ndarray
    has_dirichlet: bool


def harmonic_mean(a, b):
    return 2.0 * a * b / (a + b)


def _check_inputs(K, grid: GridSpec, q=None):
    K = grid.check_field(K, "K")
    if not np.all(np.isfinite(K)) or np.any(K <= 0):
        raise ConfigError("conductivity must be finite and strictly positive")
    if q is None:
        q = np.zeros(grid.shape)
    else:
        q = grid.check_field(q, "q")
        if not np.all(np.isfinite(q)):
            raise ConfigError("source term must be finite")
    return K, q


def assemble(K, bc: BoundarySpec, grid: GridSpec, q=None) -> LinearSystem:
    K, q = _check_inputs(K, grid, q)
    nx, ny, dx, dy = grid.nx, grid.ny, grid.dx, grid.dy
    idx = np.arange(grid.size).reshape(grid.shape)

    tx = harmonic_mean(K[:, :-1], K[:, 1:]) * dy / dx  # faces between columns, (ny, nx-1)
    ty = harmonic_mean(K[:-1, :], K[1:, :]) * dx / dy  # faces between rows, (ny-1, nx)

    diag = np.zeros(grid.shape)
    diag[:, :-1] += tx
    diag[:, 1:] += tx
    diag[:-1, :] += ty
    diag[1:, :] += ty

    rhs = q * dx * dy
    if "left" in bc.dirichlet:
        tb = 2.0 * K[:, 0] * dy / dx
        diag[:, 0] += tb
        rhs[:, 0] += tb * bc.left_h
    else:
        rhs[:, 0] -= bc.left_flux * dy
    if "right" in bc.dirichlet:
        tb = 2.0 * K[:, -1] * dy / dx
        diag[:, -1] += tb
        rhs[:, -1] += tb * bc.right_h
    else:
        rhs[:, -1] -= bc.right_flux * dy
    rhs[-1, :] -= bc.top_flux * dx
    rhs[0, :] -= bc.bottom_flux * dx

    rows = np.concatenate([idx.ravel(), idx[:, :-1].ravel(), idx[:, 1:].ravel(), idx[:-1, :].ravel(), idx[1:, :].ravel()])
    cols = np.concatenate([idx.ravel(), idx[:, 1:].ravel(), idx[:, :-1].ravel(), idx[1:, :].ravel(), idx[:-1, :].ravel()])
    vals = np.concatenate([diag.ravel(), -tx.ravel(), -tx.ravel(), -ty.ravel(), -ty.ravel()])
    A = sp.csr_matrix((vals, (rows, cols)), shape=(grid.size, grid.size))
    return LinearSystem(grid=grid, matrix=A, rhs=rhs.ravel(), has_dirichlet=bool(bc.dirichlet))


def solve(system: LinearSystem, config: SolverConfig | None = None) -> np.ndarray:
    config = config or SolverConfig()
    if not system.has_dirichlet:
        raise SingularSystemError("no Dirichlet boundary: the pure-Neumann system is singular")
    A, b = system.matrix, system.rhs
    if config.method == "direct":
        h = spla.spsolve(A.tocsc(), b)
    else:
        d = A.diagonal()
        M = spla.LinearOperator(A.shape, matvec=lambda r: r / d)
        h, info = spla.cg(A, b, rtol=config.tolerance, atol=0.0, maxiter=config.max_iterations, M=M)
        if info > 0:
            raise NonConvergenceError(f"CG did not converge in {info} iterations", iterations=info)
        if info < 0:
            raise SingularSystemError("CG breakdown")
    if not np.all(np.isfinite(h)):
        raise SingularSystemError("solution contains non-finite values")
    bnorm = np.linalg.norm(b)
    res = np.linalg.norm(A @ h - b) / (bnorm if bnorm > 0 else 1.0)
    # direct solves are held to the same bound with a roundoff allowance
    bound = config.tolerance if config.method == "cg" else max(config.tolerance, 1e-9)
    if res > bound * 1.0001:
        raise NonConvergenceError(f"relative residual {res:.3e} exceeds {bound:.1e}")
    return h.reshape(system.grid.shape)


def solve_head(K, bc: BoundarySpec, grid: GridSpec, q=None, config: SolverConfig | None = None) -> np.ndarray:
    return solve(assemble(K, bc, grid, q), config)


def face_fluxes(K, h, bc: BoundarySpec, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Darcy fluxes on faces: x-faces (ny, nx+1) and y-faces (ny+1, nx), positive along +x / +y."""
    K = grid.check_field(K, "K")
    h = grid.check_field(h, "h")
    dx, dy = grid.dx, grid.dy
    fx = np.empty((grid.ny, grid.nx + 1))
    fy = np.empty((grid.ny + 1, grid.nx))
    fx[:, 1:-1] = -harmonic_mean(K[:, :-1], K[:, 1:]) * (h[:, 1:] - h[:, :-1]) / dx
    fy[1:-1, :] = -harmonic_mean(K[:-1, :], K[1:, :]) * (h[1:, :] - h[:-1, :]) / dy
    if "left" in bc.dirichlet:
        fx[:, 0] = -2.0 * K[:, 0] * (h[:, 0] - bc.left_h) / dx
    else:
        fx[:, 0] = -bc.left_flux
    if "right" in bc.dirichlet:
        fx[:, -1] = -2.0 * K[:, -1] * (bc.right_h - h[:, -1]) / dx
    else:
        fx[:, -1] = bc.right_flux
    fy[0, :] = -bc.bottom_flux
    fy[-1, :] = bc.top_flux
    return fx, fy


def cell_divergence(fx, fy, grid: GridSpec, q=None) -> np.ndarray:
    """Net outflow per cell minus the integrated source (zero for a conservative solution)."""
    net = (fx[:, 1:] - fx[:, :-1]) * grid.dy + (fy[1:, :] - fy[:-1, :]) * grid.dx
    if q is not None:
        net = net - grid.check_field(q, "q") * grid.dx * grid.dy
    return net


def compute_flux(K, h, bc: BoundarySpec, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Cell-centered (F1, F2): mean of the two bounding face fluxes.

    Edge pixels on Neumann sides carry the prescribed normal flux exactly.
    """
    fx, fy = face_fluxes(K, h, bc, grid)
    f1 = 0.5 * (fx[:, :-1] + fx[:, 1:])
    f2 = 0.5 * (fy[:-1, :] + fy[1:, :])
    f2[0, :] = -bc.bottom_flux
    f2[-1, :] = bc.top_flux
    if "left" not in bc.dirichlet:
        f1[:, 0] = -bc.left_flux
    if "right" not in bc.dirichlet:
        f1[:, -1] = bc.right_flux
    return f1, f2


def solve_sample(lnk, bc: BoundarySpec, grid: GridSpec, q=None, config: SolverConfig | None = None) -> np.ndarray:
    """(lnK, h, F1, F2) stacked as a (4, ny, nx) array."""
    lnk = grid.check_field(lnk, "lnK")
    K = np.exp(lnk)
    h = solve_head(K, bc, grid, q, config)
    f1, f2 = compute_flux(K, h, bc, grid)
    return np.stack([lnk, h, f1, f2])


def generate_pair(
    basis: KLBasis,
    cov: CovarianceSpec,
    bc: BoundarySpec,
    z,
    q=None,
    config: SolverConfig | None = None,
) -> np.ndarray:
    return solve_sample(sample_lnk(basis, cov, z), bc, basis.grid, q, config)
