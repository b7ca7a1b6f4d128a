"""Sobel spatial derivatives and the PDE residual / boundary losses.

Everything here is written in torch so the losses back-propagate into
generator parameters or latent vectors. Inputs are tensors shaped
``(..., ny, nx)`` (fields) or ``(B, 4, ny, nx)`` (samples in physical units).

Convention: ``sobel_x``/``sobel_y`` return +d/dx1 and +d/dx2 where x2 grows
with the row index. Cross-correlating with the raw kernels gives -8*dx times
the slope, hence the ``-1/(8*delta)`` scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigError, GridError, ShapeError
from .grid import FLUX1, FLUX2, HEAD, LNK, BoundarySpec, GridSpec

SOBEL_H = ((1.0, 0.0, -1.0), (2.0, 0.0, -2.0), (1.0, 0.0, -1.0))
SOBEL_V = ((1.0, 2.0, 1.0), (0.0, 0.0, 0.0), (-1.0, -2.0, -1.0))


@dataclass(frozen=True)
class SobelKernels:
    dx: float
    dy: float

    @classmethod
    def for_grid(cls, grid: GridSpec) -> "SobelKernels":
        return cls(grid.dx, grid.dy)

    @property
    def scale_x(self) -> float:
        return 1.0 / (8.0 * self.dx)

    @property
    def scale_y(self) -> float:
        return 1.0 / (8.0 * self.dy)

    def horizontal(self, dtype=torch.float64) -> torch.Tensor:
        return torch.tensor(SOBEL_H, dtype=dtype)

    def vertical(self, dtype=torch.float64) -> torch.Tensor:
        return torch.tensor(SOBEL_V, dtype=dtype)


@dataclass(frozen=True)
class PhysicsLossConfig:
    lambda_r: float = 1.0
    lambda_b: float = 10.0
    interior_crop: bool = True

    def __post_init__(self):
        if self.lambda_r < 0 or self.lambda_b < 0:
            raise ConfigError("physics loss weights must be nonnegative")


def _as_tensor(f) -> torch.Tensor:
    if isinstance(f, torch.Tensor):
        return f
    return torch.as_tensor(np.asarray(f, dtype=float))


def _correlate(f: torch.Tensor, kernel: torch.Tensor) -> torch.Tensor:
    if f.shape[-1] < 3 or f.shape[-2] < 3:
        raise GridError(f"Sobel filtering needs at least 3x3 pixels, got {tuple(f.shape[-2:])}")
    lead = f.shape[:-2]
    x = f.reshape(-1, 1, *f.shape[-2:])
    x = F.pad(x, (1, 1, 1, 1), mode="replicate")
    out = F.conv2d(x, kernel.to(dtype=f.dtype, device=f.device)[None, None])
    return out.reshape(*lead, *f.shape[-2:])


def sobel_x(f, kernels: SobelKernels) -> torch.Tensor:
    f = _as_tensor(f)
    return -kernels.scale_x * _correlate(f, kernels.horizontal(f.dtype))


def sobel_y(f, kernels: SobelKernels) -> torch.Tensor:
    f = _as_tensor(f)
    return -kernels.scale_y * _correlate(f, kernels.vertical(f.dtype))


def interior_mask(ny: int, nx: int, crop: bool = True) -> torch.Tensor:
    mask = torch.ones(ny, nx, dtype=torch.bool)
    if crop:
        mask[0, :] = mask[-1, :] = False
        mask[:, 0] = mask[:, -1] = False
    return mask


def _check_sample(sample) -> torch.Tensor:
    sample = _as_tensor(sample)
    if sample.ndim == 3:
        sample = sample[None]
    if sample.ndim != 4 or sample.shape[1] != 4:
        raise ShapeError(f"expected samples shaped (B, 4, ny, nx), got {tuple(sample.shape)}")
    return sample


def residual_terms(sample, kernels: SobelKernels, q=None) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Pointwise residuals (F1 + K h_x, F2 + K h_y, div F - q), each (B, ny, nx)."""
    sample = _check_sample(sample)
    k = torch.exp(sample[:, LNK])
    h = sample[:, HEAD]
    f1 = sample[:, FLUX1]
    f2 = sample[:, FLUX2]
    r1 = f1 + k * sobel_x(h, kernels)
    r2 = f2 + k * sobel_y(h, kernels)
    div = sobel_x(f1, kernels) + sobel_y(f2, kernels)
    if q is not None:
        q = _as_tensor(q).to(sample.dtype)
        if q.shape[-2:] != sample.shape[-2:]:
            raise ShapeError(f"source term shape {tuple(q.shape)} does not match samples")
        div = div - q
    return r1, r2, div


def residual_loss_per_sample(sample, kernels: SobelKernels, q=None, cfg: PhysicsLossConfig | None = None) -> torch.Tensor:
    cfg = cfg or PhysicsLossConfig()
    r1, r2, r3 = residual_terms(sample, kernels, q)
    mask = interior_mask(r1.shape[-2], r1.shape[-1], cfg.interior_crop).to(r1.device)
    n = int(mask.sum())
    sq = (r1**2 + r2**2 + r3**2)[:, mask]
    return sq.sum(dim=1) / n


def residual_loss(sample, kernels: SobelKernels, q=None, cfg: PhysicsLossConfig | None = None) -> torch.Tensor:
    """Batch mean of (1/N)(||F + K grad h||^2 + ||div F - q||^2) over included pixels."""
    return residual_loss_per_sample(sample, kernels, q, cfg).mean()


def boundary_targets(bc: BoundarySpec) -> dict[str, tuple[int, float]]:
    """Side -> (channel, prescribed value) compared on that side's edge pixels."""
    targets = {
        "top": (FLUX2, bc.top_flux),
        "bottom": (FLUX2, -bc.bottom_flux),
    }
    targets["left"] = (HEAD, bc.left_h) if "left" in bc.dirichlet else (FLUX1, -bc.left_flux)
    targets["right"] = (HEAD, bc.right_h) if "right" in bc.dirichlet else (FLUX1, bc.right_flux)
    return targets


def _edge(sample: torch.Tensor, side: str, channel: int) -> torch.Tensor:
    x = sample[:, channel]
    return {"left": x[:, :, 0], "right": x[:, :, -1], "bottom": x[:, 0, :], "top": x[:, -1, :]}[side]


def boundary_loss_per_sample(sample, bc: BoundarySpec) -> torch.Tensor:
    sample = _check_sample(sample)
    total = 0.0
    m = 0
    for side, (channel, value) in boundary_targets(bc).items():
        edge = _edge(sample, side, channel)
        total = total + ((edge - value) ** 2).sum(dim=1)
        m += edge.shape[1]
    return total / m


def boundary_loss(sample, bc: BoundarySpec) -> torch.Tensor:
    """Batch mean of (1/M)(||h(x_D) - h_D||^2 + ||F(x_N) - F_N||^2) over edge pixels."""
    return boundary_loss_per_sample(sample, bc).mean()
