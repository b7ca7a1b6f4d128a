"""Grid, boundary and field-stack containers.

Fields are plain ``numpy`` arrays of shape ``(ny, nx)``: row ``j`` runs along
x2 (bottom to top), column ``i`` along x1 (left to right), so the flattened
index is ``j * nx + i``. Images and solver unknowns share that layout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import GridError, ShapeError

CHANNELS = ("lnK", "h", "F1", "F2")
LNK, HEAD, FLUX1, FLUX2 = range(4)


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int
    lx: float
    ly: float

    def __post_init__(self):
        if int(self.nx) < 3 or int(self.ny) < 3:
            raise GridError(f"grid must be at least 3x3, got nx={self.nx}, ny={self.ny}")
        if not (self.lx > 0 and self.ly > 0):
            raise GridError(f"domain lengths must be positive, got lx={self.lx}, ly={self.ly}")
        object.__setattr__(self, "nx", int(self.nx))
        object.__setattr__(self, "ny", int(self.ny))
        object.__setattr__(self, "lx", float(self.lx))
        object.__setattr__(self, "ly", float(self.ly))

    @property
    def dx(self) -> float:
        return self.lx / self.nx

    @property
    def dy(self) -> float:
        return self.ly / self.ny

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    def x_centers(self) -> np.ndarray:
        return (np.arange(self.nx) + 0.5) * self.dx

    def y_centers(self) -> np.ndarray:
        return (np.arange(self.ny) + 0.5) * self.dy

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-center coordinates, each of shape (ny, nx)."""
        return np.meshgrid(self.x_centers(), self.y_centers())

    def check_field(self, values, name: str = "field") -> np.ndarray:
        arr = np.asarray(values, dtype=float)
        if arr.shape != self.shape:
            raise ShapeError(f"{name} has shape {arr.shape}, grid expects {self.shape}")
        return arr


def make_grid(nx: int, ny: int, lx: float, ly: float) -> GridSpec:
    return GridSpec(nx, ny, lx, ly)


def flatten_index(grid: GridSpec, i: int, j: int) -> int:
    if not (0 <= i < grid.nx and 0 <= j < grid.ny):
        raise IndexError(f"cell ({i}, {j}) outside {grid.nx}x{grid.ny} grid")
    return j * grid.nx + i


@dataclass(frozen=True)
class BoundarySpec:
    """Left/right Dirichlet heads and top/bottom Neumann fluxes.

    Fluxes are outward normal Darcy fluxes F.n, so in the F2 channel the top
    edge carries ``top_flux`` and the bottom edge carries ``-bottom_flux``.
    Left/right may be switched to Neumann (``left_flux``/``right_flux``) by
    dropping them from ``dirichlet``.
    """

    left_h: float = 1.0
    right_h: float = 0.0
    top_flux: float = 0.0
    bottom_flux: float = 0.0
    left_flux: float = 0.0
    right_flux: float = 0.0
    dirichlet: tuple[str, ...] = ("left", "right")

    def __post_init__(self):
        sides = tuple(self.dirichlet)
        bad = set(sides) - {"left", "right", "top", "bottom"}
        if bad:
            raise GridError(f"unknown boundary sides {sorted(bad)}")
        if set(sides) - {"left", "right"}:
            raise GridError("only left/right sides can be Dirichlet")
        object.__setattr__(self, "dirichlet", sides)

    @property
    def neumann(self) -> tuple[str, ...]:
        return tuple(s for s in ("left", "right", "top", "bottom") if s not in self.dirichlet)

    def to_dict(self) -> dict:
        return {
            "left_h": self.left_h,
            "right_h": self.right_h,
            "top_flux": self.top_flux,
            "bottom_flux": self.bottom_flux,
            "left_flux": self.left_flux,
            "right_flux": self.right_flux,
            "dirichlet": list(self.dirichlet),
        }


@dataclass
class FieldStack:
    """A batch of 4-channel samples ``(n, 4, ny, nx)`` in physical units."""

    grid: GridSpec
    data: np.ndarray
    channels: tuple[str, ...] = field(default=CHANNELS)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 3:
            data = data[None]
        if data.ndim != 4 or data.shape[1:] != (4, self.grid.ny, self.grid.nx):
            raise ShapeError(
                f"field stack shape {data.shape} does not match (n, 4, {self.grid.ny}, {self.grid.nx})"
            )
        if tuple(self.channels) != CHANNELS:
            raise ShapeError(f"channel order must be {CHANNELS}")
        if not np.all(np.isfinite(data)):
            raise ShapeError("field stack contains non-finite values")
        self.data = data

    def __len__(self) -> int:
        return self.data.shape[0]

    def channel(self, name: str) -> np.ndarray:
        return self.data[:, CHANNELS.index(name)]


@dataclass(frozen=True)
class Normalization:
    """Per-channel standardization: ``standardized = (physical - mean) / std``."""

    mean: tuple[float, float, float, float]
    std: tuple[float, float, float, float]

    def __post_init__(self):
        mean = tuple(float(v) for v in self.mean)
        std = tuple(float(v) for v in self.std)
        if len(mean) != 4 or len(std) != 4:
            raise ShapeError("normalization needs one mean/std per channel")
        if not all(np.isfinite(mean)) or not all(np.isfinite(std)) or min(std) <= 0:
            raise ShapeError("normalization statistics must be finite with std > 0")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @classmethod
    def identity(cls) -> "Normalization":
        return cls((0.0,) * 4, (1.0,) * 4)

    @classmethod
    def fit(cls, data: np.ndarray) -> "Normalization":
        data = np.asarray(data, dtype=np.float64)
        return cls(tuple(data.mean(axis=(0, 2, 3))), tuple(data.std(axis=(0, 2, 3))))

    def _shaped(self, values, like):
        if isinstance(like, torch.Tensor):
            return torch.tensor(values, dtype=like.dtype, device=like.device).view(1, 4, 1, 1)
        return np.asarray(values).reshape(1, 4, 1, 1)

    def normalize(self, x):
        return (x - self._shaped(self.mean, x)) / self._shaped(self.std, x)

    def denormalize(self, x):
        return x * self._shaped(self.std, x) + self._shaped(self.mean, x)

    def to_dict(self) -> dict:
        return {"mean": list(self.mean), "std": list(self.std)}
