"""Physics-informed GAN inpainting of subsurface flow fields.

Karhunen-Loeve sampling of log-conductivity, a finite-volume Darcy solver,
Sobel-based physics losses, a WGAN-GP generator and latent-space inpainting.
"""

from .errors import ConfigError, DivergenceError, GridError, NumericalError, ShapeError
from .grid import BoundarySpec, GridSpec, Normalization, make_grid

__version__ = "0.1.0"

__all__ = [
    "BoundarySpec",
    "ConfigError",
    "DivergenceError",
    "GridError",
    "GridSpec",
    "Normalization",
    "NumericalError",
    "ShapeError",
    "make_grid",
]
