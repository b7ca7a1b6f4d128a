"""Experiment configuration: nested sections loaded from YAML/JSON, unknown keys rejected."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .darcy import SolverConfig
from .errors import ConfigError
from .grid import BoundarySpec, GridSpec
from .inpaint import InpaintConfig
from .kl import CovarianceSpec
from .nets import NetworkConfig
from .wgan import TrainConfig

CONFIG_DIR = Path(__file__).parent / "configs"


@dataclass(frozen=True)
class GridSection:
    nx: int = 16
    ny: int = 16
    lx: float = 2.0
    ly: float = 2.0


@dataclass(frozen=True)
class NetworkSection:
    z_dim: int = 32
    base_channels: int = 16
    kernel_size: int = 4
    stride: int = 2
    dropout_rate: float = 0.3
    leaky_slope: float = 0.2
    bn_momentum: float = 0.99


@dataclass(frozen=True)
class DatasetSection:
    size: int = 2000
    seed: int = 0
    kl_truncation: int = 64


@dataclass(frozen=True)
class EvalSection:
    n_samples: int = 500
    seed: int = 12345


@dataclass(frozen=True)
class TruthSection:
    """Held-out ground truths for inpainting: fresh KL draws, never in the training set."""

    count: int = 5
    seed: int = 987654


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "toy"
    grid: GridSection = field(default_factory=GridSection)
    covariance: CovarianceSpec = field(default_factory=lambda: CovarianceSpec(kernel="exponential"))
    boundary: BoundarySpec = field(default_factory=BoundarySpec)
    solver: SolverConfig = field(default_factory=SolverConfig)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    network: NetworkSection = field(default_factory=NetworkSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    inpaint: InpaintConfig = field(default_factory=InpaintConfig)
    evaluation: EvalSection = field(default_factory=EvalSection)
    truth: TruthSection = field(default_factory=TruthSection)
    cases: tuple[tuple[int, int], ...] = ((3, 0), (3, 5), (5, 0), (5, 10), (10, 0), (10, 20), (10, 30), (15, 30))
    zdim_study: tuple[int, ...] = (4, 8, 16, 32, 48)
    zdim_case: tuple[int, int] = (5, 10)
    checkpoint_every: int = 5000

    @property
    def grid_spec(self) -> GridSpec:
        return GridSpec(self.grid.nx, self.grid.ny, self.grid.lx, self.grid.ly)

    def network_config(self, z_dim: int | None = None) -> NetworkConfig:
        kw = dataclasses.asdict(self.network)
        if z_dim is not None:
            kw["z_dim"] = z_dim
        return NetworkConfig(nx=self.grid.nx, ny=self.grid.ny, **kw)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Override every stochastic site's base seed with ``seed``-derived values."""
        return dataclasses.replace(
            self,
            dataset=dataclasses.replace(self.dataset, seed=seed),
            train=dataclasses.replace(self.train, seed=seed),
            inpaint=dataclasses.replace(self.inpaint, seed=seed),
            evaluation=dataclasses.replace(self.evaluation, seed=seed + 1),
            truth=dataclasses.replace(self.truth, seed=seed + 2),
        )

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["boundary"]["dirichlet"] = list(self.boundary.dirichlet)
        out["cases"] = [list(c) for c in self.cases]
        out["zdim_study"] = list(self.zdim_study)
        out["zdim_case"] = list(self.zdim_case)
        return out


_SECTIONS = {
    "grid": GridSection,
    "covariance": CovarianceSpec,
    "boundary": BoundarySpec,
    "solver": SolverConfig,
    "dataset": DatasetSection,
    "network": NetworkSection,
    "train": TrainConfig,
    "inpaint": InpaintConfig,
    "evaluation": EvalSection,
    "truth": TruthSection,
}


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = dict(data)
    if cls is BoundarySpec and "dirichlet" in kwargs:
        kwargs["dirichlet"] = tuple(kwargs["dirichlet"])
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown top-level keys {unknown}")
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS:
            kwargs[key] = _build(_SECTIONS[key], value, key)
        elif key == "cases":
            kwargs[key] = tuple((int(a), int(b)) for a, b in value)
        elif key == "zdim_study":
            kwargs[key] = tuple(int(v) for v in value)
        elif key == "zdim_case":
            kwargs[key] = (int(value[0]), int(value[1]))
        else:
            kwargs[key] = value
    try:
        cfg = ExperimentConfig(**kwargs)
        validate(cfg)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    grid = cfg.grid_spec  # raises on bad sizes
    if not 1 <= cfg.dataset.kl_truncation <= grid.size:
        raise ConfigError(f"kl_truncation must lie in [1, {grid.size}]")
    if cfg.dataset.size < 0:
        raise ConfigError("dataset size must be >= 0")
    cfg.network_config()  # raises on grids not divisible by 8
    for n_k, n_h in cfg.cases:
        if n_k < 0 or n_h < 0 or n_k + n_h == 0:
            raise ConfigError(f"case ({n_k}, {n_h}) must request at least one measurement")
        if max(n_k, n_h) > grid.size:
            raise ConfigError(f"case ({n_k}, {n_h}) exceeds the {grid.size}-pixel grid")


def load_config(path) -> ExperimentConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return from_dict(data or {})


def preset(scale: str) -> ExperimentConfig:
    path = CONFIG_DIR / f"{scale}.yaml"
    if not path.exists():
        raise ConfigError(f"unknown scale {scale!r}; available: toy, paper")
    return load_config(path)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
