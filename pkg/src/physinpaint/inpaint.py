"""Latent-space inpainting: fit z so G(z) honors point measurements of lnK and h.

The objective per latent vector is ``L_c + lambda_p * L_p`` with an L1 context
loss over observed pixels and the prior loss ``-D(G(z))``. Restarts are packed
into one batch; Adam is elementwise and every row's loss depends only on its
own z, so this is the same as running them one after another.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .errors import ConfigError, DivergenceError, ShapeError
from .grid import HEAD, LNK, Normalization
from .kl import CovarianceSpec, KLBasis


@dataclass(frozen=True)
class MeasurementSet:
    """Point observations; positions are (i, j) = (column, row) pairs."""

    nx: int
    ny: int
    pos_K: tuple[tuple[int, int], ...]
    values_K: tuple[float, ...]
    pos_h: tuple[tuple[int, int], ...]
    values_h: tuple[float, ...]
    seed: int | None = None

    def __post_init__(self):
        for name, pos, vals in (("K", self.pos_K, self.values_K), ("h", self.pos_h, self.values_h)):
            if len(pos) != len(vals):
                raise ShapeError(f"{len(pos)} {name} positions but {len(vals)} values")
            if len(set(pos)) != len(pos):
                raise ShapeError(f"duplicate {name} observation positions")
            for i, j in pos:
                if not (0 <= i < self.nx and 0 <= j < self.ny):
                    raise ShapeError(f"{name} observation ({i}, {j}) outside {self.nx}x{self.ny} grid")

    @property
    def n_K(self) -> int:
        return len(self.pos_K)

    @property
    def n_h(self) -> int:
        return len(self.pos_h)

    def mask(self, channel: str) -> np.ndarray:
        m = np.zeros((self.ny, self.nx))
        for i, j in self.pos_K if channel == "K" else self.pos_h:
            m[j, i] = 1.0
        return m

    @property
    def mask_K(self) -> np.ndarray:
        return self.mask("K")

    @property
    def mask_h(self) -> np.ndarray:
        return self.mask("h")

    def subset(self, n_K: int, n_h: int) -> "MeasurementSet":
        return MeasurementSet(
            self.nx, self.ny, self.pos_K[:n_K], self.values_K[:n_K], self.pos_h[:n_h], self.values_h[:n_h], self.seed
        )


def sample_measurements(truth: np.ndarray, n_K: int, n_h: int, seed: int) -> MeasurementSet:
    """Uniform sampling without replacement, independently for lnK and h pixels."""
    truth = np.asarray(truth, dtype=float)
    if truth.ndim != 3 or truth.shape[0] != 4:
        raise ShapeError(f"truth must be (4, ny, nx), got {truth.shape}")
    ny, nx = truth.shape[1:]
    if not (0 <= n_K <= nx * ny and 0 <= n_h <= nx * ny):
        raise ConfigError(f"cannot draw {n_K} K / {n_h} h points from {nx * ny} pixels")
    rng = np.random.default_rng(seed)
    flat_K = rng.choice(nx * ny, size=n_K, replace=False)
    flat_h = rng.choice(nx * ny, size=n_h, replace=False)
    pos_K = tuple((int(p % nx), int(p // nx)) for p in flat_K)
    pos_h = tuple((int(p % nx), int(p // nx)) for p in flat_h)
    return MeasurementSet(
        nx,
        ny,
        pos_K,
        tuple(float(truth[LNK, j, i]) for i, j in pos_K),
        pos_h,
        tuple(float(truth[HEAD, j, i]) for i, j in pos_h),
        seed,
    )


def write_measurements(meas: MeasurementSet, path) -> None:
    lines = [
        "# physinpaint measurements v1",
        f"# nx {meas.nx} ny {meas.ny} seed {'none' if meas.seed is None else meas.seed}",
        "# channel i j value",
    ]
    lines += [f"K {i} {j} {v!r}" for (i, j), v in zip(meas.pos_K, meas.values_K)]
    lines += [f"h {i} {j} {v!r}" for (i, j), v in zip(meas.pos_h, meas.values_h)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_measurements(path) -> MeasurementSet:
    text = Path(path).read_text().splitlines()
    header = [ln for ln in text if ln.startswith("#")]
    fields = None
    for ln in header:
        parts = ln[1:].split()
        if parts and parts[0] == "nx":
            fields = dict(zip(parts[::2], parts[1::2]))
    if fields is None:
        raise ConfigError(f"{path}: missing grid header line")
    pos = {"K": [], "h": []}
    vals = {"K": [], "h": []}
    for ln in text:
        if not ln.strip() or ln.startswith("#"):
            continue
        tag, i, j, v = ln.split()
        if tag not in pos:
            raise ConfigError(f"{path}: unknown channel tag {tag!r}")
        pos[tag].append((int(i), int(j)))
        vals[tag].append(float(v))
    seed = None if fields.get("seed", "none") == "none" else int(fields["seed"])
    return MeasurementSet(
        int(fields["nx"]), int(fields["ny"]), tuple(pos["K"]), tuple(vals["K"]), tuple(pos["h"]), tuple(vals["h"]), seed
    )


class _Gather:
    """Index tensors for the observed pixels of one measurement set."""

    def __init__(self, meas: MeasurementSet, dtype):
        self.jK = torch.tensor([j for _, j in meas.pos_K], dtype=torch.long)
        self.iK = torch.tensor([i for i, _ in meas.pos_K], dtype=torch.long)
        self.vK = torch.tensor(meas.values_K, dtype=dtype)
        self.jh = torch.tensor([j for _, j in meas.pos_h], dtype=torch.long)
        self.ih = torch.tensor([i for i, _ in meas.pos_h], dtype=torch.long)
        self.vh = torch.tensor(meas.values_h, dtype=dtype)

    def loss(self, sample: torch.Tensor) -> torch.Tensor:
        lk = (sample[:, LNK, self.jK, self.iK] - self.vK).abs().sum(dim=1)
        lh = (sample[:, HEAD, self.jh, self.ih] - self.vh).abs().sum(dim=1)
        return lk + lh


def context_loss(sample, meas: MeasurementSet) -> torch.Tensor:
    """||M_K . (lnK - K_obs)||_1 + ||M_h . (h - h_obs)||_1; per sample for batched input."""
    if not isinstance(sample, torch.Tensor):
        sample = torch.as_tensor(np.asarray(sample, dtype=float))
    single = sample.ndim == 3
    if single:
        sample = sample[None]
    if sample.ndim != 4 or sample.shape[1] != 4 or tuple(sample.shape[2:]) != (meas.ny, meas.nx):
        raise ShapeError(f"sample shape {tuple(sample.shape)} does not match a {meas.ny}x{meas.nx} measurement grid")
    out = _Gather(meas, sample.dtype).loss(sample)
    return out[0] if single else out


@dataclass
class LatentModel:
    """A frozen generator (physical units) and optional critic score, both as functions of z."""

    z_dim: int
    generate: Callable[[torch.Tensor], torch.Tensor]
    score: Callable[[torch.Tensor], torch.Tensor] | None = None
    dtype: torch.dtype = torch.float32

    @classmethod
    def from_networks(cls, g, d, normalization: Normalization) -> "LatentModel":
        g.eval()
        d.eval()
        for p in list(g.parameters()) + list(d.parameters()):
            p.requires_grad_(False)
        dtype = next(g.parameters()).dtype

        def generate(z):
            return normalization.denormalize(g(z))

        def score(z):
            return d(g(z))

        return cls(g.cfg.z_dim, generate, score, dtype)

    @classmethod
    def kl_decoder(cls, basis: KLBasis, cov: CovarianceSpec, dtype=torch.float64) -> "LatentModel":
        """Linear generator lnK = mu + Phi sqrt(Lambda) z; other channels zero, no critic."""
        w = torch.tensor(basis.eigenvectors * np.sqrt(basis.eigenvalues), dtype=dtype)
        ny, nx = basis.grid.shape

        def generate(z):
            lnk = (cov.mu + z @ w.T).view(-1, 1, ny, nx)
            return torch.cat([lnk, torch.zeros(z.shape[0], 3, ny, nx, dtype=dtype)], dim=1)

        return cls(basis.truncation, generate, None, dtype)


def prior_loss(model: LatentModel, z: torch.Tensor) -> torch.Tensor:
    """-D(G(z)) per latent vector (zero when the model has no critic)."""
    if model.score is None:
        return torch.zeros(z.shape[0], dtype=z.dtype)
    return -model.score(z)


@dataclass(frozen=True)
class InpaintConfig:
    lambda_p: float = 0.1
    learning_rate: float = 1e-2
    max_iterations: int = 3000
    restarts: int = 10
    seed: int = 0
    # learning rate reaches learning_rate * lr_decay at the last iteration (1.0 = constant)
    lr_decay: float = 1.0

    def __post_init__(self):
        if self.lambda_p < 0:
            raise ConfigError("lambda_p must be nonnegative")
        if self.restarts < 1 or self.max_iterations < 0:
            raise ConfigError("restarts must be >= 1 and max_iterations >= 0")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError("lr_decay must lie in (0, 1]")


@dataclass
class OptimizeResult:
    z: np.ndarray  # (R, z_dim) best iterates
    best_loss: np.ndarray  # (R,)
    trace: np.ndarray  # (iterations + 1, R) loss at each evaluated iterate
    failed: np.ndarray  # (R,) bool


def initial_latents(z_dim: int, restarts: int, seed: int, dtype=torch.float32) -> torch.Tensor:
    """One standard-normal draw per restart, each from its own spawned seed."""
    children = np.random.SeedSequence(seed).spawn(restarts)
    rows = [
        torch.randn(z_dim, generator=torch.Generator().manual_seed(int(c.generate_state(1)[0])), dtype=dtype)
        for c in children
    ]
    return torch.stack(rows)


def optimize_latents(model: LatentModel, meas: MeasurementSet, cfg: InpaintConfig, z0: torch.Tensor) -> OptimizeResult:
    """Adam on L_c + lambda_p * L_p for every row of ``z0``; keeps each row's best iterate."""
    if meas.n_K + meas.n_h == 0:
        raise ConfigError("measurement set is empty")
    gather = _Gather(meas, model.dtype)
    z = z0.detach().clone().to(model.dtype).requires_grad_(True)
    opt = torch.optim.Adam([z], lr=cfg.learning_rate)
    gamma = cfg.lr_decay ** (1.0 / max(cfg.max_iterations, 1))
    sched = torch.optim.lr_scheduler.ExponentialLR(opt, gamma)
    r = z.shape[0]
    best = np.full(r, np.inf)
    best_z = z.detach().clone()
    failed = np.zeros(r, dtype=bool)
    trace = []
    for it in range(cfg.max_iterations + 1):
        sample = model.generate(z)
        loss = gather.loss(sample)
        if cfg.lambda_p > 0:
            loss = loss + cfg.lambda_p * prior_loss(model, z)
        values = loss.detach().double().numpy().copy()
        bad = ~np.isfinite(values)
        failed |= bad
        values[failed] = np.nan
        trace.append(values)
        improved = (~failed) & (values < best)
        if improved.any():
            best[improved] = values[improved]
            best_z[torch.from_numpy(improved)] = z.detach()[torch.from_numpy(improved)]
        if failed.all():
            break
        if it == cfg.max_iterations:
            break
        ok = torch.from_numpy(~failed)
        opt.zero_grad(set_to_none=True)
        loss[ok].sum().backward()
        opt.step()
        sched.step()
    return OptimizeResult(best_z.numpy(), best, np.array(trace), failed)


def optimize_z(model: LatentModel, meas: MeasurementSet, cfg: InpaintConfig, z0=None) -> tuple[np.ndarray, np.ndarray]:
    """Single run; returns (best z, loss trace). Raises on a non-finite loss."""
    if z0 is None:
        z0 = initial_latents(model.z_dim, 1, cfg.seed, model.dtype)
    else:
        z0 = torch.as_tensor(np.asarray(z0), dtype=model.dtype).reshape(1, -1)
    res = optimize_latents(model, meas, cfg, z0)
    if res.failed[0]:
        raise DivergenceError("inpainting loss became non-finite")
    return res.z[0], res.trace[:, 0]


@dataclass
class InpaintResult:
    mean: np.ndarray  # (4, ny, nx) pixelwise mean over successful restarts
    samples: np.ndarray  # (R, 4, ny, nx)
    z: np.ndarray
    best_loss: np.ndarray
    failed: np.ndarray
    traces: np.ndarray = field(repr=False)


def inpaint(model: LatentModel, meas: MeasurementSet, cfg: InpaintConfig) -> InpaintResult:
    z0 = initial_latents(model.z_dim, cfg.restarts, cfg.seed, model.dtype)
    res = optimize_latents(model, meas, cfg, z0)
    with torch.no_grad():
        samples = model.generate(torch.as_tensor(res.z, dtype=model.dtype)).double().numpy()
    ok = ~res.failed
    mean = samples[ok].mean(axis=0) if ok.any() else np.full(samples.shape[1:], math.nan)
    return InpaintResult(mean, samples, res.z, res.best_loss, res.failed, res.trace)
