"""WGAN-GP losses and the physics-augmented training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .errors import ConfigError, DivergenceError, ShapeError
from .grid import BoundarySpec, GridSpec, Normalization
from .nets import Discriminator, Generator, NetworkConfig, build_networks
from .physics import PhysicsLossConfig, SobelKernels, boundary_loss, residual_loss

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    gp_lambda: float = 10.0
    lambda_r: float = 1.0
    lambda_b: float = 10.0
    d_steps_per_g: int = 5
    batch_size: int = 50
    learning_rate: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.9
    total_g_iterations: int = 20000
    seed: int = 0

    def __post_init__(self):
        if self.d_steps_per_g < 1 or self.batch_size < 1:
            raise ConfigError("d_steps_per_g and batch_size must be >= 1")
        if self.total_g_iterations < 0:
            raise ConfigError("total_g_iterations must be >= 0")
        if self.gp_lambda < 0 or self.lambda_r < 0 or self.lambda_b < 0:
            raise ConfigError("loss weights must be nonnegative")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")

    @property
    def physics(self) -> PhysicsLossConfig:
        return PhysicsLossConfig(self.lambda_r, self.lambda_b)

    def to_dict(self) -> dict:
        return asdict(self)


def generator_forward(g: Generator, z: torch.Tensor) -> torch.Tensor:
    """Inference-mode forward: batch-norm uses running statistics."""
    was_training = g.training
    g.eval()
    try:
        return g(z)
    finally:
        g.train(was_training)


def discriminator_forward(d: Discriminator, x: torch.Tensor) -> torch.Tensor:
    return d(x)


def gradient_penalty(d, real: torch.Tensor, fake: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    """mean over samples of (||grad_x D(x_hat)||_2 - 1)^2, x_hat = eps*real + (1-eps)*fake."""
    if real.shape != fake.shape:
        raise ShapeError(f"real {tuple(real.shape)} and fake {tuple(fake.shape)} batches differ")
    eps = eps.reshape(-1, *([1] * (real.ndim - 1))).to(real.dtype)
    if eps.shape[0] != real.shape[0]:
        raise ShapeError("need one interpolation weight per sample")
    x_hat = (eps * real + (1 - eps) * fake).detach().requires_grad_(True)
    out = d(x_hat)
    grad = None
    if out.requires_grad:
        (grad,) = torch.autograd.grad(out.sum(), x_hat, create_graph=True, allow_unused=True)
    if grad is None:  # critic ignores its input
        grad = torch.zeros_like(x_hat)
    norm = torch.linalg.vector_norm(grad.flatten(1), dim=1)
    return ((norm - 1.0) ** 2).mean()


@dataclass
class DLossTerms:
    fake: torch.Tensor
    real: torch.Tensor
    gp: torch.Tensor
    total: torch.Tensor


def d_loss_terms(g, d, real, z, eps, gp_lambda: float) -> DLossTerms:
    with torch.no_grad():
        fake = g(z)
    fake_score = d(fake).mean()
    real_score = d(real).mean()
    gp = gradient_penalty(d, real, fake, eps)
    total = fake_score - real_score + gp_lambda * gp
    return DLossTerms(fake_score, real_score, gp, total)


def d_loss(g, d, real, z, eps, gp_lambda: float = 10.0) -> torch.Tensor:
    """E[D(G(z))] - E[D(real)] + lambda * GP."""
    return d_loss_terms(g, d, real, z, eps, gp_lambda).total


@dataclass
class GLossTerms:
    adversarial: torch.Tensor
    residual: torch.Tensor
    boundary: torch.Tensor
    total: torch.Tensor


def g_loss_terms(
    g,
    d,
    z,
    bc: BoundarySpec,
    kernels: SobelKernels,
    physics_cfg: PhysicsLossConfig,
    normalization: Normalization,
    q=None,
) -> GLossTerms:
    fake = g(z)
    adv = -d(fake).mean()
    physical = normalization.denormalize(fake)
    lr = residual_loss(physical, kernels, q, physics_cfg)
    lb = boundary_loss(physical, bc)
    total = adv + physics_cfg.lambda_r * lr + physics_cfg.lambda_b * lb
    return GLossTerms(adv, lr, lb, total)


def g_loss_physics(g, d, z, bc, kernels, physics_cfg, normalization, q=None) -> torch.Tensor:
    """-E[D(G(z))] + lambda_r * L_r + lambda_b * L_b, physics in de-standardized units."""
    return g_loss_terms(g, d, z, bc, kernels, physics_cfg, normalization, q).total


@dataclass
class TrainResult:
    generator: Generator
    discriminator: Discriminator
    log: list[dict] = field(default_factory=list)
    iteration: int = 0
    opt_g: torch.optim.Optimizer | None = None
    opt_d: torch.optim.Optimizer | None = None


def make_optimizers(g, d, cfg: TrainConfig):
    betas = (cfg.adam_beta1, cfg.adam_beta2)
    opt_g = torch.optim.Adam(g.parameters(), lr=cfg.learning_rate, betas=betas)
    opt_d = torch.optim.Adam(d.parameters(), lr=cfg.learning_rate, betas=betas)
    return opt_g, opt_d


def train(
    data: torch.Tensor,
    train_cfg: TrainConfig,
    net_cfg: NetworkConfig,
    grid: GridSpec,
    bc: BoundarySpec,
    normalization: Normalization,
    q=None,
    networks: tuple[Generator, Discriminator] | None = None,
    optimizers=None,
    start_iteration: int = 0,
    callback=None,
    log_every: int = 0,
) -> TrainResult:
    """Alternate ``d_steps_per_g`` critic updates with one generator update.

    ``data`` holds standardized samples (n, 4, ny, nx). Runs until
    ``train_cfg.total_g_iterations`` generator steps have been taken in total
    (``start_iteration`` counts steps already done when resuming).
    ``callback(iteration, result)`` is invoked after every generator step.
    """
    if data.ndim != 4 or tuple(data.shape[1:]) != (4, net_cfg.ny, net_cfg.nx):
        raise ShapeError(f"training data shape {tuple(data.shape)} does not match network grid {net_cfg.ny}x{net_cfg.nx}")
    if (grid.ny, grid.nx) != (net_cfg.ny, net_cfg.nx):
        raise ShapeError("grid and network configuration disagree")
    n = data.shape[0]
    if train_cfg.total_g_iterations > start_iteration and train_cfg.batch_size > n:
        raise ConfigError(f"batch_size {train_cfg.batch_size} exceeds sample count {n}")

    if networks is None:
        networks = build_networks(net_cfg, train_cfg.seed, dtype=data.dtype)
    g, d = networks
    if optimizers is None:
        optimizers = make_optimizers(g, d, train_cfg)
    opt_g, opt_d = optimizers
    result = TrainResult(g, d, [], start_iteration, opt_g, opt_d)
    if train_cfg.total_g_iterations <= start_iteration:
        return result

    # dropout draws from the global stream; batches, z and eps from a private one
    torch.manual_seed(train_cfg.seed + 1 + start_iteration)
    gen = torch.Generator().manual_seed(train_cfg.seed + start_iteration)
    kernels = SobelKernels.for_grid(grid)
    physics_cfg = train_cfg.physics
    bsz = train_cfg.batch_size
    g.train()
    d.train()

    for it in range(start_iteration, train_cfg.total_g_iterations):
        for _ in range(train_cfg.d_steps_per_g):
            idx = torch.randint(0, n, (bsz,), generator=gen)
            real = data[idx]
            z = torch.randn(bsz, net_cfg.z_dim, generator=gen, dtype=data.dtype)
            eps = torch.rand(bsz, generator=gen, dtype=data.dtype)
            opt_d.zero_grad(set_to_none=True)
            dt = d_loss_terms(g, d, real, z, eps, train_cfg.gp_lambda)
            dt.total.backward()
            opt_d.step()

        z = torch.randn(bsz, net_cfg.z_dim, generator=gen, dtype=data.dtype)
        opt_g.zero_grad(set_to_none=True)
        gt = g_loss_terms(g, d, z, bc, kernels, physics_cfg, normalization, q)
        gt.total.backward()
        opt_g.step()

        row = {
            "iteration": it + 1,
            "d_loss": dt.total.item(),
            "d_fake": dt.fake.item(),
            "d_real": dt.real.item(),
            "gp": dt.gp.item(),
            "g_loss": gt.total.item(),
            "g_adv": gt.adversarial.item(),
            "L_r": gt.residual.item(),
            "L_b": gt.boundary.item(),
        }
        if not all(math.isfinite(v) for v in row.values()):
            raise DivergenceError(f"non-finite loss at iteration {it + 1}", iteration=it + 1, diagnostics=row)
        result.log.append(row)
        result.iteration = it + 1
        if log_every and (it + 1) % log_every == 0:
            log.info("iter %d d_loss %.4f g_loss %.4f L_r %.4g L_b %.4g", it + 1, row["d_loss"], row["g_loss"], row["L_r"], row["L_b"])
        if callback is not None:
            callback(it + 1, result)
    return result


def sample_generator(g: Generator, n: int, seed: int, normalization: Normalization, batch: int = 500) -> np.ndarray:
    """n generated samples in physical units, (n, 4, ny, nx) float64."""
    gen = torch.Generator().manual_seed(seed)
    dtype = next(g.parameters()).dtype
    # one draw for all latents so results do not depend on the batch size
    z_all = torch.randn(n, g.cfg.z_dim, generator=gen, dtype=dtype)
    out = []
    with torch.no_grad():
        for start in range(0, n, batch):
            z = z_all[start : start + batch]
            out.append(normalization.denormalize(generator_forward(g, z)).double().numpy())
    if not out:
        return np.zeros((0, 4, g.cfg.ny, g.cfg.nx))
    return np.concatenate(out)


def critic_gradient_norms(d, real: torch.Tensor, fake: torch.Tensor, seed: int) -> np.ndarray:
    """||grad D|| at fresh interpolates, critic in eval mode (soft Lipschitz diagnostic)."""
    gen = torch.Generator().manual_seed(seed)
    eps = torch.rand(real.shape[0], generator=gen, dtype=real.dtype).view(-1, 1, 1, 1)
    was = d.training
    d.eval()
    try:
        x_hat = (eps * real + (1 - eps) * fake).detach().requires_grad_(True)
        (grad,) = torch.autograd.grad(d(x_hat).sum(), x_hat)
    finally:
        d.train(was)
    return torch.linalg.vector_norm(grad.flatten(1), dim=1).numpy()
