"""Convolutional generator and critic.

Generator: FC(z -> 4d x ny/8 x nx/8) -> 3x [BN -> ReLU -> ConvT(k4, s2), channels halved]
-> BN -> ReLU -> ConvT(k3, s1) to 4 linear output channels.
Critic: 3x [Conv(k4, s2), channels doubled -> LeakyReLU(0.2) -> Dropout] -> FC to a scalar.
No batch-norm in the critic: the gradient penalty is a per-sample quantity.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
from torch import nn

from .errors import ConfigError, ShapeError

N_CHANNELS = 4


@dataclass(frozen=True)
class NetworkConfig:
    nx: int = 16
    ny: int = 16
    z_dim: int = 32
    base_channels: int = 16
    kernel_size: int = 4
    stride: int = 2
    dropout_rate: float = 0.3
    leaky_slope: float = 0.2
    bn_momentum: float = 0.99  # running = momentum * running + (1 - momentum) * batch

    def __post_init__(self):
        if self.nx % 8 or self.ny % 8:
            raise ConfigError(f"grid {self.ny}x{self.nx} must be divisible by 8 (three stride-2 stages)")
        if self.z_dim < 1 or self.base_channels < 2:
            raise ConfigError("z_dim must be >= 1 and base_channels >= 2")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        if self.kernel_size != 4 or self.stride != 2:
            raise ConfigError("only kernel_size=4, stride=2 stages are supported")

    def to_dict(self) -> dict:
        return asdict(self)


class Generator(nn.Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.base_channels
        self.h0, self.w0 = cfg.ny // 8, cfg.nx // 8
        self.c0 = 4 * d
        self.fc = nn.Linear(cfg.z_dim, self.c0 * self.h0 * self.w0)
        mom = 1.0 - cfg.bn_momentum
        layers: list[nn.Module] = []
        c = self.c0
        for _ in range(3):
            c_out = max(c // 2, 1)
            layers += [
                nn.BatchNorm2d(c, momentum=mom),
                nn.ReLU(),
                nn.ConvTranspose2d(c, c_out, cfg.kernel_size, cfg.stride, padding=1),
            ]
            c = c_out
        layers += [
            nn.BatchNorm2d(c, momentum=mom),
            nn.ReLU(),
            nn.ConvTranspose2d(c, N_CHANNELS, 3, 1, padding=1),
        ]
        self.body = nn.Sequential(*layers)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.ndim != 2 or z.shape[1] != self.cfg.z_dim:
            raise ShapeError(f"latent batch must be (B, {self.cfg.z_dim}), got {tuple(z.shape)}")
        x = self.fc(z).view(-1, self.c0, self.h0, self.w0)
        return self.body(x)


class Discriminator(nn.Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.base_channels
        chans = [N_CHANNELS, d, 2 * d, 4 * d]
        layers: list[nn.Module] = []
        for c_in, c_out in zip(chans[:-1], chans[1:]):
            layers += [
                nn.Conv2d(c_in, c_out, cfg.kernel_size, cfg.stride, padding=1),
                nn.LeakyReLU(cfg.leaky_slope),
                nn.Dropout(cfg.dropout_rate),
            ]
        self.body = nn.Sequential(*layers)
        self.fc = nn.Linear(chans[-1] * (cfg.ny // 8) * (cfg.nx // 8), 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        expected = (N_CHANNELS, self.cfg.ny, self.cfg.nx)
        if x.ndim != 4 or tuple(x.shape[1:]) != expected:
            raise ShapeError(f"critic input must be (B, {expected}), got {tuple(x.shape)}")
        return self.fc(self.body(x).flatten(1)).squeeze(1)


def build_networks(cfg: NetworkConfig, seed: int, dtype=torch.float32) -> tuple[Generator, Discriminator]:
    torch.manual_seed(seed)
    g = Generator(cfg).to(dtype)
    d = Discriminator(cfg).to(dtype)
    return g, d
