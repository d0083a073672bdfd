"""U-Net image-to-image network."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn

from .errors import ConfigError


@dataclass(frozen=True)
class UNetConfig:
    """U-Net hyperparameters.

    Each level has two 3x3 conv + ReLU layers; downsampling is 2x max-pool,
    upsampling is nearest-neighbour followed by a 3x3 conv, and skips are
    concatenated. The output layer is a linear 1x1 conv. ``value_scale``
    divides the input and multiplies the output so the convolutions work on
    roughly unit-range data.
    """

    depth: int = 4
    base_channels: int = 32
    kernel_size: int = 3
    value_scale: float = 255.0

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if self.base_channels < 1:
            raise ConfigError("base_channels must be >= 1")
        if self.kernel_size != 3:
            raise ConfigError("only kernel_size 3 is supported")
        if not self.value_scale > 0:
            raise ConfigError("value_scale must be positive")

    @property
    def multiple(self) -> int:
        return 2**self.depth

    def to_dict(self) -> dict:
        return asdict(self)


def _double_conv(c_in, c_out):
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, 3, padding=1),
        nn.ReLU(inplace=True),
        nn.Conv2d(c_out, c_out, 3, padding=1),
        nn.ReLU(inplace=True),
    )


class UNet(nn.Module):
    def __init__(self, cfg: UNetConfig):
        super().__init__()
        self.cfg = cfg
        ch = [cfg.base_channels * 2**i for i in range(cfg.depth + 1)]
        self.down = nn.ModuleList()
        c_prev = 1
        for i in range(cfg.depth):
            self.down.append(_double_conv(c_prev, ch[i]))
            c_prev = ch[i]
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = _double_conv(ch[-2], ch[-1])
        self.up = nn.ModuleList()
        self.dec = nn.ModuleList()
        for i in reversed(range(cfg.depth)):
            self.up.append(nn.Sequential(
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv2d(ch[i + 1], ch[i], 3, padding=1),
            ))
            self.dec.append(_double_conv(2 * ch[i], ch[i]))
        self.out = nn.Conv2d(ch[0], 1, 1)

    def forward(self, x):
        h, w = x.shape[-2:]
        m = self.cfg.multiple
        if h % m or w % m:
            raise ConfigError(f"input {h}x{w} not divisible by 2^{self.cfg.depth}")
        s = self.cfg.value_scale
        h = x / s
        skips = []
        for block in self.down:
            h = block(h)
            skips.append(h)
            h = self.pool(h)
        h = self.bottleneck(h)
        for up, dec, skip in zip(self.up, self.dec, reversed(skips)):
            h = dec(torch.cat([up(h), skip], dim=1))
        return self.out(h) * s


def build_unet(cfg: UNetConfig, seed: int = 0, dtype=torch.float32) -> UNet:
    """Construct a U-Net with initialization drawn from a private seeded stream."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = UNet(cfg)
    return net.to(dtype)


def parameter_count(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())


def expected_parameter_count(cfg: UNetConfig) -> int:
    """Closed-form parameter count (weights + biases) for ``UNet(cfg)``."""
    k2 = cfg.kernel_size**2
    ch = [cfg.base_channels * 2**i for i in range(cfg.depth + 1)]

    def conv(c_in, c_out, k=k2):
        return k * c_in * c_out + c_out

    total = 0
    c_prev = 1
    for i in range(cfg.depth):
        total += conv(c_prev, ch[i]) + conv(ch[i], ch[i])
        c_prev = ch[i]
    total += conv(ch[-2], ch[-1]) + conv(ch[-1], ch[-1])
    for i in range(cfg.depth):
        total += conv(ch[i + 1], ch[i]) + conv(2 * ch[i], ch[i]) + conv(ch[i], ch[i])
    return total + conv(ch[0], 1, k=1)
