"""Single-stream generator emitting an image pyramid through side outputs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn


def _is_pow2_multiple(size: int, base: int) -> bool:
    if size < base or size % base:
        return False
    ratio = size // base
    return ratio & (ratio - 1) == 0


@dataclass
class GeneratorConfig:
    scales: tuple[int, ...] = (16, 32, 64)
    repeats: int = 1  # K, residual blocks per stage
    base_spatial: int = 4
    base_channels: int = 256
    halve_at: tuple[int, ...] = (8, 32)
    min_channels: int = 32
    c_dim: int = 128
    z_dim: int = 100

    def __post_init__(self):
        self.scales = tuple(int(s) for s in self.scales)
        self.halve_at = tuple(int(s) for s in self.halve_at)
        if not self.scales:
            raise ValueError("at least one side-output scale is required")
        if any(b <= a for a, b in zip(self.scales, self.scales[1:])):
            raise ValueError(f"scales must be strictly increasing: {self.scales}")
        for s in self.scales:
            if s <= self.base_spatial or not _is_pow2_multiple(s, self.base_spatial):
                raise ValueError(
                    f"scale {s} is not {self.base_spatial}*2^k for some k >= 1")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")

    @classmethod
    def paper_scale(cls, **overrides) -> "GeneratorConfig":
        kw = dict(scales=(64, 128, 256), base_channels=1024,
                  halve_at=(8, 32, 128, 256), min_channels=1)
        kw.update(overrides)
        return cls(**kw)

    @property
    def num_stages(self) -> int:
        return int(math.log2(self.scales[-1] // self.base_spatial)) + 1

    @property
    def stage_sizes(self) -> list[int]:
        return [self.base_spatial * 2 ** j for j in range(self.num_stages)]

    def channel_schedule(self) -> dict[int, int]:
        """Feature-map channels at every stage resolution."""
        sched = {}
        ch = self.base_channels
        for size in self.stage_sizes:
            if size in self.halve_at:
                ch = max(ch // 2, self.min_channels)
            sched[size] = ch
        return sched


def _conv3x3(c_in: int, c_out: int, bias: bool = False) -> nn.Sequential:
    return nn.Sequential(nn.ReflectionPad2d(1), nn.Conv2d(c_in, c_out, 3, bias=bias))


class ResBlock(nn.Module):
    """x + F(x); no activation after the addition."""

    def __init__(self, channels: int):
        super().__init__()
        self.body = nn.Sequential(
            _conv3x3(channels, channels), nn.BatchNorm2d(channels), nn.ReLU(inplace=True),
            _conv3x3(channels, channels), nn.BatchNorm2d(channels),
        )

    def forward(self, x):
        return x + self.body(x)


class StretchingLayer(nn.Module):
    """x2 nearest upsampling, then conv + BN + ReLU."""

    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.up = nn.Upsample(scale_factor=2, mode="nearest")
        self.conv = _conv3x3(c_in, c_out)
        self.bn = nn.BatchNorm2d(c_out)
        self.act = nn.ReLU(inplace=True)

    def forward(self, x):
        return self.act(self.bn(self.conv(self.up(x))))


class CompressionLayer(nn.Module):
    """Features to RGB: one conv and a tanh, nothing else."""

    def __init__(self, c_in: int):
        super().__init__()
        self.pad = nn.ReflectionPad2d(1)
        self.conv = nn.Conv2d(c_in, 3, 3, bias=True)

    def forward(self, x):
        return torch.tanh(self.conv(self.pad(x)))


class Generator(nn.Module):
    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        sched = config.channel_schedule()
        sizes = config.stage_sizes
        c0 = sched[sizes[0]]
        self.fc = nn.Linear(config.c_dim + config.z_dim, c0 * config.base_spatial ** 2, bias=False)
        self.fc_bn = nn.BatchNorm1d(c0 * config.base_spatial ** 2)
        self.stages = nn.ModuleList(
            nn.Sequential(*[ResBlock(sched[s]) for _ in range(config.repeats)]) for s in sizes)
        self.stretch = nn.ModuleList(
            StretchingLayer(sched[a], sched[b]) for a, b in zip(sizes, sizes[1:]))
        self.compress = nn.ModuleDict(
            {str(s): CompressionLayer(sched[s]) for s in config.scales})

    @property
    def input_shape(self) -> tuple[int, int, int]:
        cfg = self.config
        return (cfg.channel_schedule()[cfg.base_spatial], cfg.base_spatial, cfg.base_spatial)

    def forward(self, c: torch.Tensor, z: torch.Tensor) -> list[torch.Tensor]:
        cfg = self.config
        if c.dim() != 2 or c.shape[1] != cfg.c_dim:
            raise ValueError(f"conditioning vector must be (B, {cfg.c_dim}), got {tuple(c.shape)}")
        if z.dim() != 2 or z.shape[1] != cfg.z_dim or z.shape[0] != c.shape[0]:
            raise ValueError(f"noise must be ({c.shape[0]}, {cfg.z_dim}), got {tuple(z.shape)}")
        h = self.fc_bn(self.fc(torch.cat([c, z], dim=1)))
        h = h.view(c.shape[0], *self.input_shape)
        outputs = []
        for j, size in enumerate(cfg.stage_sizes):
            if j > 0:
                h = self.stretch[j - 1](h)
            h = self.stages[j](h)
            key = str(size)
            if key in self.compress:
                outputs.append(self.compress[key](h))
        return outputs


def build_generator(config: GeneratorConfig) -> Generator:
    return Generator(config)
