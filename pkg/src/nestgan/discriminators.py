"""Per-scale discriminators with a local patch branch and an image-text pair branch."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import torch
import torch.nn as nn


@dataclass
class DiscriminatorConfig:
    scale: int
    R: int = 1
    base_channels: int = 64
    max_channels: int = 512
    text_dim: int = 128
    reduced_dim: int = 128
    first_layer_norm: bool = False
    local_branch: bool = True

    def __post_init__(self):
        ratio = self.scale // 4
        if self.scale < 8 or self.scale % 4 or ratio & (ratio - 1):
            raise ValueError(f"discriminator scale {self.scale} is not 4*2^k (k >= 1)")
        if self.R < 1:
            raise ValueError("R must be >= 1")
        if self.R > self.scale // 2:
            raise ValueError(f"R={self.R} exceeds the first trunk resolution {self.scale // 2}")

    @property
    def num_trunk_layers(self) -> int:
        return int(math.log2(self.scale // 4))

    def trunk_channels(self) -> list[int]:
        return [min(self.base_channels * 2 ** j, self.max_channels)
                for j in range(self.num_trunk_layers)]

    def trunk_sizes(self) -> list[int]:
        return [self.scale // 2 ** (j + 1) for j in range(self.num_trunk_layers)]

    @property
    def local_attach(self) -> int:
        """Index of the trunk layer feeding the local head: smallest map with side >= R."""
        sizes = self.trunk_sizes()
        return max(j for j, s in enumerate(sizes) if s >= self.R)

    @property
    def local_kernel(self) -> int:
        return self.trunk_sizes()[self.local_attach] - self.R + 1


class DiscOutput(NamedTuple):
    local_map: torch.Tensor | None  # (B, R, R)
    pair_score: torch.Tensor | None  # (B,)


def _trunk_layer(c_in: int, c_out: int, norm: bool) -> nn.Sequential:
    layers = [nn.Conv2d(c_in, c_out, 3, stride=2, padding=1, bias=not norm)]
    if norm:
        layers.append(nn.BatchNorm2d(c_out))
    layers.append(nn.LeakyReLU(0.2, inplace=True))
    return nn.Sequential(*layers)


class Discriminator(nn.Module):
    def __init__(self, config: DiscriminatorConfig):
        super().__init__()
        self.config = config
        chans = config.trunk_channels()
        layers = []
        c_in = 3
        for j, c_out in enumerate(chans):
            layers.append(_trunk_layer(c_in, c_out, norm=(j > 0 or config.first_layer_norm)))
            c_in = c_out
        self.trunk = nn.ModuleList(layers)
        top = chans[-1]
        if config.local_branch:
            self.local_head = nn.Conv2d(chans[config.local_attach], 1, config.local_kernel)
        else:
            self.local_head = None
        self.text_reduce = nn.Sequential(nn.Linear(config.text_dim, config.reduced_dim),
                                         nn.LeakyReLU(0.2, inplace=True))
        self.pair_fuse = nn.Sequential(
            nn.Conv2d(top + config.reduced_dim, top, 1, bias=False),
            nn.BatchNorm2d(top), nn.LeakyReLU(0.2, inplace=True))
        self.pair_head = nn.Conv2d(top, 1, 4)

    def features(self, image: torch.Tensor) -> list[torch.Tensor]:
        cfg = self.config
        if image.dim() != 4 or image.shape[1] != 3 or image.shape[-2:] != (cfg.scale, cfg.scale):
            raise ValueError(
                f"expected (B, 3, {cfg.scale}, {cfg.scale}) images, got {tuple(image.shape)}")
        feats = []
        h = image
        for layer in self.trunk:
            h = layer(h)
            feats.append(h)
        return feats

    def forward(self, image: torch.Tensor, text: torch.Tensor | None = None,
                local: bool = True) -> DiscOutput:
        feats = self.features(image)
        local_map = None
        if local and self.local_head is not None:
            local_map = self.local_head(feats[self.config.local_attach]).squeeze(1)
        pair = None
        if text is not None:
            top = feats[-1]
            t = self.text_reduce(text)
            t = t[:, :, None, None].expand(-1, -1, top.shape[2], top.shape[3])
            pair = self.pair_head(self.pair_fuse(torch.cat([top, t], dim=1))).flatten()
        return DiscOutput(local_map, pair)

    def local_branch_layers(self) -> nn.Sequential:
        """The conv chain from pixels to one local-map element (for receptive-field probes)."""
        chain = list(self.trunk[: self.config.local_attach + 1]) + [self.local_head]
        return nn.Sequential(*chain)


def build_discriminator(config: DiscriminatorConfig) -> Discriminator:
    return Discriminator(config)


def receptive_field(layers) -> int:
    """Receptive field of a stack of ``(kernel, stride)`` pairs or a :class:`DiscriminatorConfig`."""
    if isinstance(layers, DiscriminatorConfig):
        cfg = layers
        layers = [(3, 2)] * (cfg.local_attach + 1) + [(cfg.local_kernel, 1)]
    r, jump = 1, 1
    for k, s in layers:
        r += (k - 1) * jump
        jump *= s
    return r
