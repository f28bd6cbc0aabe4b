"""Shapes flowing through the generator and the nested discriminators.

One generator emits an image pyramid (one side output per configured scale).
Each scale has its own discriminator with a local patch head (an R x R map of
real/fake scores) and a pair head scoring image-text agreement.

    python demos/02_architecture.py
"""
import torch

from nestgan.discriminators import DiscriminatorConfig, build_discriminator, receptive_field
from nestgan.generator import GeneratorConfig, build_generator

torch.manual_seed(0)
for cfg in (GeneratorConfig(), GeneratorConfig.paper_scale(base_channels=64, min_channels=4)):
    g = build_generator(cfg).eval()
    with torch.no_grad():
        out = g(torch.randn(2, cfg.c_dim), torch.randn(2, cfg.z_dim))
    print(f"generator scales {cfg.scales}: channels {cfg.channel_schedule()}")
    for x in out:
        print(f"  side output {tuple(x.shape)}  range [{x.min():.3f}, {x.max():.3f}]")

print("\ndiscriminators at desk scale (R pattern 1, 1, 5):")
for scale, R in zip((16, 32, 64), (1, 1, 5)):
    cfg = DiscriminatorConfig(scale=scale, R=R, base_channels=16, max_channels=128)
    d = build_discriminator(cfg).eval()
    with torch.no_grad():
        o = d(torch.randn(2, 3, scale, scale), torch.randn(2, cfg.text_dim))
    print(f"  D@{scale}: trunk sizes {cfg.trunk_sizes()}, local map {tuple(o.local_map.shape)}, "
          f"pair score {tuple(o.pair_score.shape)}, patch receptive field {receptive_field(cfg)} px")
