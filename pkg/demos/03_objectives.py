"""The least-squares adversarial objectives on hand-picked discriminator outputs.

    python demos/03_objectives.py
"""
import torch

from nestgan.conditioning import kl_divergence
from nestgan.objectives import ScaleOutputs, discriminator_loss, generator_loss

perfect = ScaleOutputs(real_local=torch.ones(4, 1, 1), real_pair=torch.ones(4),
                       fake_local=torch.zeros(4, 1, 1), fake_pair=torch.zeros(4),
                       mismatch_pair=torch.zeros(4))
print("D loss, perfect discriminator:", float(discriminator_loss({64: perfect}).total))

half = ScaleOutputs(*(torch.full(s, 0.5) for s in [(4, 1, 1), (4,), (4, 1, 1), (4,), (4,)]))
print("D loss, every output 0.5, fake weight 1:", float(discriminator_loss({64: half}, fake_weight=1.0).total))

fooled = ScaleOutputs(fake_local=torch.zeros(4, 5, 5), fake_pair=torch.zeros(4))
print("G loss when D says 0 everywhere (per scale):", float(generator_loss({64: fooled}).total))

mu, logvar = torch.zeros(4, 8), torch.zeros(4, 8)
print("KL at the prior:", float(kl_divergence(mu, logvar)))
print("KL with mu = 1 in one dimension:", float(kl_divergence(torch.eye(8)[:1], torch.zeros(1, 8))))

report = discriminator_loss({16: half, 32: half, 64: half})
for scale, name, value in report.rows("d"):
    print(f"  {scale:>3} {name:<16} {value:.4f}")
