"""Least-squares adversarial objectives over a pyramid of discriminator outputs."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import torch

D_COMPONENTS = ("real_local", "real_pair", "fake_local", "fake_pair", "mismatch_pair")
G_COMPONENTS = ("fake_local", "fake_pair")


def lsgan_real(x: torch.Tensor) -> torch.Tensor:
    """Mean of (x - 1)^2."""
    return (x - 1.0).pow(2).mean()


def lsgan_fake(x: torch.Tensor) -> torch.Tensor:
    """Mean of x^2."""
    return x.pow(2).mean()


@dataclass
class ScaleOutputs:
    """Raw discriminator scores collected at one scale.

    ``fake_*`` are scores on generated side outputs, ``mismatch_pair`` is the
    pair score of a real image with text from another class. Local entries
    are None when the local image loss is disabled.
    """
    real_local: torch.Tensor | None = None
    real_pair: torch.Tensor | None = None
    fake_local: torch.Tensor | None = None
    fake_pair: torch.Tensor | None = None
    mismatch_pair: torch.Tensor | None = None


@dataclass
class LossReport:
    terms: dict[int, dict[str, torch.Tensor]] = field(default_factory=dict)
    kl: torch.Tensor | None = None
    total: torch.Tensor = None

    def rows(self, prefix: str) -> list[tuple[str, str, float]]:
        """Flat ``(scale, component, value)`` records; scale ``all`` for totals."""
        out = []
        for scale, comps in sorted(self.terms.items()):
            for name, value in comps.items():
                out.append((str(scale), f"{prefix}_{name}", float(value.detach())))
        if self.kl is not None:
            out.append(("all", f"{prefix}_kl", float(self.kl.detach())))
        out.append(("all", f"{prefix}_total", float(self.total.detach())))
        return out


def _check_scales(outputs: Mapping[int, ScaleOutputs], scales) -> None:
    if scales is None:
        return
    missing = [s for s in scales if s not in outputs]
    if missing:
        raise ValueError(f"missing discriminator outputs for scales {missing}")


def discriminator_loss(outputs: Mapping[int, ScaleOutputs], fake_weight: float = 0.5,
                       scales=None) -> LossReport:
    """Five-term loss minimized by the discriminators, summed over scales.

    Real local/pair scores are pushed to 1; fake local, fake pair and
    mismatched-pair scores to 0, each of those three scaled by ``fake_weight``.
    """
    _check_scales(outputs, scales)
    report = LossReport()
    total = 0.0
    for scale, o in outputs.items():
        comps = {}
        if o.real_local is not None:
            comps["real_local"] = lsgan_real(o.real_local)
        comps["real_pair"] = lsgan_real(o.real_pair)
        if o.fake_local is not None:
            comps["fake_local"] = fake_weight * lsgan_fake(o.fake_local)
        comps["fake_pair"] = fake_weight * lsgan_fake(o.fake_pair)
        comps["mismatch_pair"] = fake_weight * lsgan_fake(o.mismatch_pair)
        report.terms[scale] = comps
        total = total + sum(comps.values())
    report.total = torch.as_tensor(total) if not torch.is_tensor(total) else total
    return report


def generator_loss(outputs: Mapping[int, ScaleOutputs], kl: torch.Tensor | None = None,
                   kl_weight: float = 1.0, scales=None) -> LossReport:
    """Per scale L2(local on fake) + L2(pair on fake), plus the weighted KL term."""
    _check_scales(outputs, scales)
    report = LossReport()
    total = 0.0
    for scale, o in outputs.items():
        comps = {}
        if o.fake_local is not None:
            comps["fake_local"] = lsgan_real(o.fake_local)
        comps["fake_pair"] = lsgan_real(o.fake_pair)
        report.terms[scale] = comps
        total = total + sum(comps.values())
    if kl is not None:
        report.kl = kl
        total = total + kl_weight * kl
    report.total = torch.as_tensor(total) if not torch.is_tensor(total) else total
    return report


def l1_self_regularization(x_hi: torch.Tensor, x_ref: torch.Tensor) -> torch.Tensor:
    if x_hi.shape != x_ref.shape:
        raise ValueError(f"shape mismatch: {tuple(x_hi.shape)} vs {tuple(x_ref.shape)}")
    return (x_hi - x_ref).abs().mean()
