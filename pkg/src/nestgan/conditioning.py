"""Caption encoding, conditioning augmentation and embedding interpolation."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import torch
import torch.nn as nn


class UnknownTokenError(KeyError):
    def __init__(self, token: str):
        super().__init__(token)
        self.token = token

    def __str__(self) -> str:
        return f"token {self.token!r} is not in the vocabulary"


class Vocabulary:
    """Dense token -> index map, stored on disk as one token per line."""

    def __init__(self, tokens: Iterable[str]):
        self.tokens: list[str] = []
        self._index: dict[str, int] = {}
        for tok in tokens:
            if tok not in self._index:
                self._index[tok] = len(self.tokens)
                self.tokens.append(tok)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def index(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise UnknownTokenError(token) from None

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.index(t) for t in tokens]

    def bag_of_words(self, captions: Sequence[Sequence[str]]) -> torch.Tensor:
        """Normalized token-count vectors, one row per caption."""
        out = torch.zeros(len(captions), len(self))
        for row, caption in enumerate(captions):
            for tok in caption:
                out[row, self.index(tok)] += 1.0
        return out / out.sum(dim=1, keepdim=True).clamp_min(1.0)

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens))

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text().splitlines()
        return cls(line for line in lines if line)


class TextEncoder(nn.Module):
    """Mean of learned token embeddings.

    Stands in for a pretrained sentence encoder; captions here are short and
    compositional, so an order-free average is enough and trains jointly
    with the generator.
    """

    def __init__(self, vocab: Vocabulary, dim: int = 128, init_std: float = 1.0):
        super().__init__()
        self.vocab = vocab
        self.dim = dim
        self.table = nn.EmbeddingBag(len(vocab), dim, mode="mean")
        nn.init.normal_(self.table.weight, std=init_std)

    def forward(self, captions: Sequence[Sequence[str]]) -> torch.Tensor:
        flat: list[int] = []
        offsets: list[int] = []
        for caption in captions:
            if len(caption) == 0:
                raise ValueError("empty caption")
            offsets.append(len(flat))
            flat.extend(self.vocab.encode(caption))
        device = self.table.weight.device
        return self.table(torch.tensor(flat, dtype=torch.long, device=device),
                          torch.tensor(offsets, dtype=torch.long, device=device))

    def encode_text(self, tokens: Sequence[str]) -> torch.Tensor:
        """Embedding of a single token sequence, shape ``(dim,)``."""
        return self.forward([tokens])[0]


@dataclass
class CASample:
    mu: torch.Tensor
    logvar: torch.Tensor
    c: torch.Tensor


def _check_finite(name: str, x: torch.Tensor) -> None:
    if not torch.isfinite(x).all():
        raise ValueError(f"{name} contains non-finite values")


class ConditioningAugmentation(nn.Module):
    """Learned Gaussian around the text embedding, sampled by reparameterization."""

    def __init__(self, text_dim: int = 128, c_dim: int = 128):
        super().__init__()
        self.text_dim = text_dim
        self.c_dim = c_dim
        self.fc = nn.Linear(text_dim, 2 * c_dim)

    def forward(self, t: torch.Tensor, generator: torch.Generator | None = None,
                deterministic: bool = False, eps: torch.Tensor | None = None) -> CASample:
        """``eps`` fixes the standard-normal draw instead of sampling one."""
        _check_finite("text embedding", t)
        if t.shape[-1] != self.text_dim:
            raise ValueError(f"expected text dim {self.text_dim}, got {t.shape[-1]}")
        mu, logvar = self.fc(t).chunk(2, dim=-1)
        if deterministic:
            return CASample(mu, logvar, mu)
        if eps is None:
            eps = torch.randn(mu.shape, generator=generator, dtype=mu.dtype, device=mu.device)
        c = mu + torch.exp(0.5 * logvar) * eps
        return CASample(mu, logvar, c)


def conditioning_augment(ca: ConditioningAugmentation, t: torch.Tensor,
                         generator: torch.Generator | None = None,
                         deterministic: bool = False) -> CASample:
    return ca(t, generator=generator, deterministic=deterministic)


def kl_divergence(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """KL(N(mu, diag(exp(logvar))) || N(0, I)).

    Summed over the last dimension; batched inputs are averaged over the
    leading dimensions.
    """
    _check_finite("mu", mu)
    _check_finite("logvar", logvar)
    # expm1 keeps small deviations from the prior from rounding away
    per_sample = 0.5 * (mu.pow(2) + (torch.expm1(logvar) - logvar)).sum(dim=-1)
    return per_sample.mean() if per_sample.dim() > 0 else per_sample


def interpolate_embeddings(t_a: torch.Tensor, t_b: torch.Tensor, alpha: float) -> torch.Tensor:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if t_a.shape != t_b.shape:
        raise ValueError(f"shape mismatch: {tuple(t_a.shape)} vs {tuple(t_b.shape)}")
    return (1.0 - alpha) * t_a + alpha * t_b
