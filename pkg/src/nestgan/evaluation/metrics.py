"""Scoring functions: cosine/VS, bidirectional ranking loss, MS-SSIM, Inception-style score."""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F

MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5


def cosine_similarity(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """x.y / (|x| |y|) along the last dimension."""
    nx = x.norm(dim=-1)
    ny = y.norm(dim=-1)
    if (nx == 0).any() or (ny == 0).any():
        raise ValueError("cosine similarity is undefined for zero vectors")
    return (x * y).sum(dim=-1) / (nx * ny)


def _cosine_matrix(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    a = a / a.norm(dim=1, keepdim=True).clamp_min(1e-12)
    b = b / b.norm(dim=1, keepdim=True).clamp_min(1e-12)
    return a @ b.t()


def bidirectional_ranking_loss(image_emb: torch.Tensor, text_emb: torch.Tensor,
                               margin: float = 0.2, matched: torch.Tensor | None = None) -> torch.Tensor:
    """Hinge ranking loss summed over both retrieval directions.

    Row ``i`` of ``image_emb`` and ``text_emb`` form the ground-truth pair.
    Every other pairing in the batch is a negative, except where the boolean
    ``matched[i, j]`` marks it as an equivalent match (e.g. identical captions).
    """
    scores = _cosine_matrix(image_emb, text_emb)  # [image, text]
    pos = scores.diag()
    n = scores.shape[0]
    negative = ~torch.eye(n, dtype=torch.bool, device=scores.device)
    if matched is not None:
        negative &= ~matched
    cost_text = (margin - pos[:, None] + scores).clamp_min(0)  # image anchors, mismatched texts
    cost_image = (margin - pos[None, :] + scores).clamp_min(0)  # text anchors, mismatched images
    return (cost_text * negative).sum() + (cost_image * negative).sum()


def _gaussian_window(size: int = WINDOW_SIZE, sigma: float = WINDOW_SIGMA) -> torch.Tensor:
    coords = torch.arange(size, dtype=torch.float64) - size // 2
    g = torch.exp(-coords ** 2 / (2 * sigma ** 2))
    return g / g.sum()


def _filter(x: torch.Tensor, win: torch.Tensor) -> torch.Tensor:
    c = x.shape[1]
    kh = win.view(1, 1, -1, 1).repeat(c, 1, 1, 1)
    kw = win.view(1, 1, 1, -1).repeat(c, 1, 1, 1)
    return F.conv2d(F.conv2d(x, kh, groups=c), kw, groups=c)


def _ssim_components(x, y, win, data_range):
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mu_x, mu_y = _filter(x, win), _filter(y, win)
    sxx = _filter(x * x, win) - mu_x * mu_x
    syy = _filter(y * y, win) - mu_y * mu_y
    sxy = _filter(x * y, win) - mu_x * mu_y
    cs = (2 * sxy + c2) / (sxx + syy + c2)
    lum = (2 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1)
    return (lum * cs).mean(dim=(1, 2, 3)), cs.mean(dim=(1, 2, 3))


def ssim(a: torch.Tensor, b: torch.Tensor, data_range: float = 2.0) -> torch.Tensor:
    """Single-scale SSIM with an 11x11 Gaussian window (valid filtering)."""
    a, b = _as_batch(a, b)
    return _ssim_components(a, b, _gaussian_window(), data_range)[0]


def msssim_levels(size: int, max_levels: int = 5) -> int:
    """Largest level count whose coarsest image still fits the window."""
    levels = 0
    while levels < max_levels and size // 2 ** levels >= WINDOW_SIZE:
        levels += 1
    return levels


def _as_batch(a, b):
    a = torch.as_tensor(a, dtype=torch.float64)
    b = torch.as_tensor(b, dtype=torch.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.dim() == 3:
        a, b = a[None], b[None]
    return a, b


def ms_ssim(a: torch.Tensor, b: torch.Tensor, data_range: float = 2.0,
            levels: int | None = None) -> torch.Tensor:
    """Multi-scale SSIM of image pairs, ``(3, H, W)`` or ``(B, 3, H, W)``.

    The level count drops automatically for small images (at least 2 levels);
    the standard five level weights are truncated and renormalized.
    """
    a, b = _as_batch(a, b)
    size = min(a.shape[-2:])
    max_levels = msssim_levels(size)
    if levels is None:
        levels = max_levels
    if levels < 2 or levels > max_levels:
        raise ValueError(f"{size}px images support at most {max_levels} MS-SSIM levels "
                         f"(need >= 2, each level >= {WINDOW_SIZE}px); requested {levels}")
    weights = torch.tensor(MSSSIM_WEIGHTS[:levels], dtype=torch.float64)
    weights = weights / weights.sum()
    win = _gaussian_window()
    vals = []
    for lvl in range(levels):
        s, cs = _ssim_components(a, b, win, data_range)
        vals.append(cs if lvl < levels - 1 else s)
        if lvl < levels - 1:
            a = F.avg_pool2d(a, 2)
            b = F.avg_pool2d(b, 2)
    stack = torch.stack(vals, dim=0).clamp_min(0.0)
    out = torch.prod(stack ** weights[:, None], dim=0)
    return out if out.numel() > 1 else out[0]


def classwise_msssim(images_by_class: dict, pairs_per_class: int = 400, seed: int = 0,
                     data_range: float = 2.0) -> tuple[dict, float]:
    """Mean MS-SSIM over random distinct pairs within each class, plus the std across classes."""
    rng = np.random.default_rng(seed)
    scores = {}
    for key in sorted(images_by_class):
        imgs = torch.as_tensor(images_by_class[key])
        pairs = sample_pairs(len(imgs), pairs_per_class, rng)
        if not pairs:
            continue
        i, j = map(list, zip(*pairs))
        scores[key] = float(ms_ssim(imgs[i], imgs[j], data_range).mean())
    values = np.array(list(scores.values()))
    return scores, float(values.std()) if len(values) else float("nan")


def sample_pairs(n: int, k: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """``k`` distinct unordered index pairs, or all of them when fewer exist."""
    rows, cols = np.triu_indices(n, 1)
    if len(rows) > k:
        keep = np.sort(rng.choice(len(rows), size=k, replace=False))
        rows, cols = rows[keep], cols[keep]
    return list(zip(rows.tolist(), cols.tolist()))


def overall_msssim(images: torch.Tensor, n_pairs: int, seed: int = 0, data_range: float = 2.0) -> float:
    rng = np.random.default_rng(seed)
    pairs = sample_pairs(len(images), n_pairs, rng)
    i, j = map(list, zip(*pairs))
    return float(ms_ssim(images[i], images[j], data_range).mean())


def inception_score_from_probs(probs, n_splits: int = 10) -> tuple[float, float]:
    """exp(E_x KL(p(y|x) || p(y))) per split; mean and std over splits."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2:
        raise ValueError("probabilities must be (N, C)")
    if n_splits < 1 or n_splits > len(p):
        raise ValueError(f"n_splits must be in [1, {len(p)}]")
    scores = []
    for part in np.array_split(p, n_splits):
        # correctly rounded column sums: identical rows give a marginal equal to each row
        marginal = np.array([[math.fsum(col) / len(part) for col in part.T]])
        with np.errstate(divide="ignore", invalid="ignore"):
            kl = np.where(part > 0, part * (np.log(part) - np.log(marginal)), 0.0).sum(axis=1)
        scores.append(np.exp(kl.mean()))
    return float(np.mean(scores)), float(np.std(scores))


@torch.no_grad()
def inception_style_score(images: torch.Tensor, classifier, n_splits: int = 10,
                          batch_size: int = 100) -> tuple[float, float]:
    """Inception-style score of ``images`` under a class-probability model."""
    probs = torch.cat([classifier.predict_proba(images[i:i + batch_size])
                       for i in range(0, len(images), batch_size)])
    return inception_score_from_probs(probs.numpy(), n_splits)
