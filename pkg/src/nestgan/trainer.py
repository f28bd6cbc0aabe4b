"""Alternating generator / nested-discriminator training, checkpoints, sampling and ablations."""

from __future__ import annotations

import io
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from PIL import Image

from .conditioning import ConditioningAugmentation, TextEncoder, Vocabulary, kl_divergence
from .data import Dataset, color_oracle, iterate_epoch, spec_class_names
from .discriminators import Discriminator, DiscriminatorConfig
from .generator import Generator, GeneratorConfig
from .objectives import (ScaleOutputs, discriminator_loss, generator_loss,
                         l1_self_regularization)

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"NESTGAN-CHECKPOINT"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    scales: tuple[int, ...] = (16, 32, 64)
    r_values: tuple[int, ...] = (1, 1, 5)
    enabled_scales: tuple[int, ...] | None = None  # None: every configured scale
    local_loss: bool = True
    epochs: int = 60
    batch_size: int = 16
    lr: float = 0.0002
    lr_halving_period: int = 20
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0
    kl_weight: float = 1.0
    fake_weight: float = 0.5
    l1_weight: float = 0.0
    text_dim: int = 128
    embed_init_std: float = 8.0  # large enough that caption differences survive CA noise
    c_dim: int = 128
    z_dim: int = 100
    repeats: int = 1
    g_base_channels: int = 256
    g_halve_at: tuple[int, ...] = (8, 32)
    g_min_channels: int = 32
    d_base_channels: int = 64
    d_max_channels: int = 512
    d_first_layer_norm: bool = False
    checkpoint_every: int = 10  # epochs; 0 disables periodic checkpoints

    def __post_init__(self):
        for name in ("scales", "r_values", "g_halve_at"):
            setattr(self, name, tuple(int(v) for v in getattr(self, name)))
        if self.enabled_scales is not None:
            self.enabled_scales = tuple(int(v) for v in self.enabled_scales)
        if len(self.r_values) != len(self.scales):
            raise ValueError(f"r_values {self.r_values} must give one R per scale {self.scales}")
        extra = set(self.active_scales) - set(self.scales)
        if extra:
            raise ValueError(f"enabled scales {sorted(extra)} are not configured scales {self.scales}")
        if not self.active_scales:
            raise ValueError("at least one discriminator must be enabled")
        if self.epochs < 0 or self.batch_size < 1 or self.lr_halving_period < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and lr_halving_period >= 1 required")

    @classmethod
    def desk_light(cls, **overrides) -> "TrainConfig":
        """Narrower channel widths that keep a desk run tractable on a single CPU core.

        The KL weight drops to 0.1: at 1.0 the KL term shrinks the caption signal in
        the CA mean below the CA noise on this small dataset and colors get confused.
        """
        base = dict(g_base_channels=128, g_halve_at=(16, 32, 64), g_min_channels=16,
                    d_base_channels=16, d_max_channels=128, kl_weight=0.1)
        return cls(**{**base, **overrides})

    @property
    def active_scales(self) -> tuple[int, ...]:
        return self.scales if self.enabled_scales is None else self.enabled_scales

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(scales=self.scales, repeats=self.repeats,
                               base_channels=self.g_base_channels, halve_at=self.g_halve_at,
                               min_channels=self.g_min_channels, c_dim=self.c_dim, z_dim=self.z_dim)

    def discriminator_configs(self) -> dict[int, DiscriminatorConfig]:
        return {s: DiscriminatorConfig(scale=s, R=r, base_channels=self.d_base_channels,
                                       max_channels=self.d_max_channels, text_dim=self.c_dim,
                                       first_layer_norm=self.d_first_layer_norm,
                                       local_branch=self.local_loss)
                for s, r in zip(self.scales, self.r_values)}

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v)
                for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown training config key(s): {unknown}")
        return cls(**d)


def lr_at(epoch: int, config: TrainConfig) -> float:
    return config.lr * 0.5 ** (epoch // config.lr_halving_period)


class NestedGAN(nn.Module):
    """Text encoder, conditioning augmentation, generator and one discriminator per scale."""

    def __init__(self, config: TrainConfig, vocab: Vocabulary | None):
        super().__init__()
        self.config = config
        self.vocab = vocab
        self.encoder = TextEncoder(vocab, config.text_dim, config.embed_init_std) if vocab is not None else None
        self.ca = ConditioningAugmentation(config.text_dim, config.c_dim)
        self.generator = Generator(config.generator_config())
        self.discriminators = nn.ModuleDict(
            {str(s): Discriminator(c) for s, c in config.discriminator_configs().items()})

    def disc(self, scale: int) -> Discriminator:
        return self.discriminators[str(scale)]

    def generator_side(self) -> list[nn.Parameter]:
        mods = [self.ca, self.generator] + ([self.encoder] if self.encoder is not None else [])
        return [p for m in mods for p in m.parameters()]

    def encode(self, texts) -> torch.Tensor:
        """Token captions through the learned encoder; embedding rows pass through."""
        if torch.is_tensor(texts):
            if texts.shape[-1] != self.config.text_dim:
                raise ValueError(f"text embedding dim {texts.shape[-1]} != {self.config.text_dim}")
            return texts.float()
        if self.encoder is None:
            raise ValueError("model was built for precomputed embeddings, not token captions")
        return self.encoder(texts)


class NonFiniteLossError(RuntimeError):
    def __init__(self, step: int, which: str, last_checkpoint: Path | None):
        self.step = step
        self.last_checkpoint = last_checkpoint
        super().__init__(f"non-finite {which} loss at step {step}; "
                         f"last good checkpoint: {last_checkpoint or 'none written'}")


class CheckpointError(RuntimeError):
    pass


@dataclass
class TrainingState:
    config: TrainConfig
    model: NestedGAN
    opt_g: torch.optim.Optimizer
    opt_d: dict[int, torch.optim.Optimizer]
    rng: torch.Generator
    np_rng: np.random.Generator
    epoch: int = 0
    step: int = 0


def init_state(config: TrainConfig, vocab: Vocabulary | None) -> TrainingState:
    torch.manual_seed(config.seed)
    model = NestedGAN(config, vocab)
    betas = (config.beta1, config.beta2)
    opt_g = torch.optim.Adam(model.generator_side(), lr=config.lr, betas=betas)
    opt_d = {s: torch.optim.Adam(model.disc(s).parameters(), lr=config.lr, betas=betas)
             for s in config.active_scales}
    rng = torch.Generator().manual_seed(config.seed)
    return TrainingState(config, model, opt_g, opt_d, rng, np.random.default_rng(config.seed))


def _set_lr(state: TrainingState, lr: float) -> None:
    for opt in [state.opt_g, *state.opt_d.values()]:
        for group in opt.param_groups:
            group["lr"] = lr


@dataclass
class StepResult:
    d_report: object
    g_report: object
    l1: torch.Tensor | None = None


def train_step(state: TrainingState, batch, last_checkpoint: Path | None = None) -> StepResult:
    """One discriminator update on detached fakes, then one generator update."""
    cfg = state.config
    model = state.model
    model.train()
    scales = cfg.active_scales
    t = model.encode(batch.matched)
    ca = model.ca(t, generator=state.rng)
    # discriminators read the CA mean of each caption, never backpropagating into G's side
    t_d = ca.mu.detach()
    with torch.no_grad():
        t_mis = model.ca(model.encode(batch.mismatched), deterministic=True).mu
    z = torch.randn(len(t), cfg.z_dim, generator=state.rng)
    fakes = dict(zip(cfg.scales, model.generator(ca.c, z)))

    outs = {}
    for s in scales:
        D = model.disc(s)
        real = D(batch.images[s], t_d, local=cfg.local_loss)
        fake = D(fakes[s].detach(), t_d, local=cfg.local_loss)
        mis = D(batch.images[s], t_mis, local=False)
        outs[s] = ScaleOutputs(real.local_map, real.pair_score, fake.local_map,
                               fake.pair_score, mis.pair_score)
    d_report = discriminator_loss(outs, cfg.fake_weight, scales=scales)
    if not torch.isfinite(d_report.total):
        raise NonFiniteLossError(state.step, "discriminator", last_checkpoint)
    for opt in state.opt_d.values():
        opt.zero_grad(set_to_none=True)
    d_report.total.backward()
    for opt in state.opt_d.values():
        opt.step()

    outs = {}
    for s in scales:
        o = model.disc(s)(fakes[s], t_d, local=cfg.local_loss)
        outs[s] = ScaleOutputs(fake_local=o.local_map, fake_pair=o.pair_score)
    g_report = generator_loss(outs, kl_divergence(ca.mu, ca.logvar), cfg.kl_weight, scales=scales)
    total = g_report.total
    l1 = None
    if cfg.l1_weight > 0 and len(cfg.scales) > 1:
        hi, lo = fakes[cfg.scales[-1]], fakes[cfg.scales[-2]]
        ref = F.interpolate(lo, size=hi.shape[-2:], mode="bilinear", align_corners=False)
        l1 = l1_self_regularization(hi, ref.detach())
        total = total + cfg.l1_weight * l1
    if not torch.isfinite(total):
        raise NonFiniteLossError(state.step, "generator", last_checkpoint)
    state.opt_g.zero_grad(set_to_none=True)
    total.backward()
    state.opt_g.step()
    state.step += 1
    return StepResult(d_report, g_report, l1)


def _log_rows(fh, step: int, result: StepResult) -> None:
    rows = result.d_report.rows("d") + result.g_report.rows("g")
    if result.l1 is not None:
        rows.append(("all", "g_l1", float(result.l1)))
    for scale, name, value in rows:
        fh.write(f"{step}\t{scale}\t{name}\t{value!r}\n")


# -- checkpoints ---------------------------------------------------------------

def save_checkpoint(state: TrainingState, path) -> Path:
    """Atomically write a versioned single-file checkpoint."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "config": state.config.to_dict(),
        "vocab": None if state.model.vocab is None else state.model.vocab.tokens,
        "model": state.model.state_dict(),
        "opt_g": state.opt_g.state_dict(),
        "opt_d": {str(s): o.state_dict() for s, o in state.opt_d.items()},
        "epoch": state.epoch,
        "step": state.step,
        "rng": state.rng.get_state(),
        "np_rng": state.np_rng.bit_generator.state,
    }
    buf = io.BytesIO()
    torch.save(payload, buf)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + b" %d\n" % CHECKPOINT_VERSION)
        fh.write(buf.getvalue())
    os.replace(tmp, path)
    return path


def load_checkpoint(path, scales: Sequence[int] | None = None) -> TrainingState:
    """Restore a training state; ``scales`` (if given) must match the stored config."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    header, sep, body = raw.partition(b"\n")
    parts = header.split(b" ")
    if not sep or len(parts) != 2 or parts[0] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    version = int(parts[1])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported "
                              f"(this build reads version {CHECKPOINT_VERSION})")
    try:
        blob = torch.load(io.BytesIO(body), map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"corrupt or truncated checkpoint {path}: {exc}") from exc
    config = TrainConfig.from_dict(blob["config"])
    if scales is not None and tuple(scales) != config.scales:
        raise CheckpointError(f"checkpoint scales {config.scales} do not match requested {tuple(scales)}")
    vocab = None if blob["vocab"] is None else Vocabulary(blob["vocab"])
    state = init_state(config, vocab)
    state.model.load_state_dict(blob["model"])
    state.opt_g.load_state_dict(blob["opt_g"])
    for s, opt in state.opt_d.items():
        opt.load_state_dict(blob["opt_d"][str(s)])
    state.epoch, state.step = blob["epoch"], blob["step"]
    state.rng.set_state(blob["rng"])
    state.np_rng.bit_generator.state = blob["np_rng"]
    return state


# -- training loop ----------------------------------------------------------------

@dataclass
class TrainResult:
    state: TrainingState
    run_dir: Path | None
    metrics_path: Path | None
    checkpoint: Path | None


def train(config: TrainConfig, dataset: Dataset, run_dir=None,
          state: TrainingState | None = None) -> TrainResult:
    """Run (or resume) training for ``config.epochs`` epochs.

    With a ``run_dir`` the resolved config, the per-step metrics log,
    periodic checkpoints and ``final.pt`` are written there.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if len(dataset) < config.batch_size:
        raise ValueError(f"dataset of {len(dataset)} samples is smaller than batch {config.batch_size}")
    if dataset.embeddings is not None and dataset.embeddings.shape[1] != config.text_dim:
        raise ValueError(f"dataset embedding dim {dataset.embeddings.shape[1]} != text_dim {config.text_dim}")
    state = state or init_state(config, dataset.vocab if dataset.embeddings is None else None)
    run_dir = Path(run_dir) if run_dir is not None else None
    metrics_path = last_ckpt = None
    fh = None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
        metrics_path = run_dir / "metrics.log"
        fh = open(metrics_path, "a")
    try:
        while state.epoch < config.epochs:
            _set_lr(state, lr_at(state.epoch, config))
            for batch in iterate_epoch(dataset, config.batch_size, state.np_rng, config.scales):
                result = train_step(state, batch, last_ckpt)
                if fh is not None:
                    _log_rows(fh, state.step, result)
            state.epoch += 1
            log.info("epoch %d step %d d=%.4f g=%.4f", state.epoch, state.step,
                     result.d_report.total.item(), result.g_report.total.item())
            if run_dir is not None and config.checkpoint_every and state.epoch % config.checkpoint_every == 0:
                if fh is not None:
                    fh.flush()
                last_ckpt = save_checkpoint(state, run_dir / "checkpoints" / f"epoch_{state.epoch:04d}.pt")
    finally:
        if fh is not None:
            fh.close()
    final = save_checkpoint(state, run_dir / "final.pt") if run_dir is not None else None
    return TrainResult(state, run_dir, metrics_path, final)


# -- inference --------------------------------------------------------------------

@torch.no_grad()
def _generate_one(model: NestedGAN, t: torch.Tensor, z: torch.Tensor, eps: torch.Tensor):
    ca = model.ca(t, eps=eps)
    return model.generator(ca.c, z)


@torch.no_grad()
def synthesize(state: TrainingState, texts, seed: int) -> dict[int, torch.Tensor]:
    """One pyramid per text; every sample is generated on its own so results
    do not depend on how requests are batched."""
    model = state.model.eval()
    cfg = state.config
    t = model.encode(texts)
    gen = torch.Generator().manual_seed(seed)
    pyramids = []
    for i in range(len(t)):
        # per-sample draws (z, then CA noise) so sample i never depends on later requests
        z = torch.randn(1, cfg.z_dim, generator=gen)
        eps = torch.randn(1, cfg.c_dim, generator=gen)
        pyramids.append(_generate_one(model, t[i:i + 1], z, eps))
    return {s: torch.cat([p[k] for p in pyramids]) for k, s in enumerate(cfg.scales)}


@torch.no_grad()
def interpolate(state: TrainingState, text_a, text_b, steps: int, seed: int) -> dict[int, torch.Tensor]:
    """``steps`` frames from text_a (alpha=0) to text_b (alpha=1) under one noise draw."""
    from .conditioning import interpolate_embeddings
    if steps < 2:
        raise ValueError("steps must be >= 2")
    model = state.model.eval()
    cfg = state.config
    ta, tb = model.encode([text_a, text_b]) if not torch.is_tensor(text_a) else (text_a, text_b)
    gen = torch.Generator().manual_seed(seed)
    z = torch.randn(1, cfg.z_dim, generator=gen)
    eps = torch.randn(1, cfg.c_dim, generator=gen)
    alphas = np.linspace(0.0, 1.0, steps)
    frames = [_generate_one(model, interpolate_embeddings(ta, tb, float(a))[None], z, eps)
              for a in alphas]
    return {s: torch.cat([f[k] for f in frames]) for k, s in enumerate(cfg.scales)}


def _to_uint8(images: torch.Tensor) -> np.ndarray:
    x = ((images.clamp(-1, 1) + 1.0) * 127.5).round().to(torch.uint8)
    return x.permute(0, 2, 3, 1).numpy()


def save_grid(images: torch.Tensor, rows: int, path) -> None:
    """Tile ``(N, 3, H, W)`` images into ``rows`` rows as a PNG."""
    arr = _to_uint8(images)
    n, h, w, _ = arr.shape
    cols = -(-n // rows)
    grid = np.full((rows * h, cols * w, 3), 255, dtype=np.uint8)
    for k in range(n):
        r, c = divmod(k, cols)
        grid[r * h:(r + 1) * h, c * w:(c + 1) * w] = arr[k]
    Image.fromarray(grid).save(path)


def _save_pyramids(pyramids: dict[int, torch.Tensor], path) -> None:
    # raw float32 tensors, written without a zip container so bytes are reproducible
    with open(path, "wb") as fh:
        for s, x in pyramids.items():
            np.save(fh, x.numpy().astype(np.float32))


def sample(state: TrainingState, captions: Sequence, n_per_caption: int, seed: int,
           out_dir=None) -> dict[int, torch.Tensor]:
    """``n_per_caption`` samples per caption at every side-output scale.

    With ``out_dir``: one ``grid_<scale>.png`` per scale (a row per caption)
    and ``pyramids.npy`` holding the raw arrays in scale order.
    """
    texts = [c for c in captions for _ in range(n_per_caption)]
    if torch.is_tensor(captions):
        texts = captions.repeat_interleave(n_per_caption, dim=0)
    pyramids = synthesize(state, texts, seed)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for s, x in pyramids.items():
            save_grid(x, len(captions), out_dir / f"grid_{s}.png")
        _save_pyramids(pyramids, out_dir / "pyramids.npy")
    return pyramids


def save_interpolation(frames: dict[int, torch.Tensor], out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for s, x in frames.items():
        save_grid(x, 1, out_dir / f"interp_{s}.png")
    _save_pyramids(frames, out_dir / "frames.npy")


# -- evaluation of trained models ------------------------------------------------------

def color_accuracy(images: torch.Tensor, colors: Sequence[str], palette: Sequence[str]) -> float:
    hits = [color_oracle(img, palette) == c for img, c in zip(images, colors)]
    return float(np.mean(hits))


def evaluation_captions(dataset: Dataset, n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.choice(len(dataset), size=n, replace=n > len(dataset))


def evaluate_model(state: TrainingState, dataset: Dataset, vs_model=None, classifier=None,
                   metrics: Sequence[str] = ("vs", "msssim", "inception"), n_images: int = 200,
                   seed: int = 0, pairs_per_class: int = 400, ground_truth: bool = False):
    """Score ``n_images`` final-scale samples conditioned on dataset captions.

    ``ground_truth`` scores the real images behind the same captions instead.
    """
    from .evaluation import evaluate_images
    idx = evaluation_captions(dataset, n_images, seed)
    texts = ([dataset.captions[i] for i in idx] if dataset.embeddings is None
             else torch.as_tensor(dataset.embeddings[idx]).float())
    if ground_truth:
        images = dataset.image_tensor(idx)
    else:
        images = synthesize(state, texts, seed)[state.config.scales[-1]]
    report = evaluate_images(images, dataset.labels[idx], texts, dataset.class_names, metrics,
                             vs_model=vs_model, classifier=classifier,
                             pairs_per_class=pairs_per_class, seed=seed)
    if dataset.attributes is not None and dataset.spec is not None:
        report.color_accuracy = color_accuracy(
            images, [dataset.attributes[i]["color"] for i in idx], dataset.spec.colors)
    return report


def run_ablation(base: TrainConfig, dataset: Dataset, scale_subsets: Sequence[Sequence[int]],
                 local_options: Sequence[bool] = (True,), seeds: Sequence[int] = (0,),
                 vs_model=None, classifier=None, n_images: int = 200, run_root=None,
                 metrics: Sequence[str] = ("vs", "msssim", "inception")):
    """Train and evaluate one model per (scale subset, local loss, seed).

    Returns ``{row name: MetricReport}``; format with
    :func:`nestgan.evaluation.format_table`.
    """
    rows = {}
    for subset in scale_subsets:
        for local in local_options:
            for seed in seeds:
                cfg = TrainConfig.from_dict({**base.to_dict(), "enabled_scales": list(subset),
                                             "local_loss": local, "seed": seed})
                name = f"D@{'+'.join(map(str, subset))} local={'on' if local else 'off'} seed={seed}"
                run_dir = None if run_root is None else Path(run_root) / name.replace(" ", "_").replace("@", "")
                result = train(cfg, dataset, run_dir)
                rows[name] = evaluate_model(result.state, dataset, vs_model, classifier, metrics,
                                            n_images=n_images, seed=seed)
                log.info("%s: %s", name, rows[name].flat())
    return rows
