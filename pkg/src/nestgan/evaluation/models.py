"""Surrogate feature extractors trained on real data: the visual-semantic
embedding model and the class-probability model behind the Inception-style score."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..conditioning import Vocabulary
from ..data import Dataset, downsample
from .metrics import bidirectional_ranking_loss, cosine_similarity


class LeakageError(RuntimeError):
    """Raised when an evaluation model is asked to train on non-real images."""


def _require_real(dataset: Dataset) -> None:
    if not getattr(dataset, "is_real", False):
        raise LeakageError("evaluation models train on real images only")


def conv_encoder(resolution: int, width: int = 16, out_dim: int = 128) -> nn.Sequential:
    """3x3 conv + max-pool stages down to 4x4, global max pooling, linear projection."""
    layers, c_in, c_out, size = [], 3, width, resolution
    while size > 4:
        layers += [nn.Conv2d(c_in, c_out, 3, padding=1), nn.BatchNorm2d(c_out), nn.ReLU(),
                   nn.MaxPool2d(2)]
        c_in, c_out, size = c_out, min(c_out * 2, 64), size // 2
    layers += [nn.AdaptiveMaxPool2d(1), nn.Flatten(), nn.Linear(c_in, out_dim)]
    return nn.Sequential(*layers)


@dataclass
class VSConfig:
    embed_dim: int = 128  # common space; 512 at full scale
    feature_dim: int = 128
    margin: float = 0.2
    batch_size: int = 32
    lr: float = 1e-3
    max_epochs: int = 40
    patience: int = 4
    holdout_fraction: float = 0.2
    seed: int = 0


class VSModel(nn.Module):
    """f_cnn -> f_v for images, f_t for text, compared by cosine similarity."""

    def __init__(self, resolution: int, text_dim: int, config: VSConfig,
                 vocab: Vocabulary | None = None):
        super().__init__()
        self.resolution = resolution
        self.text_dim = text_dim
        self.config = config
        self.vocab = vocab
        self.f_cnn = conv_encoder(resolution, out_dim=config.feature_dim)
        self.f_v = nn.Linear(config.feature_dim, config.embed_dim)
        self.f_t = nn.Sequential(nn.Linear(text_dim, config.embed_dim), nn.LeakyReLU(0.2),
                                 nn.Linear(config.embed_dim, config.embed_dim))

    def text_features(self, texts) -> torch.Tensor:
        """Bag-of-words rows for token captions; precomputed embeddings pass through."""
        if torch.is_tensor(texts) or isinstance(texts, np.ndarray):
            return torch.as_tensor(texts).float()
        if self.vocab is None:
            raise ValueError("this VS model was trained on embeddings, not token captions")
        return self.vocab.bag_of_words(texts)

    def embed_images(self, images: torch.Tensor) -> torch.Tensor:
        return self.f_v(self.f_cnn(downsample(images, self.resolution)))

    def embed_text(self, texts) -> torch.Tensor:
        return self.f_t(self.text_features(texts))

    def save(self, path) -> None:
        torch.save({"kind": "vs_model", "resolution": self.resolution, "text_dim": self.text_dim,
                    "config": asdict(self.config),
                    "vocab": None if self.vocab is None else self.vocab.tokens,
                    "state": self.state_dict()}, path)

    @classmethod
    def load(cls, path) -> "VSModel":
        blob = torch.load(path, map_location="cpu", weights_only=False)
        vocab = None if blob["vocab"] is None else Vocabulary(blob["vocab"])
        model = cls(blob["resolution"], blob["text_dim"], VSConfig(**blob["config"]), vocab)
        model.load_state_dict(blob["state"])
        return model.eval()


def _dataset_texts(dataset: Dataset, idx):
    if dataset.embeddings is not None:
        return torch.as_tensor(dataset.embeddings[idx]).float()
    return [dataset.captions[i] for i in idx]


def _same_caption_mask(dataset: Dataset, idx) -> torch.Tensor | None:
    if dataset.captions is None:
        return None
    caps = [dataset.captions[i] for i in idx]
    return torch.tensor([[a == b for b in caps] for a in caps])


def ranking_loss_on(model: VSModel, dataset: Dataset, idx) -> torch.Tensor:
    v = model.embed_images(dataset.image_tensor(idx))
    t = model.embed_text(_dataset_texts(dataset, idx))
    return bidirectional_ranking_loss(v, t, model.config.margin, _same_caption_mask(dataset, idx))


def train_vs_model(dataset: Dataset, config: VSConfig | None = None) -> VSModel:
    """Fit the image/text projections on real pairs until the holdout loss plateaus."""
    _require_real(dataset)
    config = config or VSConfig()
    if len(dataset) < config.batch_size:
        raise ValueError(f"dataset of {len(dataset)} samples is smaller than batch {config.batch_size}")
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    train, hold = dataset.split(config.holdout_fraction, seed=config.seed)
    text_dim = dataset.embeddings.shape[1] if dataset.embeddings is not None else len(dataset.vocab)
    model = VSModel(dataset.resolution, text_dim, config,
                    vocab=None if dataset.embeddings is not None else dataset.vocab)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    best, best_state, stale = float("inf"), None, 0
    hold_idx = np.arange(len(hold))
    for epoch in range(config.max_epochs):
        model.train()
        order = rng.permutation(len(train))
        for start in range(0, len(order) - config.batch_size + 1, config.batch_size):
            loss = ranking_loss_on(model, train, order[start:start + config.batch_size])
            opt.zero_grad()
            loss.backward()
            opt.step()
        model.eval()
        with torch.no_grad():
            chunks = np.array_split(hold_idx, max(1, len(hold_idx) // config.batch_size))
            val = float(sum(ranking_loss_on(model, hold, c) for c in chunks)) / len(hold_idx)
        if val < best - 1e-4:
            best, stale = val, 0
            best_state = {k: v.clone() for k, v in model.state_dict().items()}
        else:
            stale += 1
            if stale >= config.patience:
                break
    model.load_state_dict(best_state)
    model.holdout_loss = best
    model.holdout = hold
    return model.eval()


@torch.no_grad()
def vs_score(model: VSModel, images: torch.Tensor, texts) -> torch.Tensor:
    """Per-sample cosine between projected image features and projected text."""
    model.eval()
    return cosine_similarity(model.embed_images(images), model.embed_text(texts))


@dataclass
class ClassifierConfig:
    width: int = 16
    feature_dim: int = 64
    batch_size: int = 32
    lr: float = 1e-3
    epochs: int = 20
    holdout_fraction: float = 0.2
    accuracy_floor: float = 0.9
    seed: int = 0


class EvalClassifier(nn.Module):
    def __init__(self, resolution: int, n_classes: int, config: ClassifierConfig):
        super().__init__()
        self.resolution = resolution
        self.n_classes = n_classes
        self.config = config
        self.net = nn.Sequential(conv_encoder(resolution, config.width, config.feature_dim),
                                 nn.ReLU(), nn.Linear(config.feature_dim, n_classes))

    def forward(self, images):
        return self.net(downsample(images, self.resolution))

    @torch.no_grad()
    def predict_proba(self, images: torch.Tensor) -> torch.Tensor:
        self.eval()
        return F.softmax(self.forward(images).double(), dim=1)

    def save(self, path) -> None:
        torch.save({"kind": "eval_classifier", "resolution": self.resolution,
                    "n_classes": self.n_classes, "config": asdict(self.config),
                    "holdout_accuracy": getattr(self, "holdout_accuracy", None),
                    "state": self.state_dict()}, path)

    @classmethod
    def load(cls, path) -> "EvalClassifier":
        blob = torch.load(path, map_location="cpu", weights_only=False)
        model = cls(blob["resolution"], blob["n_classes"], ClassifierConfig(**blob["config"]))
        model.load_state_dict(blob["state"])
        model.holdout_accuracy = blob["holdout_accuracy"]
        return model.eval()


def train_eval_classifier(dataset: Dataset, config: ClassifierConfig | None = None) -> EvalClassifier:
    """Train the class-probability model; fails if holdout accuracy stays below the floor."""
    _require_real(dataset)
    config = config or ClassifierConfig()
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    train, hold = dataset.split(config.holdout_fraction, seed=config.seed)
    model = EvalClassifier(dataset.resolution, len(dataset.class_names), config)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    labels = torch.as_tensor(train.labels)
    for epoch in range(config.epochs):
        model.train()
        order = rng.permutation(len(train))
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            loss = F.cross_entropy(model(train.image_tensor(idx)), labels[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    pred = model.predict_proba(hold.image_tensor()).argmax(dim=1).numpy()
    model.holdout_accuracy = float((pred == hold.labels).mean())
    if model.holdout_accuracy < config.accuracy_floor:
        raise RuntimeError(f"classifier holdout accuracy {model.holdout_accuracy:.3f} "
                           f"is below the floor {config.accuracy_floor}")
    return model.eval()
