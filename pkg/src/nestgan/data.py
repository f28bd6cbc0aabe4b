"""Procedural captioned-shapes dataset, batch assembly and external-data ingestion."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .conditioning import Vocabulary

PALETTE = {
    "red": (0.86, 0.12, 0.12),
    "green": (0.10, 0.70, 0.18),
    "blue": (0.12, 0.24, 0.88),
    "yellow": (0.92, 0.84, 0.10),
    "magenta": (0.82, 0.12, 0.78),
    "cyan": (0.10, 0.78, 0.82),
    "orange": (0.95, 0.50, 0.08),
    "white": (0.97, 0.97, 0.97),
}
SHAPES = ("circle", "square", "triangle", "diamond")
SIZES = {"small": 0.17, "large": 0.28}  # radius as a fraction of the image side
POSITIONS = {
    "center": (0.5, 0.5),
    "left": (0.36, 0.5),
    "right": (0.64, 0.5),
    "top": (0.5, 0.36),
    "bottom": (0.5, 0.64),
}
ATTRIBUTE_KEYS = ("color", "shape", "size", "position")
BACKGROUND = (0.5, 0.5, 0.5)
SUPERSAMPLE = 4


class DatasetError(ValueError):
    pass


@dataclass
class DatasetSpec:
    colors: tuple[str, ...] = ("red", "green", "blue", "yellow")
    shapes: tuple[str, ...] = ("circle", "square")
    sizes: tuple[str, ...] = ("small", "large")
    positions: tuple[str, ...] = ("center", "left", "right", "top", "bottom")
    resolution: int = 64
    samples_per_class: int = 32
    seed: int = 0

    def __post_init__(self):
        for key, values, known in (("colors", self.colors, PALETTE), ("shapes", self.shapes, SHAPES),
                                   ("sizes", self.sizes, SIZES), ("positions", self.positions, POSITIONS)):
            values = tuple(values)
            setattr(self, key, values)
            if not values:
                raise DatasetError(f"{key}: at least one value required")
            bad = [v for v in values if v not in known]
            if bad:
                raise DatasetError(f"{key}: unknown value(s) {bad}; choose from {sorted(known)}")
        if len(self.colors) * len(self.shapes) < 2:
            raise DatasetError("need at least 2 color x shape classes for mismatch sampling")
        if self.samples_per_class < 1:
            raise DatasetError("samples_per_class must be >= 1")

    @property
    def classes(self) -> list[tuple[str, str]]:
        return [(c, s) for c in self.colors for s in self.shapes]

    def vocabulary(self) -> Vocabulary:
        words = ["a", "on", "the", "in", "plain", "gray", "background"]
        words += list(self.sizes) + list(self.colors) + list(self.shapes) + list(self.positions)
        return Vocabulary(words)


def _shape_mask(shape: str, res: int, cx: float, cy: float, r: float) -> np.ndarray:
    n = res * SUPERSAMPLE
    coords = (np.arange(n) + 0.5) / n
    x, y = np.meshgrid(coords, coords)
    dx, dy = x - cx, y - cy
    if shape == "circle":
        m = dx ** 2 + dy ** 2 <= r ** 2
    elif shape == "square":
        h = r * 0.85
        m = (np.abs(dx) <= h) & (np.abs(dy) <= h)
    elif shape == "diamond":
        m = np.abs(dx) + np.abs(dy) <= r * 1.2
    elif shape == "triangle":
        # upward triangle inscribed in the circle of radius r
        top, base = cy - r, cy + r * 0.6
        half = (y - top) / (base - top) * r * 1.05
        m = (y >= top) & (y <= base) & (np.abs(dx) <= half)
    else:
        raise DatasetError(f"unknown shape {shape!r}")
    # area-average the supersampled mask for anti-aliasing
    return m.reshape(res, SUPERSAMPLE, res, SUPERSAMPLE).mean(axis=(1, 3))


def render(attributes: dict, resolution: int = 64, seed: int = 0) -> np.ndarray:
    """Render ``{color, shape, size, position}`` as a uint8 ``(3, H, W)`` image.

    Jitter moves the shape and rescales it within bounds that keep the
    position and size words true.
    """
    rng = np.random.default_rng(seed)
    cx, cy = POSITIONS[attributes["position"]]
    r = SIZES[attributes["size"]]
    cx += rng.uniform(-0.05, 0.05)
    cy += rng.uniform(-0.05, 0.05)
    r *= rng.uniform(0.9, 1.1)
    alpha = _shape_mask(attributes["shape"], resolution, cx, cy, r)
    color = np.asarray(PALETTE[attributes["color"]]) * rng.uniform(0.92, 1.0)
    bg = np.asarray(BACKGROUND) + rng.uniform(-0.04, 0.04)
    img = alpha[None] * color[:, None, None] + (1.0 - alpha[None]) * bg[:, None, None]
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def to_unit_range(images_u8) -> torch.Tensor:
    """uint8 images to float tensors in [-1, 1]."""
    t = torch.as_tensor(np.asarray(images_u8)).float()
    return t / 127.5 - 1.0


def downsample(images: torch.Tensor, size: int) -> torch.Tensor:
    """Area-average downsampling to ``size`` x ``size``."""
    if images.shape[-1] == size:
        return images
    return F.adaptive_avg_pool2d(images, size)


def pyramid(images: torch.Tensor, scales: Sequence[int]) -> dict[int, torch.Tensor]:
    return {s: downsample(images, s) for s in scales}


@dataclass
class Dataset:
    """Immutable collection of captioned images.

    ``captions`` holds token tuples for synthetic data; ingested data carries
    precomputed ``embeddings`` instead.
    """
    images: np.ndarray  # uint8 (N, 3, H, W)
    labels: np.ndarray  # int64 (N,)
    class_names: list[str]
    ids: list[str]
    captions: list[tuple[str, ...]] | None = None
    embeddings: np.ndarray | None = None
    vocab: Vocabulary | None = None
    spec: DatasetSpec | None = None
    attributes: list[dict] | None = None
    is_real: bool = field(default=True)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def resolution(self) -> int:
        return self.images.shape[-1]

    def image_tensor(self, idx=None) -> torch.Tensor:
        imgs = self.images if idx is None else self.images[np.asarray(idx)]
        return to_unit_range(imgs)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            images=self.images[idx], labels=self.labels[idx], class_names=self.class_names,
            ids=[self.ids[i] for i in idx],
            captions=None if self.captions is None else [self.captions[i] for i in idx],
            embeddings=None if self.embeddings is None else self.embeddings[idx],
            vocab=self.vocab, spec=self.spec,
            attributes=None if self.attributes is None else [self.attributes[i] for i in idx],
            is_real=self.is_real)

    def split(self, holdout_fraction: float, seed: int = 0) -> tuple["Dataset", "Dataset"]:
        """Class-stratified train/holdout split."""
        rng = np.random.default_rng(seed)
        train, hold = [], []
        for label in np.unique(self.labels):
            idx = np.flatnonzero(self.labels == label)
            rng.shuffle(idx)
            k = max(1, int(round(len(idx) * holdout_fraction)))
            hold.extend(idx[:k])
            train.extend(idx[k:])
        return self.subset(np.sort(train)), self.subset(np.sort(hold))

    def save(self, root) -> None:
        """Write manifest, lossless PNG images, vocabulary and spec."""
        if self.captions is None:
            raise DatasetError("only captioned datasets can be saved in this layout")
        root = Path(root)
        (root / "images").mkdir(parents=True, exist_ok=True)
        with open(root / "manifest.tsv", "w", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            attr_keys = ATTRIBUTE_KEYS if self.attributes is not None else ()
            w.writerow(["id", "class", "caption", "image", *attr_keys])
            for i, sid in enumerate(self.ids):
                rel = f"images/{sid}.png"
                Image.fromarray(self.images[i].transpose(1, 2, 0)).save(root / rel)
                attrs = [self.attributes[i][k] for k in attr_keys]
                w.writerow([sid, self.class_names[self.labels[i]], " ".join(self.captions[i]), rel, *attrs])
        self.vocab.save(root / "vocab.txt")
        if self.spec is not None:
            (root / "spec.json").write_text(json.dumps(asdict(self.spec), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, root) -> "Dataset":
        root = Path(root)
        manifest = root / "manifest.tsv"
        if not manifest.exists():
            raise DatasetError(f"no manifest.tsv in {root}")
        spec = None
        if (root / "spec.json").exists():
            spec = DatasetSpec(**json.loads((root / "spec.json").read_text()))
        vocab = Vocabulary.load(root / "vocab.txt")
        with open(manifest, newline="") as fh:
            rows = list(csv.DictReader(fh, delimiter="\t"))
        class_names = spec_class_names(spec) if spec else sorted({r["class"] for r in rows})
        images = np.stack([np.asarray(Image.open(root / r["image"]).convert("RGB")).transpose(2, 0, 1)
                           for r in rows])
        labels = np.array([class_names.index(r["class"]) for r in rows], dtype=np.int64)
        captions = [tuple(r["caption"].split()) for r in rows]
        for cap in captions:
            vocab.encode(cap)
        attributes = None
        if rows and all(k in rows[0] for k in ATTRIBUTE_KEYS):
            attributes = [{k: r[k] for k in ATTRIBUTE_KEYS} for r in rows]
        return cls(images=images, labels=labels, class_names=class_names,
                   ids=[r["id"] for r in rows], captions=captions, vocab=vocab, spec=spec,
                   attributes=attributes)


def spec_class_names(spec: DatasetSpec) -> list[str]:
    return [f"{c}_{s}" for c, s in spec.classes]


def caption_for(attrs: dict, rng: np.random.Generator) -> tuple[str, ...]:
    pos = attrs["position"]
    words = ["a", attrs["size"], attrs["color"], attrs["shape"]]
    words += ["in", "the", "center"] if pos == "center" else ["on", "the", pos]
    if rng.random() < 0.5:
        words += ["on", "a", "plain", "gray", "background"]
    return tuple(words)


def generate_synthetic_dataset(spec: DatasetSpec | None = None, seed: int | None = None) -> Dataset:
    spec = spec or DatasetSpec()
    seed = spec.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    images, labels, ids, captions, attributes = [], [], [], [], []
    for label, (color, shape) in enumerate(spec.classes):
        for k in range(spec.samples_per_class):
            attrs = {"color": color, "shape": shape,
                     "size": spec.sizes[rng.integers(len(spec.sizes))],
                     "position": spec.positions[rng.integers(len(spec.positions))]}
            jitter = int(rng.integers(2 ** 31))
            images.append(render(attrs, spec.resolution, jitter))
            captions.append(caption_for(attrs, rng))
            labels.append(label)
            attributes.append(attrs)
            ids.append(f"{color}_{shape}_{k:04d}")
    return Dataset(images=np.stack(images), labels=np.array(labels, dtype=np.int64),
                   class_names=spec_class_names(spec), ids=ids, captions=captions,
                   vocab=spec.vocabulary(), spec=spec, attributes=attributes)


def color_oracle(image, palette: Sequence[str] | None = None, threshold: float = 0.12) -> str | None:
    """Dominant palette color among the foreground pixels.

    ``image`` is ``(3, H, W)`` in [-1, 1] (tensor) or uint8 (array). Foreground
    pixels are those farther than ``threshold`` from the neutral background;
    each votes for its nearest palette color and the most common vote wins.
    Returns None when there is no foreground.
    """
    palette = list(palette or PALETTE)
    if isinstance(image, np.ndarray) and image.dtype == np.uint8:
        x = image.astype(np.float64) / 255.0
    else:
        x = (torch.as_tensor(image).detach().double().cpu().numpy() + 1.0) / 2.0
    pixels = x.reshape(3, -1).T
    dist = np.linalg.norm(pixels - np.asarray(BACKGROUND), axis=1)
    fg = pixels[dist > max(threshold, np.quantile(dist, 0.75) * 0.5)]
    if len(fg) == 0:
        return None
    refs = np.asarray([PALETTE[c] for c in palette])
    votes = np.argmin(np.linalg.norm(fg[:, None, :] - refs[None], axis=2), axis=1)
    return palette[int(np.bincount(votes, minlength=len(palette)).argmax())]


@dataclass
class TrainingBatch:
    indices: np.ndarray
    images: dict[int, torch.Tensor]  # scale -> (B, 3, s, s)
    labels: torch.Tensor
    matched: list | torch.Tensor  # token tuples or embedding rows
    mismatched: list | torch.Tensor
    mismatched_labels: torch.Tensor


def _text_rows(dataset: Dataset, idx):
    if dataset.embeddings is not None:
        return torch.as_tensor(dataset.embeddings[np.asarray(idx)]).float()
    return [dataset.captions[i] for i in idx]


def make_batch(dataset: Dataset, batch_size: int, rng: np.random.Generator,
               scales: Sequence[int], indices=None) -> TrainingBatch:
    """Sample a batch with a matched and a different-class mismatched caption per image."""
    n = len(dataset)
    if batch_size > n:
        raise DatasetError(f"batch size {batch_size} exceeds dataset size {n}")
    idx = np.asarray(indices) if indices is not None else rng.choice(n, batch_size, replace=False)
    labels = dataset.labels[idx]
    mis = np.empty_like(idx)
    for k, label in enumerate(labels):
        pool = np.flatnonzero(dataset.labels != label)
        if len(pool) == 0:
            raise DatasetError("mismatch sampling needs at least two classes")
        mis[k] = pool[rng.integers(len(pool))]
    images = pyramid(dataset.image_tensor(idx), scales)
    return TrainingBatch(indices=idx, images=images, labels=torch.as_tensor(labels),
                         matched=_text_rows(dataset, idx), mismatched=_text_rows(dataset, mis),
                         mismatched_labels=torch.as_tensor(dataset.labels[mis]))


def iterate_epoch(dataset: Dataset, batch_size: int, rng: np.random.Generator, scales):
    """Seeded shuffled pass over the dataset; the last partial batch is dropped."""
    order = rng.permutation(len(dataset))
    for start in range(0, len(order) - batch_size + 1, batch_size):
        yield make_batch(dataset, batch_size, rng, scales, indices=order[start:start + batch_size])


def ingest_external(root, text_dim: int, split: str = "train") -> Dataset:
    """Load images with precomputed caption embeddings.

    Layout under ``root``: ``manifest.tsv`` (``id``, ``class``, ``image``
    columns, image paths relative to ``root``), ``embeddings.txt`` whose first
    line is ``count dim`` followed by one whitespace-separated vector per
    manifest row, and ``{split}.txt`` listing the ids in that split.
    """
    root = Path(root)
    for name in ("manifest.tsv", "embeddings.txt", f"{split}.txt"):
        if not (root / name).exists():
            raise DatasetError(f"missing {name} in {root}")
    with open(root / "manifest.tsv", newline="") as fh:
        rows = list(csv.DictReader(fh, delimiter="\t"))
    with open(root / "embeddings.txt") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise DatasetError("embeddings.txt header must be 'count dim'")
        count, dim = int(header[0]), int(header[1])
        if dim != text_dim:
            raise DatasetError(f"embedding dimension {dim} does not match configured text dim {text_dim}")
        vectors = np.loadtxt(fh, dtype=np.float32, ndmin=2)
    if count != len(rows) or vectors.shape != (count, dim):
        raise DatasetError(f"embeddings.txt holds {vectors.shape[0]} rows of width "
                           f"{vectors.shape[1] if vectors.ndim == 2 else '?'}; expected {len(rows)} x {dim}")
    wanted = [line.strip() for line in (root / f"{split}.txt").read_text().splitlines() if line.strip()]
    by_id = {r["id"]: i for i, r in enumerate(rows)}
    unknown = [w for w in wanted if w not in by_id]
    if unknown:
        raise DatasetError(f"split {split!r} lists unknown ids {unknown[:5]}")
    class_names = sorted({r["class"] for r in rows})
    images, labels, embs = [], [], []
    for sid in wanted:
        r = rows[by_id[sid]]
        path = root / r["image"]
        if not path.exists():
            raise DatasetError(f"missing image file {path}")
        images.append(np.asarray(Image.open(path).convert("RGB")).transpose(2, 0, 1))
        labels.append(class_names.index(r["class"]))
        embs.append(vectors[by_id[sid]])
    sizes = {im.shape for im in images}
    if len(sizes) != 1:
        raise DatasetError(f"images must share one size, found {sorted(sizes)}")
    return Dataset(images=np.stack(images), labels=np.array(labels, dtype=np.int64),
                   class_names=class_names, ids=wanted, embeddings=np.stack(embs))
