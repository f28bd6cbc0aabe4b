"""Metric report assembly and serialization."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .metrics import classwise_msssim, inception_style_score, overall_msssim, msssim_levels
from .models import EvalClassifier, VSModel, vs_score

METRICS = ("vs", "msssim", "inception")


@dataclass
class MetricReport:
    n_images: int = 0
    vs_mean: float | None = None
    vs_std: float | None = None
    msssim_overall: float | None = None
    msssim_levels: int | None = None
    msssim_classwise: dict[str, float] = field(default_factory=dict)
    msssim_class_std: float | None = None
    inception_mean: float | None = None
    inception_std: float | None = None
    color_accuracy: float | None = None

    def flat(self) -> dict[str, object]:
        out = {}
        for key, value in asdict(self).items():
            if isinstance(value, dict):
                for sub, v in sorted(value.items()):
                    out[f"{key}.{sub}"] = v
            else:
                out[key] = value
        return out

    def to_text(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in self.flat().items())

    def save(self, stem) -> None:
        """Write ``<stem>.txt`` (key = value lines) and ``<stem>.json``."""
        stem = Path(stem)
        stem.parent.mkdir(parents=True, exist_ok=True)
        stem.with_suffix(".txt").write_text(self.to_text())
        stem.with_suffix(".json").write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "MetricReport":
        return cls(**json.loads(Path(path).with_suffix(".json").read_text()))


def _fmt(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def evaluate_images(images: torch.Tensor, labels: Sequence[int], texts, class_names: Sequence[str],
                    metrics: Sequence[str] = METRICS, vs_model: VSModel | None = None,
                    classifier: EvalClassifier | None = None, pairs_per_class: int = 400,
                    overall_pairs: int = 2000, n_splits: int = 10, seed: int = 0) -> MetricReport:
    """Score a set of images (generated, or real for the ground-truth row)."""
    unknown = [m for m in metrics if m not in METRICS]
    if unknown:
        raise ValueError(f"unknown metric(s) {unknown}; choose from {list(METRICS)}")
    labels = np.asarray(labels)
    report = MetricReport(n_images=len(images))
    if "vs" in metrics:
        if vs_model is None:
            raise ValueError("VS similarity needs a trained VS model")
        scores = torch.cat([vs_score(vs_model, images[i:i + 256], texts[i:i + 256])
                            for i in range(0, len(images), 256)])
        report.vs_mean, report.vs_std = float(scores.mean()), float(scores.std(unbiased=False))
    if "msssim" in metrics:
        report.msssim_levels = msssim_levels(images.shape[-1])
        report.msssim_overall = overall_msssim(images, overall_pairs, seed=seed)
        groups = {class_names[c]: images[labels == c] for c in np.unique(labels)}
        report.msssim_classwise, report.msssim_class_std = classwise_msssim(
            groups, pairs_per_class, seed=seed)
    if "inception" in metrics:
        if classifier is None:
            raise ValueError("the Inception-style score needs a trained classifier")
        report.inception_mean, report.inception_std = inception_style_score(
            images, classifier, n_splits=min(n_splits, len(images)))
    return report


def format_table(rows: dict[str, MetricReport], columns: Sequence[str] | None = None) -> str:
    """Plain-text comparison table, one row per named report."""
    columns = list(columns or ["inception_mean", "inception_std", "vs_mean", "vs_std",
                               "msssim_overall", "color_accuracy"])
    width = max([len("run")] + [len(k) for k in rows]) + 2
    head = "run".ljust(width) + "".join(c.rjust(16) for c in columns)
    lines = [head, "-" * len(head)]
    for name, rep in rows.items():
        flat = rep.flat()
        lines.append(name.ljust(width) + "".join(_fmt(flat.get(c)).rjust(16) for c in columns))
    return "\n".join(lines) + "\n"
