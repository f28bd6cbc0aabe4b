"""Metric suite: VS similarity, MS-SSIM and the Inception-style score.

The VS model and the classifier are trained on real images only. Real images
(the ground-truth row) should score a higher VS similarity than samples from
an untrained generator.

    python demos/05_metrics.py
"""
import torch

from nestgan.data import DatasetSpec, generate_synthetic_dataset
from nestgan.evaluation import format_table, train_eval_classifier, train_vs_model
from nestgan.trainer import TrainConfig, evaluate_model, init_state

torch.set_num_threads(1)
ds = generate_synthetic_dataset(DatasetSpec(samples_per_class=32))
vs = train_vs_model(ds)
clf = train_eval_classifier(ds)
print(f"VS holdout loss {vs.holdout_loss:.3f}; classifier holdout accuracy {clf.holdout_accuracy:.3f}")

state = init_state(TrainConfig.desk_light(), ds.vocab)
rows = {
    "ground truth": evaluate_model(state, ds, vs, clf, n_images=200, ground_truth=True),
    "untrained G": evaluate_model(state, ds, vs, clf, n_images=200),
}
print(format_table(rows))
