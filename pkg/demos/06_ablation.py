"""Ablation over discriminator placement and the local image loss.

Trains one model per row (all scales vs the last scale only, local loss on
vs off) and prints a comparison table. Short schedules keep this quick; the
trends need the full schedule to show reliably.

    python demos/06_ablation.py [epochs]
"""
import sys

import torch

from nestgan.data import DatasetSpec, generate_synthetic_dataset
from nestgan.evaluation import format_table, train_vs_model
from nestgan.trainer import TrainConfig, run_ablation

torch.set_num_threads(1)
epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 3
ds = generate_synthetic_dataset(DatasetSpec(samples_per_class=32))
vs = train_vs_model(ds)
base = TrainConfig.desk_light(epochs=epochs, checkpoint_every=0)
rows = run_ablation(base, ds, [(64,), (16, 32, 64)], local_options=(True, False), vs_model=vs,
                    metrics=("vs", "msssim"))
print(format_table(rows, ["color_accuracy", "vs_mean", "msssim_overall"]))
