"""Train a small model on the shapes dataset, then sample and interpolate.

This runs the light channel preset for a few epochs so it finishes in a few
minutes on one CPU core; raise EPOCHS for better images.

    python demos/04_train_and_sample.py [out_dir] [epochs]
"""
import logging
import sys
from pathlib import Path

import torch

from nestgan.data import DatasetSpec, generate_synthetic_dataset
from nestgan.trainer import (TrainConfig, color_accuracy, evaluation_captions, interpolate, sample,
                             save_interpolation, synthesize, train)

logging.basicConfig(level=logging.INFO, format="%(message)s")
torch.set_num_threads(1)
out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 5

ds = generate_synthetic_dataset(DatasetSpec(samples_per_class=32))
config = TrainConfig.desk_light(epochs=epochs, checkpoint_every=0)
result = train(config, ds, out / "run")
state = result.state
print(f"trained {state.step} steps; checkpoint at {result.checkpoint}")

captions = [("a", "large", color, "circle", "in", "the", "center") for color in ds.spec.colors]
sample(state, captions, 6, seed=0, out_dir=out / "samples")
print(f"one row per caption in {out / 'samples'}/grid_<scale>.png")

frames = interpolate(state, captions[0], captions[2], steps=8, seed=0)
save_interpolation(frames, out / "interpolation")
print(f"interpolation {' '.join(captions[0])} -> {' '.join(captions[2])} in {out / 'interpolation'}")

idx = evaluation_captions(ds, 200, seed=0)
images = synthesize(state, [ds.captions[i] for i in idx], seed=0)[config.scales[-1]]
acc = color_accuracy(images, [ds.attributes[i]["color"] for i in idx], ds.spec.colors)
print(f"color oracle agrees with the caption on {acc:.0%} of 200 samples")
