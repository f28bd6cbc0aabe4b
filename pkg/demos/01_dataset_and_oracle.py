"""Render the synthetic captioned-shapes dataset and check the color oracle.

Every image shows one colored shape on a gray background. Its caption names
the size, color, shape and position. The color oracle reads the dominant
foreground color back from pixels; it is what later scores whether a
generated image obeys its caption.

    python demos/01_dataset_and_oracle.py [out_dir]
"""
import sys
from pathlib import Path

from nestgan.data import DatasetSpec, color_oracle, generate_synthetic_dataset
from nestgan.trainer import save_grid

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
ds = generate_synthetic_dataset(DatasetSpec(samples_per_class=8, resolution=64))
print(f"{len(ds)} images, classes: {', '.join(ds.class_names)}")
for i in range(0, len(ds), 16):
    print(f"  {ds.ids[i]:>22}: {' '.join(ds.captions[i])}")

hits = sum(color_oracle(img, ds.spec.colors) == a["color"] for img, a in zip(ds.images, ds.attributes))
print(f"color oracle agrees with the caption on {hits}/{len(ds)} real images")

ds.save(out / "dataset")
save_grid(ds.image_tensor()[::2], 4, out / "dataset_grid.png")
print(f"dataset written to {out / 'dataset'}; preview in {out / 'dataset_grid.png'}")
