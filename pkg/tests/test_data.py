import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from nestgan.data import (PALETTE, POSITIONS, SIZES, Dataset, DatasetError, DatasetSpec, color_oracle,
                          downsample, generate_synthetic_dataset, ingest_external, iterate_epoch,
                          make_batch, pyramid, render, to_unit_range)


@pytest.fixture(scope="module")
def small():
    return generate_synthetic_dataset(DatasetSpec(samples_per_class=6, resolution=32))


def test_class_count_and_labels(small):
    assert len(small.class_names) == 8
    assert len(small) == 48
    assert np.bincount(small.labels).tolist() == [6] * 8


def test_captions_name_their_attributes(small):
    for cap, attrs, label in zip(small.captions, small.attributes, small.labels):
        assert attrs["color"] in cap and attrs["shape"] in cap and attrs["size"] in cap
        assert small.class_names[label] == f"{attrs['color']}_{attrs['shape']}"


def test_same_seed_identical():
    a = generate_synthetic_dataset(DatasetSpec(samples_per_class=3, resolution=16, seed=4))
    b = generate_synthetic_dataset(DatasetSpec(samples_per_class=3, resolution=16, seed=4))
    assert np.array_equal(a.images, b.images) and a.captions == b.captions


def test_invalid_color_names_key():
    with pytest.raises(DatasetError, match="colors"):
        DatasetSpec(colors=("red", "purple"))


def test_single_class_rejected():
    with pytest.raises(DatasetError):
        DatasetSpec(colors=("red",), shapes=("circle",))


def test_color_oracle_sweep_is_exact():
    # every palette color, shape, size and position renders as its own color
    spec = DatasetSpec(colors=tuple(PALETTE), shapes=("circle", "square", "triangle", "diamond"))
    hits = total = 0
    for color in spec.colors:
        for shape in spec.shapes:
            for size in SIZES:
                for pos in POSITIONS:
                    for seed in range(2):
                        img = render({"color": color, "shape": shape, "size": size, "position": pos},
                                     64, seed)
                        hits += color_oracle(img, spec.colors) == color
                        total += 1
    assert hits == total


def test_color_oracle_accepts_unit_range_tensor(small):
    img = small.image_tensor([0])[0]
    assert color_oracle(img, small.spec.colors) == small.attributes[0]["color"]


def test_color_oracle_blank_image_is_none():
    blank = torch.zeros(3, 16, 16)  # exactly the background gray
    assert color_oracle(blank) is None


def test_shapes_stay_inside_frame():
    # a border row free of foreground means no clipping at the largest size and edge positions
    for pos in POSITIONS:
        for seed in range(5):
            img = render({"color": "red", "shape": "square", "size": "large", "position": pos}, 64, seed)
            border = np.concatenate([img[:, 0], img[:, -1], img[:, :, 0], img[:, :, -1]], axis=1)
            assert np.abs(border.astype(int) - 128).max() < 20


def test_unit_range():
    x = to_unit_range(np.array([0, 255, 128], dtype=np.uint8))
    assert x[0] == -1.0 and x[1] == 1.0


def test_downsample_is_area_mean():
    x = torch.arange(16, dtype=torch.float32).view(1, 1, 4, 4)
    y = downsample(x, 2)
    # oracle: explicit 2x2 block means
    expected = torch.tensor([[[[2.5, 4.5], [10.5, 12.5]]]])
    assert torch.equal(y, expected)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000))
def test_pyramid_preserves_global_mean(seed):
    x = torch.rand(2, 3, 32, 32, generator=torch.Generator().manual_seed(seed))
    for s, img in pyramid(x, (8, 16, 32)).items():
        assert img.shape[-1] == s
        assert torch.allclose(img.mean(dim=(2, 3)), x.mean(dim=(2, 3)), atol=1e-6)


def test_batch_mismatch_always_other_class(small):
    rng = np.random.default_rng(0)
    for _ in range(20):
        b = make_batch(small, 8, rng, (16, 32))
        assert (b.mismatched_labels != b.labels).all()
        assert b.images[16].shape == (8, 3, 16, 16)
        assert [small.captions[i] for i in b.indices] == b.matched


def test_batch_too_large_rejected(small):
    with pytest.raises(DatasetError):
        make_batch(small, 1000, np.random.default_rng(0), (16,))


def test_epoch_is_seeded_permutation(small):
    def order(seed):
        return np.concatenate([b.indices for b in iterate_epoch(small, 8, np.random.default_rng(seed), (16,))])
    a = order(1)
    assert np.array_equal(a, order(1))
    assert sorted(a.tolist()) == list(range(48))


def test_split_stratified_and_disjoint(small):
    train, hold = small.split(0.25, seed=0)
    assert set(train.ids).isdisjoint(hold.ids)
    assert len(train) + len(hold) == len(small)
    assert sorted(set(hold.labels.tolist())) == list(range(8))


def test_save_load_roundtrip(small, tmp_path):
    small.save(tmp_path / "ds")
    back = Dataset.load(tmp_path / "ds")
    assert np.array_equal(back.images, small.images)
    assert back.captions == small.captions
    assert back.class_names == small.class_names
    assert np.array_equal(back.labels, small.labels)
    assert back.attributes == small.attributes
    assert back.vocab == small.vocab


def test_save_twice_identical_manifest(small, tmp_path):
    small.save(tmp_path / "a")
    small.save(tmp_path / "b")
    assert (tmp_path / "a/manifest.tsv").read_bytes() == (tmp_path / "b/manifest.tsv").read_bytes()


def _external(root, dim=5, n=6, header_dim=None):
    from PIL import Image
    (root / "img").mkdir(parents=True)
    rows = ["id\tclass\timage"]
    rng = np.random.default_rng(0)
    for i in range(n):
        Image.fromarray(rng.integers(0, 255, (16, 16, 3), dtype=np.uint8)).save(root / f"img/{i}.png")
        rows.append(f"s{i}\t{'ab'[i % 2]}\timg/{i}.png")
    (root / "manifest.tsv").write_text("\n".join(rows) + "\n")
    vecs = rng.normal(size=(n, dim))
    lines = [f"{n} {header_dim or dim}"] + [" ".join(f"{v:.6f}" for v in row) for row in vecs]
    (root / "embeddings.txt").write_text("\n".join(lines) + "\n")
    (root / "train.txt").write_text("s0\ns1\ns2\ns3\n")
    (root / "test.txt").write_text("s4\ns5\n")
    return vecs


def test_ingest_external_keeps_split(tmp_path):
    vecs = _external(tmp_path)
    train = ingest_external(tmp_path, 5, "train")
    test = ingest_external(tmp_path, 5, "test")
    assert train.ids == ["s0", "s1", "s2", "s3"] and test.ids == ["s4", "s5"]
    assert np.allclose(test.embeddings, vecs[4:], atol=1e-6)
    assert train.images.shape == (4, 3, 16, 16)


def test_ingest_dim_mismatch_names_both(tmp_path):
    _external(tmp_path)
    with pytest.raises(DatasetError, match=r"5.*7"):
        ingest_external(tmp_path, 7)


def test_ingest_missing_file(tmp_path):
    _external(tmp_path)
    (tmp_path / "img/2.png").unlink()
    with pytest.raises(DatasetError, match="missing image"):
        ingest_external(tmp_path, 5)
