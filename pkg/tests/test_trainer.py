import numpy as np
import pytest
import torch

from nestgan.data import DatasetSpec, generate_synthetic_dataset, make_batch
from nestgan.objectives import ScaleOutputs, generator_loss
from nestgan.trainer import (CheckpointError, NonFiniteLossError, TrainConfig, init_state, interpolate,
                             load_checkpoint, lr_at, run_ablation, sample, save_checkpoint, synthesize,
                             train, train_step)

TINY = dict(scales=(8, 16), r_values=(1, 1), batch_size=4, epochs=1, text_dim=8, c_dim=8, z_dim=4,
            g_base_channels=16, g_halve_at=(8,), g_min_channels=4, d_base_channels=4, d_max_channels=8,
            checkpoint_every=0)


@pytest.fixture(scope="module")
def ds():
    return generate_synthetic_dataset(DatasetSpec(samples_per_class=2, resolution=16))


def cfg(**kw):
    return TrainConfig(**{**TINY, **kw})


def test_lr_schedule_closed_forms():
    c = TrainConfig(lr_halving_period=100)
    assert lr_at(0, c) == 0.0002
    assert lr_at(99, c) == 0.0002
    assert lr_at(100, c) == 0.0001
    assert lr_at(250, c) == 0.00005


def test_config_rejects_unknown_keys_and_bad_scales():
    with pytest.raises(ValueError, match="bogus"):
        TrainConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        TrainConfig(enabled_scales=(128,))
    with pytest.raises(ValueError):
        TrainConfig(r_values=(1, 1))
    assert TrainConfig.from_dict(TrainConfig().to_dict()) == TrainConfig()


def test_optimizer_states_disjoint(ds):
    state = init_state(cfg(), ds.vocab)
    groups = [state.opt_g] + list(state.opt_d.values())
    ids = [{id(p) for g in o.param_groups for p in g["params"]} for o in groups]
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            assert not ids[i] & ids[j]


def _snapshot(module):
    return {k: v.detach().clone() for k, v in module.state_dict().items()}


def test_step_updates_every_enabled_module(ds):
    state = init_state(cfg(), ds.vocab)
    before = {n: _snapshot(m) for n, m in state.model.named_children()}
    batch = make_batch(ds, 4, np.random.default_rng(0), (8, 16))
    train_step(state, batch)
    for name, snap in before.items():
        after = state.model.get_submodule(name).state_dict()
        changed = any(not torch.equal(snap[k], after[k]) for k in snap)
        assert changed, name


def test_disabled_discriminator_untouched(ds):
    state = init_state(cfg(enabled_scales=(16,)), ds.vocab)
    assert set(state.opt_d) == {16}
    frozen = _snapshot(state.model.disc(8))
    train_step(state, make_batch(ds, 4, np.random.default_rng(0), (8, 16)))
    assert all(torch.equal(frozen[k], v) for k, v in state.model.disc(8).state_dict().items())


def test_local_loss_off_logs_no_local_terms(ds):
    state = init_state(cfg(local_loss=False), ds.vocab)
    result = train_step(state, make_batch(ds, 4, np.random.default_rng(0), (8, 16)))
    names = {name for _, name, _ in result.d_report.rows("d")}
    assert not any("local" in n for n in names)
    assert "d_mismatch_pair" in names


def test_train_writes_run_dir(ds, tmp_path):
    result = train(cfg(epochs=2, checkpoint_every=1), ds, tmp_path / "run")
    run = tmp_path / "run"
    assert (run / "config.json").exists() and (run / "final.pt").exists()
    assert sorted(p.name for p in (run / "checkpoints").iterdir()) == ["epoch_0001.pt", "epoch_0002.pt"]
    lines = (run / "metrics.log").read_text().splitlines()
    steps = {int(line.split("\t")[0]) for line in lines}
    assert steps == set(range(1, result.state.step + 1))
    assert all(np.isfinite(float(line.split("\t")[3])) for line in lines)


def test_same_seed_same_metrics_log(ds, tmp_path):
    torch.set_num_threads(1)
    train(cfg(epochs=2, seed=5), ds, tmp_path / "a")
    train(cfg(epochs=2, seed=5), ds, tmp_path / "b")
    assert (tmp_path / "a/metrics.log").read_bytes() == (tmp_path / "b/metrics.log").read_bytes()


def test_checkpoint_roundtrip_bit_identical(ds, tmp_path):
    state = train(cfg(), ds).state
    path = save_checkpoint(state, tmp_path / "c.pt")
    back = load_checkpoint(path)
    assert back.epoch == state.epoch and back.step == state.step
    for (k, a), (_, b) in zip(state.model.state_dict().items(), back.model.state_dict().items()):
        assert torch.equal(a, b), k
    assert torch.equal(back.rng.get_state(), state.rng.get_state())
    caps = ds.captions[:3]
    x, y = synthesize(state, caps, 7), synthesize(back, caps, 7)
    assert all(torch.equal(x[s], y[s]) for s in x)


def test_resume_matches_uninterrupted_run(ds, tmp_path):
    torch.set_num_threads(1)
    full = train(cfg(epochs=2), ds).state
    train(cfg(epochs=1), ds, tmp_path / "h")
    resumed = load_checkpoint(tmp_path / "h/final.pt")
    resumed.config = cfg(epochs=2)
    resumed = train(cfg(epochs=2), ds, state=resumed).state
    for (k, a), (_, b) in zip(full.model.state_dict().items(), resumed.model.state_dict().items()):
        assert torch.equal(a, b), k


def test_checkpoint_errors(ds, tmp_path):
    state = init_state(cfg(), ds.vocab)
    path = save_checkpoint(state, tmp_path / "c.pt")
    raw = path.read_bytes()
    (tmp_path / "trunc.pt").write_bytes(raw[: len(raw) // 2])
    with pytest.raises(CheckpointError, match="truncated|corrupt"):
        load_checkpoint(tmp_path / "trunc.pt")
    (tmp_path / "v9.pt").write_bytes(raw.replace(b"CHECKPOINT 1\n", b"CHECKPOINT 9\n", 1))
    with pytest.raises(CheckpointError, match=r"9.*1"):
        load_checkpoint(tmp_path / "v9.pt")
    (tmp_path / "junk.pt").write_bytes(b"hello\n")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "junk.pt")
    with pytest.raises(CheckpointError, match="scales"):
        load_checkpoint(path, scales=(16, 32, 64))


def test_nonfinite_loss_aborts_with_checkpoint_reference(ds, tmp_path):
    state = init_state(cfg(), ds.vocab)
    with torch.no_grad():
        state.model.disc(16).pair_head.weight.fill_(float("nan"))
    with pytest.raises(NonFiniteLossError) as err:
        train_step(state, make_batch(ds, 4, np.random.default_rng(0), (8, 16)), tmp_path / "last.pt")
    assert err.value.step == 0
    assert "last.pt" in str(err.value)


def test_sample_files_and_determinism(ds, tmp_path):
    state = init_state(cfg(), ds.vocab)
    caps = ds.captions[:2]
    out = sample(state, caps, 6, 3, tmp_path / "a")
    sample(state, caps, 6, 3, tmp_path / "b")
    for name in ("grid_8.png", "grid_16.png", "pyramids.npy"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert out[16].shape == (12, 3, 16, 16)
    first = out[16][:6]
    for i in range(6):
        for j in range(i + 1, 6):
            assert (first[i] - first[j]).abs().mean() > 0
    with open(tmp_path / "a/pyramids.npy", "rb") as fh:
        assert np.load(fh).shape == (12, 3, 8, 8)
        assert np.array_equal(np.load(fh), out[16].numpy())


def test_sample_independent_of_batching(ds):
    state = init_state(cfg(), ds.vocab)
    both = synthesize(state, ds.captions[:4], 1)
    assert torch.equal(both[16][0], synthesize(state, ds.captions[:1], 1)[16][0])


def test_interpolation_endpoints(ds):
    state = init_state(cfg(), ds.vocab)
    a, b = ds.captions[0], ds.captions[-1]
    frames = interpolate(state, a, b, 5, seed=2)
    assert frames[16].shape[0] == 5
    assert torch.equal(frames[16][0], synthesize(state, [a], 2)[16][0])
    assert torch.equal(frames[16][-1], synthesize(state, [b], 2)[16][0])


def test_unknown_token_rejected(ds):
    from nestgan.conditioning import UnknownTokenError
    state = init_state(cfg(), ds.vocab)
    with pytest.raises(UnknownTokenError, match="purple"):
        synthesize(state, [("a", "purple", "circle")], 0)


def test_ablation_rows_and_reproducibility():
    ds32 = generate_synthetic_dataset(DatasetSpec(samples_per_class=2, resolution=32))
    base = cfg(epochs=2, scales=(16, 32))
    rows = run_ablation(base, ds32, [(32,), (16, 32)], metrics=("msssim",), n_images=16)
    assert len(rows) == 2
    for rep in rows.values():
        assert rep.msssim_overall is not None and rep.color_accuracy is not None
    again = run_ablation(base, ds32, [(32,)], metrics=("msssim",), n_images=16)
    key = next(iter(again))
    assert again[key].flat() == rows[key].flat()


def test_composed_generator_objective_finite_difference():
    # gradient of the G objective w.r.t. raw D scores and CA statistics
    from nestgan.conditioning import kl_divergence
    g = torch.Generator().manual_seed(0)
    fl = torch.randn(2, 3, 3, generator=g, dtype=torch.float64, requires_grad=True)
    fp = torch.randn(2, generator=g, dtype=torch.float64, requires_grad=True)
    mu = torch.randn(2, 4, generator=g, dtype=torch.float64, requires_grad=True)
    lv = torch.randn(2, 4, generator=g, dtype=torch.float64, requires_grad=True)

    def objective(fl, fp, mu, lv):
        return generator_loss({8: ScaleOutputs(fake_local=fl, fake_pair=fp)}, kl_divergence(mu, lv)).total
    assert torch.autograd.gradcheck(objective, (fl, fp, mu, lv), eps=1e-6, atol=1e-6, rtol=1e-4)
