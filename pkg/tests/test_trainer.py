import json
import logging
import math

import numpy as np
import pytest

from chromatrack.chroma import Palette
from chromatrack.embednet import NetworkConfig, build
from chromatrack.errors import NumericError, ValidationError
from chromatrack.numcore import AdamState, Tensor
from chromatrack.trainer import (
    ClipBatch,
    TrainConfig,
    batch_loss,
    lr_schedule,
    read_checkpoint,
    sample_batch,
    train,
    training_step,
)

TINY = NetworkConfig(input_size=16, grid_factor=4, embed_dim=4, encoder_channels=(4, 4),
                     stack_channels=4, dilations=(1,), num_frames=3)


class ArrayDataset:
    def __init__(self, clips):
        self.clips = clips

    def __len__(self):
        return len(self.clips)

    def clip_length(self, i):
        return len(self.clips[i])

    def frames(self, i, idx):
        return self.clips[i][np.asarray(idx)]


def moving_squares(n=4, T=6, seed=0):
    rng = np.random.default_rng(seed)
    clips = []
    for _ in range(n):
        bg = rng.integers(0, 256, 3)
        fg = rng.integers(0, 256, 3)
        x, y = rng.integers(0, 8, 2)
        frames = np.empty((T, 16, 16, 3), np.uint8)
        for t in range(T):
            frames[t] = bg
            frames[t, y:y + 6, (x + t) % 10:(x + t) % 10 + 6] = fg
        clips.append(frames)
    return ArrayDataset(clips)


PALETTE = Palette(np.random.default_rng(9).normal(size=(4, 2)) * 40)


def small_config(**kw):
    base = dict(batch_size=2, total_iters=6, lr_drop_iter=3, num_refs=2, checkpoint_every=2, seed=1)
    base.update(kw)
    return TrainConfig(**base)


def test_lr_schedule_steps_once():
    cfg = TrainConfig()
    assert lr_schedule(0, cfg) == 1e-3
    assert lr_schedule(1999, cfg) == 1e-3
    assert lr_schedule(2000, cfg) == 1e-4
    lrs = [lr_schedule(i, cfg) for i in range(0, 6000, 7)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    assert set(lrs) == {1e-3, 1e-4}


def test_config_validation():
    with pytest.raises(ValidationError):
        TrainConfig(total_iters=100, lr_drop_iter=100)
    with pytest.raises(ValidationError):
        TrainConfig(batch_size=0)
    TrainConfig(total_iters=0)


def test_initial_loss_near_log_k_on_random_data():
    cfg = NetworkConfig()
    rng = np.random.default_rng(0)
    batch = ClipBatch(rng.uniform(-1, 1, (4, 4, 64, 64)), rng.integers(0, 16, (4, 4, 8, 8)),
                      np.arange(4), np.zeros(4, int))
    loss = float(batch_loss(build(cfg), batch, cfg, K=16).data)
    assert abs(loss - math.log(16)) < 0.5


def test_batches_depend_only_on_seed_and_iteration():
    ds = moving_squares()
    cfg = small_config()
    a = sample_batch(ds, PALETTE, TINY, cfg, 5)
    b = sample_batch(ds, PALETTE, TINY, cfg, 5)
    np.testing.assert_array_equal(a.gray, b.gray)
    np.testing.assert_array_equal(a.categories, b.categories)
    assert a.gray.shape == (2, 3, 16, 16) and a.categories.shape == (2, 3, 4, 4)
    assert a.gray.min() >= -1 and a.gray.max() <= 1


def test_short_clips_are_skipped(caplog):
    ds = moving_squares(n=3)
    ds.clips[1] = ds.clips[1][:2]
    with caplog.at_level(logging.WARNING):
        for it in range(10):
            assert 1 not in sample_batch(ds, PALETTE, TINY, small_config(), it).clip_ids
    assert "skipping clip 1" in caplog.text
    ds.clips = [c[:2] for c in ds.clips]
    with pytest.raises(ValidationError):
        sample_batch(ds, PALETTE, TINY, small_config(), 0)


def test_nan_parameter_aborts():
    ds = moving_squares()
    cfg = small_config()
    params = build(TINY, dtype=np.float64)
    params["proj.weight"].data[0, 0, 0, 0] = np.nan
    with pytest.raises(NumericError):
        training_step(params, sample_batch(ds, PALETTE, TINY, cfg, 0), PALETTE, TINY, cfg, AdamState())


def test_overfits_fixed_batch():
    ds = moving_squares()
    cfg = small_config()
    params = build(TINY)
    batch = sample_batch(ds, PALETTE, TINY, cfg, 0)
    adam = AdamState(lr=1e-2)
    losses = [training_step(params, batch, PALETTE, TINY, cfg, adam) for _ in range(40)]
    assert np.mean(losses[-5:]) < np.mean(losses[:5])


def test_zero_iterations_writes_initial_checkpoint(tmp_path):
    ck = train(moving_squares(), PALETTE, TINY, small_config(total_iters=0), tmp_path)
    assert ck.iteration == 0
    back = read_checkpoint(tmp_path / "checkpoint.ctck")
    fresh = build(TINY)
    for k in fresh:
        np.testing.assert_array_equal(back.params[k].data, fresh[k].data)
    assert (tmp_path / "train_log.jsonl").read_text() == ""


def test_log_lines_and_final_checkpoint(tmp_path):
    train(moving_squares(), PALETTE, TINY, small_config(), tmp_path)
    lines = [json.loads(ln) for ln in (tmp_path / "train_log.jsonl").read_text().splitlines()]
    assert [ln["iter"] for ln in lines] == list(range(6))
    assert [ln["lr"] for ln in lines] == [1e-3] * 3 + [1e-4] * 3
    assert read_checkpoint(tmp_path / "checkpoint.ctck").iteration == 6


def test_same_seed_same_weights(tmp_path):
    a = train(moving_squares(), PALETTE, TINY, small_config(), tmp_path / "a")
    b = train(moving_squares(), PALETTE, TINY, small_config(), tmp_path / "b")
    for k in a.params:
        np.testing.assert_array_equal(a.params[k].data, b.params[k].data)


def test_resume_matches_uninterrupted_run(tmp_path):
    full = train(moving_squares(), PALETTE, TINY, small_config(), tmp_path / "full")
    train(moving_squares(), PALETTE, TINY, small_config(total_iters=4), tmp_path / "split")
    resumed = train(moving_squares(), PALETTE, TINY, small_config(), tmp_path / "split")
    for k in full.params:
        np.testing.assert_array_equal(full.params[k].data, resumed.params[k].data)
    assert (tmp_path / "full" / "train_log.jsonl").read_text() == (tmp_path / "split" / "train_log.jsonl").read_text()


def test_network_frames_must_match_refs(tmp_path):
    with pytest.raises(ValidationError):
        train(moving_squares(), PALETTE, TINY, small_config(num_refs=3), tmp_path)


def test_zero_learning_rate_leaves_weights():
    ds = moving_squares()
    params = build(TINY)
    before = {k: v.data.copy() for k, v in params.items() if v.requires_grad}
    loss = training_step(params, sample_batch(ds, PALETTE, TINY, small_config(), 0), PALETTE, TINY,
                         small_config(), AdamState(lr=0.0))
    assert math.isfinite(loss)
    for k, v in before.items():
        np.testing.assert_array_equal(params[k].data, v)


def test_gray_video_maps_to_neutral_category():
    frames = np.repeat(np.linspace(0, 255, 16 * 16 * 4).reshape(4, 16, 16, 1), 3, axis=-1).astype(np.uint8)
    ds = ArrayDataset([frames])
    batch = sample_batch(ds, PALETTE, TINY, small_config(batch_size=1), 0)
    neutral = int(np.argmin((PALETTE.centroids ** 2).sum(axis=1)))
    assert np.all(batch.categories == neutral)


def test_perfect_prediction_has_no_loss():
    from chromatrack.numcore.ops import cross_entropy
    onehot = np.eye(16)[np.random.default_rng(0).integers(0, 16, (2, 9))]
    assert float(cross_entropy(Tensor(onehot), onehot).data) < 1e-6


def test_loss_falls_every_step_on_repeated_frame():
    # three copies of one frame, every grid cell its own color category
    rng = np.random.default_rng(5)
    pal = Palette(rng.normal(size=(16, 2)) * 40)
    cats = rng.permutation(16).reshape(1, 1, 4, 4).repeat(3, axis=1)
    gray = np.repeat(rng.uniform(-1, 1, (1, 1, 4, 4)).repeat(4, axis=2).repeat(4, axis=3), 3, axis=1)
    batch = ClipBatch(gray, cats, np.zeros(1, int), np.zeros(1, int))
    params = build(TINY)
    adam = AdamState()
    losses = [training_step(params, batch, pal, TINY, small_config(), adam) for _ in range(50)]
    assert all(b < a for a, b in zip(losses, losses[1:])), losses
