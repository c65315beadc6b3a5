"""Self-supervised training: predict the target frame's quantized colors by
pointing into the reference frames of the same clip.

Batches are a pure function of ``(seed, iteration)``, so a run resumed from a
checkpoint follows exactly the trajectory of an uninterrupted run.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import embednet
from .chroma import Palette, block_mean, fit_palette, nearest_centroid, rgb_to_lab
from .errors import NumericError, ValidationError
from .io import load_checkpoint, save_checkpoint
from .numcore import AdamState, Tape, Tensor, adam_step, backward, cross_entropy, matmul
from .pointer import attention

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.ctck"
LOG_NAME = "train_log.jsonl"


@dataclass
class TrainConfig:
    batch_size: int = 8
    total_iters: int = 6000
    lr: float = 1e-3
    lr_drop_iter: int = 2000
    lr_after_drop: float = 1e-4
    num_refs: int = 3
    frame_gap: int = 1
    temperature: float = 1.0
    checkpoint_every: int = 500
    palette_k: int = 16
    palette_samples: int = 100_000
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.batch_size < 1 or self.num_refs < 1 or self.frame_gap < 1:
            raise ValidationError("batch_size, num_refs and frame_gap must be >= 1")
        if self.total_iters < 0:
            raise ValidationError("total_iters must be >= 0")
        if self.total_iters > 0 and not 0 <= self.lr_drop_iter < self.total_iters:
            raise ValidationError(
                f"lr_drop_iter ({self.lr_drop_iter}) must lie in [0, total_iters={self.total_iters})"
            )
        if not (self.lr > 0 and self.lr_after_drop > 0):
            raise ValidationError("learning rates must be positive")
        if not self.temperature > 0:
            raise ValidationError("temperature must be positive")
        if self.checkpoint_every < 1:
            raise ValidationError("checkpoint_every must be >= 1")
        if self.palette_k < 2:
            raise ValidationError("palette_k must be >= 2")

    def to_dict(self):
        return asdict(self)


def lr_schedule(iteration, config):
    return config.lr if iteration < config.lr_drop_iter else config.lr_after_drop


@dataclass
class ClipBatch:
    """``gray`` is B×T×H×W in [-1, 1]; ``categories`` is B×T×h×w palette indices."""

    gray: np.ndarray
    categories: np.ndarray
    clip_ids: np.ndarray
    starts: np.ndarray

    @property
    def target_categories(self):
        return self.categories[:, -1]

    @property
    def reference_categories(self):
        return self.categories[:, :-1]


def frames_to_training_arrays(frames, palette, grid_size):
    """RGB T×H×W×3 -> (gray T×H×W float32, categories T×g×g)."""
    lab = rgb_to_lab(frames)
    gray = (lab[..., 0] / 50.0 - 1.0).astype(np.float32)
    ab = np.moveaxis(lab[..., 1:], 0, 2)  # H×W×T×2 so block_mean pools space
    pooled = np.moveaxis(block_mean(ab, (grid_size, grid_size)), 2, 0)
    return gray, nearest_centroid(pooled, palette.centroids)


def sample_batch(dataset, palette, net_config, config, iteration):
    """Draw the batch for ``iteration`` (deterministic in seed and iteration)."""
    rng = np.random.default_rng([config.seed, iteration])
    T = config.num_refs + 1
    span = (T - 1) * config.frame_gap + 1
    grays, cats, ids, starts = [], [], [], []
    attempts = 0
    while len(grays) < config.batch_size:
        attempts += 1
        if attempts > 50 * config.batch_size:
            raise ValidationError(f"no clip in the dataset has the {span} frames a sample needs")
        clip = int(rng.integers(len(dataset)))
        length = dataset.clip_length(clip)
        if length < span:
            log.warning("skipping clip %d: %d frames, need %d", clip, length, span)
            continue
        start = int(rng.integers(0, length - span + 1))
        frames = dataset.frames(clip, start + config.frame_gap * np.arange(T))
        if frames.shape[1:3] != (net_config.input_size, net_config.input_size):
            raise ValidationError(
                f"clip {clip} frames are {frames.shape[1]}×{frames.shape[2]}, "
                f"network expects {net_config.input_size}"
            )
        g, c = frames_to_training_arrays(frames, palette, net_config.grid_size)
        grays.append(g)
        cats.append(c)
        ids.append(clip)
        starts.append(start)
    return ClipBatch(np.stack(grays), np.stack(cats), np.array(ids), np.array(starts))


def batch_loss(params, batch, net_config, K, temperature=1.0):
    """Cross-entropy of the pointer-copied reference colors against the target's."""
    emb = embednet.forward(params, batch.gray, net_config, training=True).values
    B, T = batch.categories.shape[:2]
    P = net_config.grid_size ** 2
    D = net_config.embed_dim
    flat = emb.reshape(B, T * P, D)
    refs, target = flat[:, : (T - 1) * P], flat[:, (T - 1) * P:]
    A = attention(target, refs, temperature)
    eye = np.eye(K, dtype=emb.dtype)
    ref_onehot = Tensor(eye[batch.reference_categories.reshape(B, -1)])
    pred = matmul(A, ref_onehot)
    return cross_entropy(pred, eye[batch.target_categories.reshape(B, P)])


def training_step(params, batch, palette, net_config, config, adam):
    """One optimizer step; returns the loss. A non-finite loss aborts."""
    with Tape() as tape:
        loss = batch_loss(params, batch, net_config, palette.K, config.temperature)
        value = float(loss.data)
        if not math.isfinite(value):
            raise NumericError(
                f"non-finite loss {value} at optimizer step {adam.step}, clips {batch.clip_ids.tolist()}"
            )
        grads = backward(loss, tape)
    named = {name: grads[p] for name, p in embednet.trainable(params).items() if p in grads}
    for name, g in named.items():
        if not np.all(np.isfinite(g.data)):
            raise NumericError(f"non-finite gradient for {name!r} at optimizer step {adam.step}")
    adam_step(params, named, adam)
    return value


def palette_from_dataset(dataset, n_samples=100_000, K=16, seed=0, max_frames=400):
    """Fit the color palette on ab pixels drawn from random frames of the dataset."""
    rng = np.random.default_rng([seed, 7])
    pools = []
    for _ in range(max_frames):
        clip = int(rng.integers(len(dataset)))
        t = int(rng.integers(dataset.clip_length(clip)))
        frame = dataset.frames(clip, [t])[0]
        pools.append(rgb_to_lab(frame)[..., 1:].reshape(-1, 2))
    pool = np.concatenate(pools)
    if len(pool) > n_samples:
        pool = pool[rng.choice(len(pool), n_samples, replace=False)]
    return fit_palette(pool, K=K, seed=seed)


# -- checkpoints ---------------------------------------------------------------

@dataclass
class Checkpoint:
    params: dict
    palette: Palette
    net_config: embednet.NetworkConfig
    train_config: TrainConfig
    iteration: int
    adam: AdamState
    path: Path | None = None
    elapsed: float = 0.0


def checkpoint_tensors(params, palette, adam):
    tensors = {f"param.{k}": v.data for k, v in params.items()}
    tensors["palette.centroids"] = palette.centroids
    for k in adam.m:
        tensors[f"adam.m.{k}"] = adam.m[k]
        tensors[f"adam.v.{k}"] = adam.v[k]
    return tensors


def write_checkpoint(path, ckpt):
    cfg = {
        "kind": "model",
        "network": ckpt.net_config.to_dict(),
        "train": ckpt.train_config.to_dict(),
        "iteration": ckpt.iteration,
        "adam_step": ckpt.adam.step,
        "palette_seed": ckpt.palette.seed,
        "elapsed": ckpt.elapsed,
    }
    save_checkpoint(path, checkpoint_tensors(ckpt.params, ckpt.palette, ckpt.adam), cfg)


def read_checkpoint(path):
    tensors, cfg = load_checkpoint(path)
    if cfg.get("kind") != "model":
        raise ValidationError(f"{path} is not a model checkpoint")
    net = embednet.NetworkConfig(**cfg["network"])
    tc = TrainConfig(**cfg["train"])
    params = embednet.build(net)
    for name, p in params.items():
        stored = tensors.get(f"param.{name}")
        if stored is None or stored.shape != p.shape:
            raise ValidationError(f"checkpoint is missing or mis-shaped parameter {name!r}")
        p.data = stored.astype(p.dtype)
    adam = AdamState(lr=lr_schedule(cfg["iteration"], tc), step=cfg["adam_step"])
    for k, v in tensors.items():
        if k.startswith("adam.m."):
            adam.m[k[7:]] = v.copy()
        elif k.startswith("adam.v."):
            adam.v[k[7:]] = v.copy()
    palette = Palette(tensors["palette.centroids"].astype(np.float64), {"seed": cfg.get("palette_seed", 0)})
    return Checkpoint(params, palette, net, tc, cfg["iteration"], adam, Path(path), cfg.get("elapsed", 0.0))


def _trim_log(log_path, upto):
    if not log_path.exists():
        return
    keep = [ln for ln in log_path.read_text().splitlines() if ln and json.loads(ln)["iter"] < upto]
    log_path.write_text("".join(ln + "\n" for ln in keep))


def train(dataset, palette, net_config, config, out_dir, resume=True, progress=None):
    """Train the embedding network; returns the final Checkpoint.

    Writes ``checkpoint.ctck`` every ``checkpoint_every`` iterations and at
    the end, and appends one JSON line per iteration to ``train_log.jsonl``.
    With ``resume`` an existing checkpoint in ``out_dir`` is continued.
    """
    if net_config.num_frames != config.num_refs + 1:
        raise ValidationError(
            f"network sees {net_config.num_frames} frames but training uses {config.num_refs} refs + 1 target"
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / CHECKPOINT_NAME
    log_path = out_dir / LOG_NAME

    if resume and ckpt_path.exists():
        ckpt = read_checkpoint(ckpt_path)
        if ckpt.net_config != net_config:
            raise ValidationError("existing checkpoint was trained with a different network config")
        ckpt.train_config = config
        _trim_log(log_path, ckpt.iteration)
    else:
        ckpt = Checkpoint(embednet.build(net_config), palette, net_config, config, 0,
                          AdamState(lr=config.lr), ckpt_path)
        log_path.unlink(missing_ok=True)
        write_checkpoint(ckpt_path, ckpt)
    ckpt.path = ckpt_path

    t0 = time.perf_counter() - ckpt.elapsed
    with log_path.open("a") as logf:
        for it in range(ckpt.iteration, config.total_iters):
            batch = sample_batch(dataset, ckpt.palette, net_config, config, it)
            ckpt.adam.lr = lr_schedule(it, config)
            loss = training_step(ckpt.params, batch, ckpt.palette, net_config, config, ckpt.adam)
            logf.write(json.dumps({"iter": it, "loss": loss, "lr": ckpt.adam.lr}) + "\n")
            ckpt.iteration = it + 1
            if progress is not None:
                progress(it, loss)
            if ckpt.iteration % config.checkpoint_every == 0 or ckpt.iteration == config.total_iters:
                logf.flush()
                ckpt.elapsed = time.perf_counter() - t0
                write_checkpoint(ckpt_path, ckpt)
    ckpt.elapsed = time.perf_counter() - t0
    return ckpt
