"""Inference-time propagation of labels through a video with a trained network.

Each target frame t is embedded together with its preceding frames (a clip
of ``num_frames`` frames, front-padded with frame 0 early on) and points into
its last ``min(N, t)`` predecessors. Labels produced for frame t become the
references for later frames.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import embednet
from .chroma import block_mean, decode, lab_to_rgb, nearest_centroid, rgb_to_lab
from .errors import DimensionError, ValidationError
from .pointer import LabelGrid, PointerConfig, propagate, similarity

UPSAMPLE_MODES = ("bilinear", "nearest")


@dataclass
class TrackerConfig:
    window: int = 3
    temperature: float = 0.5
    upsample: str = "bilinear"

    def __post_init__(self):
        if self.window < 1:
            raise ValidationError(f"window must be >= 1, got {self.window}")
        PointerConfig(self.temperature)
        if self.upsample not in UPSAMPLE_MODES:
            raise ValidationError(f"upsample must be one of {UPSAMPLE_MODES}")


@dataclass
class TrackTask:
    """What to propagate: the frame-0 label grid and the full-resolution shape."""

    initial: LabelGrid
    image_shape: tuple
    grid_factor: int


@dataclass
class TrackResult:
    """Soft label grids for every frame (index 0 is the initial grid)."""

    soft: list
    outputs: list = field(default_factory=list)
    confidence: list = field(default_factory=list)


@dataclass
class VideoEmbedding:
    """Per-target embeddings: ``targets[t]`` is h×w×D, ``refs[t]`` is n_t×h×w×D."""

    targets: list
    refs: list

    def __len__(self):
        return len(self.targets)


# -- encoding ------------------------------------------------------------------

def _cells(image, grid_factor):
    H, W = image.shape[:2]
    if H % grid_factor or W % grid_factor:
        raise ValidationError(f"{H}×{W} image does not divide into {grid_factor}-pixel cells")
    h, w = H // grid_factor, W // grid_factor
    return image.reshape(h, grid_factor, w, grid_factor).swapaxes(1, 2).reshape(h, w, -1)


def encode_segments(mask, grid_factor, d=None):
    """Majority vote per cell; ties go to the lowest instance id."""
    mask = np.asarray(mask)
    if mask.ndim != 2 or not np.issubdtype(mask.dtype, np.integer):
        raise ValidationError(f"segment mask must be an H×W integer array, got {mask.shape} {mask.dtype}")
    if mask.min() < 0:
        raise ValidationError("instance ids must be non-negative")
    d = int(mask.max()) + 1 if d is None else d
    if mask.max() >= d:
        raise ValidationError(f"mask holds id {mask.max()} but only {d} categories were requested")
    cells = _cells(mask, grid_factor)
    counts = (cells[..., None] == np.arange(d)).sum(axis=2)
    return LabelGrid(np.eye(d)[counts.argmax(axis=-1)], "segment")


def encode_keypoints(points, image_shape, grid_factor):
    """One channel per keypoint with a single 1 in the cell containing it."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    H, W = image_shape[:2]
    if np.any(pts < 0) or np.any(pts[:, 0] >= W) or np.any(pts[:, 1] >= H):
        raise ValidationError("keypoints must lie inside the image")
    h, w = H // grid_factor, W // grid_factor
    grid = np.zeros((h, w, len(pts)))
    cols = np.floor(pts[:, 0] / grid_factor).astype(int)
    rows = np.floor(pts[:, 1] / grid_factor).astype(int)
    grid[rows, cols, np.arange(len(pts))] = 1.0
    return LabelGrid(grid, "keypoint")


def encode_colors(rgb_frame, palette, grid_factor):
    """Quantized mean ab of each cell, one-hot over the palette."""
    lab = rgb_to_lab(rgb_frame)
    H, W = lab.shape[:2]
    pooled = block_mean(lab[..., 1:], (H // grid_factor, W // grid_factor))
    return LabelGrid(np.eye(palette.K)[nearest_centroid(pooled, palette.centroids)], "color")


# -- decoding ------------------------------------------------------------------

def _bilinear_matrix(out_len, in_len):
    """out_len×in_len interpolation weights, half-pixel centers, clamped edges."""
    f = in_len / out_len
    src = np.clip((np.arange(out_len) + 0.5) * f - 0.5, 0, in_len - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, in_len - 1)
    frac = src - i0
    M = np.zeros((out_len, in_len))
    M[np.arange(out_len), i0] += 1 - frac
    M[np.arange(out_len), i1] += frac
    return M


def upsample(grid, out_shape, mode="bilinear"):
    """h×w×d -> H×W×d."""
    grid = np.asarray(grid, dtype=np.float64)
    H, W = out_shape[:2]
    h, w = grid.shape[:2]
    if mode == "nearest":
        if H % h or W % w:
            raise ValidationError(f"nearest upsampling needs {H}×{W} divisible by {h}×{w}")
        return grid.repeat(H // h, axis=0).repeat(W // w, axis=1)
    if mode != "bilinear":
        raise ValidationError(f"unknown upsample mode {mode!r}")
    return np.einsum("Yy,yxd,Xx->YXd", _bilinear_matrix(H, h), grid, _bilinear_matrix(W, w))


def decode_segments(labels, out_shape, mode="bilinear"):
    """Upsample the soft grid and take the per-pixel argmax (ties -> lowest id)."""
    dist = labels.distributions if isinstance(labels, LabelGrid) else np.asarray(labels)
    return upsample(dist, out_shape, mode).argmax(axis=-1).astype(np.uint8 if dist.shape[-1] <= 256 else np.int64)


def decode_keypoints(labels, grid_factor, previous=None):
    """Argmax cell center per channel -> (points P×2 as x, y; confidence P).

    A channel that is identically zero has lost track: the previous point is
    kept (or the grid origin when there is none) with confidence 0.
    """
    dist = labels.distributions if isinstance(labels, LabelGrid) else np.asarray(labels)
    h, w, P = dist.shape
    flat = dist.reshape(h * w, P)
    best = flat.argmax(axis=0)
    conf = flat[best, np.arange(P)]
    pts = np.stack([(best % w) * grid_factor + grid_factor / 2, (best // w) * grid_factor + grid_factor / 2], axis=1)
    lost = ~(conf > 0)
    if lost.any():
        prev = np.zeros((P, 2)) if previous is None else np.asarray(previous, dtype=np.float64)
        pts[lost] = prev[lost]
        conf = np.where(lost, 0.0, conf)
    return pts.astype(np.float64), conf


# -- propagation ---------------------------------------------------------------

def window_indices(t, num_frames):
    """Frames fed to the network for target t: the ``num_frames`` ending at t, clamped at 0."""
    return [max(0, t - num_frames + 1 + k) for k in range(num_frames)]


def embed_video(params, net_config, gray, config=None):
    """Embed every target frame with its window. ``gray`` is T×H×W in [-1, 1]."""
    config = config or TrackerConfig()
    F = net_config.num_frames
    if config.window > F - 1:
        raise ValidationError(f"window {config.window} exceeds the network's {F - 1} reference slots")
    gray = np.asarray(gray)
    if gray.ndim != 3 or len(gray) == 0:
        raise ValidationError(f"expected a non-empty T×H×W gray video, got shape {gray.shape}")
    T = len(gray)
    if T == 1:
        e = embednet.forward(params, np.repeat(gray[:1], F, axis=0), net_config).values.data
        return VideoEmbedding([e[-1]], [e[:0]])
    clips = np.stack([gray[window_indices(t, F)] for t in range(1, T)])
    emb = embednet.forward(params, clips, net_config).values.data  # (T-1)×F×h×w×D
    targets, refs = [emb[0, 0]], [emb[0, :0]]
    for t in range(1, T):
        n = min(config.window, t)
        targets.append(emb[t - 1, -1])
        refs.append(emb[t - 1, F - 1 - n: F - 1])
    return VideoEmbedding(targets, refs)


def track(embedding, initial, config=None):
    """Recursive propagation of ``initial`` (a LabelGrid for frame 0) through the video."""
    config = config or TrackerConfig()
    pcfg = PointerConfig(config.temperature)
    soft = [initial]
    for t in range(1, len(embedding)):
        target = embedding.targets[t]
        if target.shape[:2] != initial.distributions.shape[:2]:
            raise DimensionError(
                f"label grid {initial.distributions.shape[:2]} does not match embedding grid {target.shape[:2]}"
            )
        refs = embedding.refs[t]
        n = len(refs)
        A = similarity(target, refs, pcfg, frames=list(range(t - n, t)))
        soft.append(propagate(A, soft[t - n:t], initial.kind))
    return TrackResult(soft, confidence=[s.distributions.max(axis=-1) for s in soft])


def _gray(frames):
    frames = np.asarray(frames)
    if frames.ndim != 4 or frames.shape[-1] != 3:
        raise ValidationError(f"expected T×H×W×3 RGB frames, got {frames.shape}")
    return rgb_to_lab(frames)[..., 0] / 50.0 - 1.0


def track_segments(params, net_config, frames, first_mask, config=None, embedding=None):
    """Propagate a frame-0 instance mask; ``outputs`` holds H×W masks per frame."""
    config = config or TrackerConfig()
    frames = np.asarray(frames)
    emb = embedding or embed_video(params, net_config, _gray(frames), config)
    init = encode_segments(first_mask, net_config.grid_factor)
    res = track(emb, init, config)
    shape = frames.shape[1:3]
    res.outputs = [np.asarray(first_mask).astype(np.uint8)] + [
        decode_segments(s, shape, config.upsample) for s in res.soft[1:]
    ]
    return res


def track_keypoints(params, net_config, frames, points0, config=None, embedding=None):
    """Propagate frame-0 keypoints; ``outputs`` holds P×2 (x, y) arrays."""
    config = config or TrackerConfig()
    frames = np.asarray(frames)
    emb = embedding or embed_video(params, net_config, _gray(frames), config)
    init = encode_keypoints(points0, frames.shape[1:3], net_config.grid_factor)
    res = track(emb, init, config)
    pts = [np.asarray(points0, dtype=np.float64).reshape(-1, 2)]
    conf = [np.ones(len(pts[0]))]
    for s in res.soft[1:]:
        p, c = decode_keypoints(s, net_config.grid_factor, pts[-1])
        pts.append(p)
        conf.append(c)
    res.outputs, res.confidence = pts, conf
    return res


def colorize(params, net_config, frames, palette, config=None, reference=None, embedding=None):
    """Color a video from its first frame.

    ``frames`` supplies lightness (RGB or gray-looking RGB); ``reference`` is
    the colored frame 0 (defaults to ``frames[0]``). ``outputs`` holds RGB
    uint8 frames; frame 0 is the reference itself.
    """
    config = config or TrackerConfig()
    frames = np.asarray(frames)
    reference = frames[0] if reference is None else np.asarray(reference)
    lab = rgb_to_lab(frames)
    emb = embedding or embed_video(params, net_config, lab[..., 0] / 50.0 - 1.0, config)
    init = encode_colors(reference, palette, net_config.grid_factor)
    res = track(emb, init, config)
    out = [reference.astype(np.uint8)]
    for t in range(1, len(frames)):
        ab = upsample(decode(res.soft[t].distributions, palette), frames.shape[1:3], "bilinear")
        out.append(lab_to_rgb(np.concatenate([lab[t, ..., :1], ab], axis=-1)))
    res.outputs = out
    return res


def identity_result(initial, num_frames):
    """Baseline that repeats the frame-0 labels for every frame."""
    return TrackResult([initial] * num_frames)
