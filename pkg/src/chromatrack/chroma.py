"""CIELAB conversion and the k-means color quantizer.

Colors become categories: the ab plane is clustered with k-means and each
grid cell is labeled with its nearest centroid.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ValidationError

# sRGB primaries, D65 white (IEC 61966-2-1)
_RGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)
# white derived from the matrix so that sRGB white maps to a = b = 0 exactly
_WHITE = _RGB_TO_XYZ.sum(axis=1)
_DELTA = 6.0 / 29.0


def _srgb_to_linear(c):
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _linear_to_srgb(c):
    c = np.clip(c, 0.0, 1.0)
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * np.power(c, 1 / 2.4) - 0.055)


def _f(t):
    return np.where(t > _DELTA ** 3, np.cbrt(t), t / (3 * _DELTA ** 2) + 4.0 / 29.0)


def _f_inv(t):
    return np.where(t > _DELTA, t ** 3, 3 * _DELTA ** 2 * (t - 4.0 / 29.0))


def rgb_to_lab(rgb):
    """8-bit (or float 0..255) sRGB H×W×3 -> float64 CIELAB under D65."""
    rgb = np.asarray(rgb, dtype=np.float64) / 255.0
    xyz = _srgb_to_linear(rgb) @ _RGB_TO_XYZ.T
    fx, fy, fz = (_f(xyz[..., i] / _WHITE[i]) for i in range(3))
    return np.stack([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)], axis=-1)


def lab_to_rgb_float(lab):
    """CIELAB -> sRGB in [0, 255] as float64, clamped, not rounded."""
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    xyz = np.stack([_f_inv(fx) * _WHITE[0], _f_inv(fy) * _WHITE[1], _f_inv(fz) * _WHITE[2]], axis=-1)
    return _linear_to_srgb(xyz @ _XYZ_TO_RGB.T) * 255.0


def lab_to_rgb(lab):
    """CIELAB -> 8-bit sRGB. Out-of-gamut colors are clamped."""
    return np.clip(np.rint(lab_to_rgb_float(lab)), 0, 255).astype(np.uint8)


def gray_from_rgb(rgb):
    """Lab lightness rescaled from [0, 100] to [-1, 1]."""
    return rgb_to_lab(rgb)[..., 0] / 50.0 - 1.0


# -- palette -----------------------------------------------------------------

@dataclass
class Palette:
    centroids: np.ndarray
    fit_metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        c = np.asarray(self.centroids, dtype=np.float64)
        if c.ndim != 2 or c.shape[1] != 2:
            raise DimensionError(f"palette centroids must be K×2, got {c.shape}")
        if c.shape[0] < 2:
            raise ValidationError("a palette needs at least 2 centroids")
        if len(np.unique(c, axis=0)) != len(c):
            raise ValidationError("palette centroids must be distinct")
        self.centroids = c

    @property
    def K(self):
        return self.centroids.shape[0]

    @property
    def seed(self):
        return self.fit_metadata.get("seed", 0)


@dataclass
class QuantizedFrame:
    indices: np.ndarray
    source_shape: tuple = ()


def squared_distances(points, centroids):
    """N×K matrix of squared Euclidean distances."""
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("nkc,nkc->nk", diff, diff)


def _objective(points, centroids, labels):
    d = points - centroids[labels]
    return float(np.einsum("nc,nc->", d, d))


def kmeans_pp_init(points, K, rng):
    """k-means++ seeding: each new centroid drawn with probability ∝ D²."""
    n = len(points)
    centroids = [points[rng.integers(n)]]
    closest = ((points - centroids[0]) ** 2).sum(axis=1)
    for _ in range(1, K):
        total = closest.sum()
        if total <= 0:
            # every point coincides with a chosen centroid
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=closest / total)
        centroids.append(points[idx])
        closest = np.minimum(closest, ((points - points[idx]) ** 2).sum(axis=1))
    return np.array(centroids, dtype=np.float64)


def lloyd(points, centroids, max_iters):
    """Lloyd iterations from the given centroids.

    Returns ``(centroids, labels, history)`` where ``history`` holds the
    objective after every assignment step. An empty cluster is moved onto
    the point that is currently farthest from its own centroid.
    """
    centroids = centroids.copy()
    K = len(centroids)
    labels = squared_distances(points, centroids).argmin(axis=1)
    history = [_objective(points, centroids, labels)]
    for _ in range(max_iters):
        counts = np.bincount(labels, minlength=K)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, points)
        nonempty = counts > 0
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        for k in np.flatnonzero(~nonempty):
            resid = ((points - centroids[labels]) ** 2).sum(axis=1)
            far = int(resid.argmax())
            centroids[k] = points[far]
            labels[far] = k
        new_labels = squared_distances(points, centroids).argmin(axis=1)
        history.append(_objective(points, centroids, new_labels))
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    return centroids, labels, history


def fit_palette(ab_samples, K=16, seed=0, max_iters=100):
    """Cluster ab samples (N×2) into a K-color palette."""
    pts = np.asarray(ab_samples, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise DimensionError(f"ab samples must be N×2, got {pts.shape}")
    if K < 2:
        raise ValidationError("K must be >= 2")
    if len(np.unique(pts, axis=0)) < K:
        raise ValidationError(f"need at least K={K} distinct samples, got {len(pts)} samples")
    rng = np.random.default_rng(seed)
    init = kmeans_pp_init(pts, K, rng)
    centroids, labels, history = lloyd(pts, init, max_iters)
    return Palette(centroids, {
        "n_samples": len(pts),
        "objective": history[-1],
        "history": history,
        "iterations": len(history) - 1,
        "seed": seed,
    })


def nearest_centroid(ab, centroids):
    """Index of the nearest centroid for every ab vector; ties go to the lowest index."""
    ab = np.asarray(ab, dtype=np.float64)
    flat = ab.reshape(-1, 2)
    return squared_distances(flat, centroids).argmin(axis=1).reshape(ab.shape[:-1])


def quantize(ab_image, palette):
    idx = nearest_centroid(ab_image, palette.centroids)
    return QuantizedFrame(idx, tuple(np.shape(ab_image)[:-1]))


def decode(labels, palette):
    """Map hard indices (or a QuantizedFrame) or soft ...×K distributions to ab."""
    if isinstance(labels, QuantizedFrame):
        labels = labels.indices
    labels = np.asarray(labels)
    if np.issubdtype(labels.dtype, np.integer):
        return palette.centroids[labels]
    if labels.shape[-1] != palette.K:
        raise DimensionError(f"distribution has {labels.shape[-1]} categories, palette has {palette.K}")
    if np.any(np.abs(labels.sum(axis=-1) - 1.0) > 1e-4):
        raise ValidationError("soft color distributions must sum to 1")
    return labels @ palette.centroids


def block_mean(image, target):
    """Average-pool the leading two axes of ``image`` down to ``target`` (h, w)."""
    image = np.asarray(image, dtype=np.float64)
    H, W = image.shape[:2]
    h, w = target
    if h < 1 or w < 1 or H % h or W % w:
        raise ValidationError(f"cannot pool {H}×{W} to {h}×{w}: extents must divide")
    fy, fx = H // h, W // w
    return image.reshape(h, fy, w, fx, *image.shape[2:]).mean(axis=(1, 3))


def downsample_ab(ab_image, target):
    return block_mean(ab_image, target)


def sample_ab(frames, n_samples, seed=0):
    """Draw ``n_samples`` ab pixels uniformly from an iterable of RGB frames."""
    pool = np.concatenate([rgb_to_lab(f)[..., 1:].reshape(-1, 2) for f in frames])
    rng = np.random.default_rng(seed)
    if len(pool) <= n_samples:
        return pool
    return pool[rng.choice(len(pool), size=n_samples, replace=False)]
