"""Evaluation: region similarity J, boundary F, PCK, the failure contingency
table with its odds ratio, and a PCA view of embeddings."""
from __future__ import annotations

import csv
import io as _io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DimensionError, ValidationError


def _pair(pred, gt):
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    return pred, gt


def region_j(pred, gt, category=1):
    """Intersection over union for one category; 1.0 when both are empty."""
    pred, gt = _pair(pred, gt)
    p, g = pred == category, gt == category
    union = np.count_nonzero(p | g)
    if union == 0:
        return 1.0
    return np.count_nonzero(p & g) / union


def boundary_pixels(mask):
    """Pixels of ``mask`` with a 4-neighbor outside it (image edges do not count)."""
    m = np.asarray(mask, dtype=bool)
    inner = np.zeros_like(m)
    inner[1:, :] |= ~m[:-1, :]
    inner[:-1, :] |= ~m[1:, :]
    inner[:, 1:] |= ~m[:, :-1]
    inner[:, :-1] |= ~m[:, 1:]
    return m & inner


def default_radius(shape):
    return int(math.ceil(0.0075 * math.hypot(*shape[:2])))


def dilate_disk(mask, radius):
    """Binary dilation by the digital disk {dy² + dx² <= radius²}."""
    m = np.asarray(mask, dtype=bool)
    out = m.copy()
    r = int(math.floor(radius))
    H, W = m.shape
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if (dy or dx) and dy * dy + dx * dx <= radius * radius:
                out[max(dy, 0):H + min(dy, 0), max(dx, 0):W + min(dx, 0)] |= \
                    m[max(-dy, 0):H + min(-dy, 0), max(-dx, 0):W + min(-dx, 0)]
    return out


def boundary_f(pred, gt, category=1, radius=None):
    """Boundary F-measure with a disk matching tolerance."""
    pred, gt = _pair(pred, gt)
    radius = default_radius(gt.shape) if radius is None else radius
    if radius < 0:
        raise ValidationError("radius must be non-negative")
    bp, bg = boundary_pixels(pred == category), boundary_pixels(gt == category)
    np_, ng = np.count_nonzero(bp), np.count_nonzero(bg)
    if np_ == 0 and ng == 0:
        return 1.0
    if np_ == 0 or ng == 0:
        return 0.0
    precision = np.count_nonzero(bp & dilate_disk(bg, radius)) / np_
    recall = np.count_nonzero(bg & dilate_disk(bp, radius)) / ng
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


@dataclass
class VideoScores:
    """Per-object mean J and F over frames 1.. (frame 0 is given)."""

    j: dict
    f: dict
    j_per_frame: dict

    @property
    def mean_j(self):
        return float(np.mean(list(self.j.values()))) if self.j else float("nan")

    @property
    def mean_f(self):
        return float(np.mean(list(self.f.values()))) if self.f else float("nan")


def score_video(pred_masks, gt_masks, objects=None, radius=None):
    """J and F for every foreground object id present in the first GT frame."""
    gt0 = np.asarray(gt_masks[0])
    if objects is None:
        objects = [int(o) for o in np.unique(gt0) if o != 0]
    if len(pred_masks) != len(gt_masks):
        raise DimensionError(f"{len(pred_masks)} predicted frames vs {len(gt_masks)} ground-truth frames")
    j, f, per = {}, {}, {}
    for o in objects:
        js = [region_j(p, g, o) for p, g in zip(pred_masks[1:], gt_masks[1:])]
        fs = [boundary_f(p, g, o, radius) for p, g in zip(pred_masks[1:], gt_masks[1:])]
        per[o] = js
        j[o] = float(np.mean(js)) if js else 1.0
        f[o] = float(np.mean(fs)) if fs else 1.0
    return VideoScores(j, f, per)


def pck(pred, gt, threshold=0.2, visible=None, normalizer=None):
    """Fraction of visible keypoints within ``threshold × normalizer`` pixels.

    The default normalizer is the longer side of the bounding box of the
    visible ground-truth points. Returns nan when nothing is visible.
    """
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 2)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 2)
    if pred.shape != gt.shape:
        raise DimensionError(f"{len(pred)} predicted keypoints vs {len(gt)} ground-truth keypoints")
    vis = np.ones(len(gt), bool) if visible is None else np.asarray(visible, bool)
    if not vis.any():
        return float("nan")
    if normalizer is None:
        span = gt[vis].max(axis=0) - gt[vis].min(axis=0)
        normalizer = float(span.max())
    dist = np.linalg.norm(pred[vis] - gt[vis], axis=1)
    return float(np.mean(dist <= threshold * normalizer))


def pck_curve(pred, gt, thresholds, visible=None, normalizer=None):
    return [pck(pred, gt, x, visible, normalizer) for x in thresholds]


def video_pck(pred_tracks, gt_tracks, visible=None, threshold=0.2):
    """Mean per-frame PCK over frames 1.., skipping frames with nothing visible."""
    vals = []
    for t in range(1, len(gt_tracks)):
        v = pck(pred_tracks[t], gt_tracks[t], threshold, None if visible is None else visible[t])
        if not math.isnan(v):
            vals.append(v)
    return float(np.mean(vals)) if vals else float("nan")


# -- failure analysis ------------------------------------------------------------

@dataclass
class ContingencyTable:
    """Rows: tracking failed / succeeded. Columns: colorization failed / succeeded."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (2, 2) or np.any(self.counts < 0):
            raise ValidationError("contingency table must be 2×2 with non-negative counts")

    def odds_ratio(self):
        return odds_ratio(self.counts)


def odds_ratio(counts):
    """(a·d)/(b·c) for [[a, b], [c, d]]; 0.5 is added to every cell if any is zero."""
    c = np.asarray(counts, dtype=np.float64)
    if c.shape != (2, 2) or np.any(c < 0):
        raise ValidationError("odds ratio needs a 2×2 table of non-negative counts")
    if np.any(c == 0):
        c = c + 0.5
    return float(c[0, 0] * c[1, 1] / (c[0, 1] * c[1, 0]))


def failure_table(track_failed, color_failed):
    """Cross-tabulate two aligned boolean sequences of per-unit failures."""
    tf = np.asarray(track_failed, dtype=bool).ravel()
    cf = np.asarray(color_failed, dtype=bool).ravel()
    if tf.shape != cf.shape:
        raise DimensionError(f"{tf.size} tracking outcomes vs {cf.size} colorization outcomes")
    return ContingencyTable([
        [np.sum(tf & cf), np.sum(tf & ~cf)],
        [np.sum(~tf & cf), np.sum(~tf & ~cf)],
    ])


def color_accuracy(pred_categories, gt_categories, mask=None):
    """Top-1 accuracy of quantized colors, optionally over a boolean cell mask."""
    p, g = _pair(pred_categories, gt_categories)
    if mask is not None:
        m = np.asarray(mask, bool)
        if not m.any():
            return float("nan")
        return float(np.mean(p[m] == g[m]))
    return float(np.mean(p == g))


# -- embedding visualization -----------------------------------------------------

def pca_components(X, k=3):
    """Top-k principal directions of the rows of X (k×D), sign-normalized so each
    direction's largest-magnitude coordinate is positive."""
    X = np.asarray(X, dtype=np.float64)
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / max(len(X), 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:k]
    comps = vecs[:, order].T
    for c in comps:
        if c[np.argmax(np.abs(c))] < 0:
            c *= -1
    return vals[order], comps


def pca_embed_viz(embeddings):
    """Project ...×D embeddings onto their top 3 principal directions -> uint8 RGB.

    One global min/max per channel over the whole input maps to [0, 255];
    a channel with no spread becomes 128.
    """
    E = np.asarray(embeddings, dtype=np.float64)
    if E.shape[-1] < 3:
        raise DimensionError(f"need at least 3 embedding dims for an RGB view, got {E.shape[-1]}")
    X = E.reshape(-1, E.shape[-1])
    _, comps = pca_components(X, 3)
    proj = (X - X.mean(axis=0)) @ comps.T
    out = np.full(proj.shape, 128.0)
    lo, hi = proj.min(axis=0), proj.max(axis=0)
    spread = hi - lo
    ok = spread > 1e-12 * max(1.0, float(np.abs(proj).max()))
    out[:, ok] = (proj[:, ok] - lo[ok]) / spread[ok] * 255.0
    return np.rint(out).astype(np.uint8).reshape(*E.shape[:-1], 3)


# -- reports ---------------------------------------------------------------------

@dataclass
class EvalReport:
    mean_j: float
    mean_f: float
    per_video: list = field(default_factory=list)
    identity_mean_j: float | None = None
    identity_mean_f: float | None = None
    mean_pck: float | None = None
    identity_mean_pck: float | None = None
    color_accuracy: float | None = None
    contingency: list | None = None
    odds_ratio: float | None = None
    # J and F are averaged per object, then per video, then over videos
    averaging: str = "object,video,dataset"

    def to_json(self):
        def clean(v):
            if isinstance(v, float) and math.isnan(v):
                return None
            if isinstance(v, dict):
                return {str(k): clean(x) for k, x in v.items()}
            if isinstance(v, list):
                return [clean(x) for x in v]
            return v
        return json.dumps(clean(asdict(self)), indent=1)

    def j_csv(self):
        """One row per (video, object): video, object, J, F."""
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["video", "object", "J", "F"])
        for rec in self.per_video:
            for obj, j in rec["j"].items():
                w.writerow([rec["video"], obj, f"{j:.6f}", f"{rec['f'][obj]:.6f}"])
        return buf.getvalue()


def mean_over_videos(scores):
    """Average per-video means (each already averaged over objects)."""
    js = [s.mean_j for s in scores if not math.isnan(s.mean_j)]
    fs = [s.mean_f for s in scores if not math.isnan(s.mean_f)]
    return (float(np.mean(js)) if js else float("nan"), float(np.mean(fs)) if fs else float("nan"))
