"""Run every propagation task on labeled clips and score them against ground truth."""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import metrics
from .tracker import (
    TrackerConfig,
    colorize,
    embed_video,
    encode_colors,
    encode_segments,
    track_keypoints,
    track_segments,
)

TRACK_FAIL_J = 0.5
COLOR_FAIL_ACC = 0.5


def worker_count():
    """Thread cap from CHROMATRACK_THREADS (default 1)."""
    raw = os.environ.get("CHROMATRACK_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass
class ClipEvaluation:
    scores: metrics.VideoScores
    identity: metrics.VideoScores
    pck: float
    identity_pck: float
    color_accuracy: float
    track_failed: list
    color_failed: list
    masks: list
    keypoints: list
    colors: list


def _gray_clip(clip):
    from .chroma import rgb_to_lab
    return rgb_to_lab(clip.frames)[..., 0] / 50.0 - 1.0


def evaluate_clip(params, net_config, palette, clip, config=None):
    config = config or TrackerConfig()
    f = net_config.grid_factor
    emb = embed_video(params, net_config, _gray_clip(clip), config)
    seg = track_segments(params, net_config, clip.frames, clip.masks[0], config, embedding=emb)
    col = colorize(params, net_config, clip.frames, palette, config, embedding=emb)
    T = clip.num_frames

    scores = metrics.score_video(seg.outputs, clip.masks)
    ident = metrics.score_video([clip.masks[0]] * T, clip.masks)

    if clip.keypoints.shape[1]:
        vis0 = clip.visible[0]
        kp = track_keypoints(params, net_config, clip.frames, clip.keypoints[0], config, embedding=emb)
        vis = clip.visible & vis0[None]
        # only points visible at frame 0 can be tracked
        pred = [p[vis0] for p in kp.outputs]
        gt = clip.keypoints[:, vis0]
        pck = metrics.video_pck(pred, gt, vis[:, vis0])
        ipck = metrics.video_pck([gt[0]] * T, gt, vis[:, vis0])
        kp_out = kp.outputs
    else:
        pck = ipck = float("nan")
        kp_out = []

    accs, tfail, cfail = [], [], []
    for t in range(1, T):
        gt_cat = encode_colors(clip.frames[t], palette, f).distributions.argmax(-1)
        pred_cat = col.soft[t].distributions.argmax(-1)
        accs.append(metrics.color_accuracy(pred_cat, gt_cat))
        cells = encode_segments(clip.masks[t].astype(np.int64), f,
                                d=int(clip.masks.max()) + 1).distributions.argmax(-1)
        for o in scores.j:
            obj = cells == o
            if not obj.any():
                continue
            tfail.append(metrics.region_j(seg.outputs[t], clip.masks[t], o) < TRACK_FAIL_J)
            cfail.append(metrics.color_accuracy(pred_cat, gt_cat, obj) < COLOR_FAIL_ACC)
    return ClipEvaluation(scores, ident, pck, ipck, float(np.mean(accs)) if accs else float("nan"),
                          tfail, cfail, seg.outputs, kp_out, col.outputs)


def evaluate_dataset(params, net_config, palette, clips, config=None, names=None):
    """Evaluate every clip and aggregate into an EvalReport (plus the per-clip results)."""
    clips = list(clips)
    with ThreadPoolExecutor(worker_count()) as pool:
        results = list(pool.map(lambda c: evaluate_clip(params, net_config, palette, c, config), clips))
    return build_report(results, names), results


def _nanmean(xs):
    xs = [x for x in xs if not math.isnan(x)]
    return float(np.mean(xs)) if xs else float("nan")


def build_report(results, names=None):
    names = names or [f"clip_{i:04d}" for i in range(len(results))]
    mj, mf = metrics.mean_over_videos([r.scores for r in results])
    ij, if_ = metrics.mean_over_videos([r.identity for r in results])
    tf = [x for r in results for x in r.track_failed]
    cf = [x for r in results for x in r.color_failed]
    table = metrics.failure_table(tf, cf) if tf else None
    per_video = [
        {"video": n, "j": r.scores.j, "f": r.scores.f, "pck": r.pck, "color_accuracy": r.color_accuracy}
        for n, r in zip(names, results)
    ]
    return metrics.EvalReport(
        mean_j=mj,
        mean_f=mf,
        per_video=per_video,
        identity_mean_j=ij,
        identity_mean_f=if_,
        mean_pck=_nanmean([r.pck for r in results]),
        identity_mean_pck=_nanmean([r.identity_pck for r in results]),
        color_accuracy=_nanmean([r.color_accuracy for r in results]),
        contingency=None if table is None else table.counts.tolist(),
        odds_ratio=None if table is None else table.odds_ratio(),
    )


def mean_j_at(results, frame):
    """Mean over videos of the per-object J at one frame index."""
    vals = []
    for r in results:
        js = [per[frame - 1] for per in r.scores.j_per_frame.values() if len(per) >= frame]
        if js:
            vals.append(float(np.mean(js)))
    return float(np.mean(vals)) if vals else float("nan")


def swapped(pred_mask, gt_mask, a, b):
    """True when most of either object's pixels are predicted as the other object."""
    pred_mask, gt_mask = np.asarray(pred_mask), np.asarray(gt_mask)
    for x, y in ((a, b), (b, a)):
        region = gt_mask == x
        if region.any() and np.mean(pred_mask[region] == y) > 0.5:
            return True
    return False


def last_frame_with(gt_masks, ids):
    """Index of the last frame in which every id in ``ids`` is visible, or None."""
    for t in range(len(gt_masks) - 1, -1, -1):
        if all(np.any(gt_masks[t] == i) for i in ids):
            return t
    return None
