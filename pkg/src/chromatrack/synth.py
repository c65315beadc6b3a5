"""Synthetic moving-shape videos with exact masks and keypoints.

Every object keeps one flat color for the whole clip, so color is
temporally coherent by construction. Shapes are rasterized with hard edges
(pixel-center inclusion), which makes the instance masks exact.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .chroma import rgb_to_lab
from .errors import ValidationError

PRESETS = ("plain", "hard", "static")
_PRESET_CODE = {"plain": 1, "hard": 2, "static": 3}


@dataclass
class ObjectSpec:
    shape: str                      # "rect" or "circle"
    rgb: tuple                      # flat 8-bit color
    size: tuple                     # (w, h) for rect, (2r, 2r) for circle
    start: tuple                    # center at frame 0, pixels
    velocity: tuple = (0.0, 0.0)    # pixels per frame
    trajectory: str = "linear"      # or "sinusoidal"
    amplitude: tuple = (0.0, 0.0)   # sinusoidal offset amplitude per axis
    period: float = 10.0
    depth: int = 0                  # larger is farther away

    @property
    def lab(self):
        return tuple(float(v) for v in rgb_to_lab(np.array(self.rgb, dtype=float)[None, None])[0, 0])

    def center(self, t):
        cx = self.start[0] + self.velocity[0] * t
        cy = self.start[1] + self.velocity[1] * t
        if self.trajectory == "sinusoidal":
            phase = math.sin(2 * math.pi * t / self.period)
            cx += self.amplitude[0] * phase
            cy += self.amplitude[1] * phase
        return cx, cy


@dataclass
class SceneSpec:
    size: int = 64
    num_frames: int = 20
    background: tuple = ((128, 128, 128),)   # one color, or two for a gradient
    gradient_angle: float = 0.0
    background_drift: float = 0.0            # gradient phase shift, pixels per frame
    objects: list = field(default_factory=list)
    occluder: ObjectSpec | None = None       # drawn last, never an instance
    seed: int = 0
    tags: dict = field(default_factory=dict)

    def validate(self):
        if self.size < 4 or self.num_frames < 1:
            raise ValidationError("scene needs size >= 4 and at least one frame")
        if not 1 <= len(self.background) <= 2:
            raise ValidationError("background takes one or two colors")
        if len(self.objects) > 254:
            raise ValidationError("at most 254 objects fit in an 8-bit mask")
        for ob in self.objects + ([self.occluder] if self.occluder else []):
            if ob.shape not in ("rect", "circle"):
                raise ValidationError(f"unknown shape {ob.shape!r}")
            if min(ob.size) <= 0:
                raise ValidationError("object size must be positive")
            if ob.trajectory not in ("linear", "sinusoidal"):
                raise ValidationError(f"unknown trajectory {ob.trajectory!r}")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["objects"] = [ObjectSpec(**o) for o in d.get("objects", [])]
        if d.get("occluder"):
            d["occluder"] = ObjectSpec(**d["occluder"])
        for key in ("background",):
            d[key] = tuple(tuple(c) for c in d[key])
        return cls(**d)


@dataclass
class LabeledClip:
    frames: np.ndarray      # T×H×W×3 uint8
    masks: np.ndarray       # T×H×W uint8, 0 = background, k+1 = object k
    keypoints: np.ndarray   # T×P×2 float (x, y) pixels
    visible: np.ndarray     # T×P bool: keypoint inside the frame and on its object
    keypoint_owner: np.ndarray  # P, instance id each keypoint belongs to
    spec: SceneSpec

    @property
    def num_frames(self):
        return self.frames.shape[0]


def _shape_mask(ob, t, yy, xx):
    cx, cy = ob.center(t)
    w, h = ob.size
    if ob.shape == "rect":
        return (xx >= cx - w / 2) & (xx < cx + w / 2) & (yy >= cy - h / 2) & (yy < cy + h / 2)
    r = w / 2
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r


def _background(spec, t, yy, xx):
    cols = np.array(spec.background, dtype=np.float64)
    if len(cols) == 1:
        return np.broadcast_to(cols[0], yy.shape + (3,)).copy()
    ang = math.radians(spec.gradient_angle)
    proj = (xx * math.cos(ang) + yy * math.sin(ang) + spec.background_drift * t) / spec.size
    ramp = 0.5 + 0.5 * np.sin(2 * math.pi * proj)
    return cols[0] * (1 - ramp[..., None]) + cols[1] * ramp[..., None]


def keypoint_offsets(ob):
    """Center plus four corners, as offsets from the object center.

    Rect corners are the outermost pixel centers. Circles use the points at
    45 degrees on the rim.
    """
    w, h = ob.size
    if ob.shape == "rect":
        dx, dy = 0.5 * w - 0.5, 0.5 * h - 0.5
    else:
        dx = dy = (w / 2) / math.sqrt(2) - 0.5
    return [(0.0, 0.0), (-dx, -dy), (dx, -dy), (-dx, dy), (dx, dy)]


def render(spec, frame_indices=None):
    """Render the requested frames. Returns (frames, masks)."""
    n = spec.size
    idx = range(spec.num_frames) if frame_indices is None else frame_indices
    # pixel centers
    yy, xx = np.mgrid[0:n, 0:n] + 0.5
    order = sorted(range(len(spec.objects)), key=lambda k: -spec.objects[k].depth)
    frames, masks = [], []
    for t in idx:
        img = _background(spec, t, yy, xx)
        mask = np.zeros((n, n), dtype=np.uint8)
        for k in order:
            ob = spec.objects[k]
            m = _shape_mask(ob, t, yy, xx)
            img[m] = ob.rgb
            mask[m] = k + 1
        if spec.occluder is not None:
            m = _shape_mask(spec.occluder, t, yy, xx)
            img[m] = spec.occluder.rgb
            mask[m] = 0
        frames.append(np.clip(np.rint(img), 0, 255).astype(np.uint8))
        masks.append(mask)
    return np.stack(frames), np.stack(masks)


def generate(spec):
    """Render a full clip with masks and keypoints."""
    spec.validate()
    frames, masks = render(spec)
    T, n = spec.num_frames, spec.size
    pts, owner = [], []
    for k, ob in enumerate(spec.objects):
        for off in keypoint_offsets(ob):
            pts.append([[ob.center(t)[0] + off[0], ob.center(t)[1] + off[1]] for t in range(T)])
            owner.append(k + 1)
    if pts:
        kp = np.transpose(np.array(pts, dtype=np.float64), (1, 0, 2))
    else:
        kp = np.zeros((T, 0, 2))
    owner = np.array(owner, dtype=np.int64)
    visible = np.zeros(kp.shape[:2], dtype=bool)
    for t in range(T):
        for p in range(kp.shape[1]):
            x, y = kp[t, p]
            if 0 <= x < n and 0 <= y < n:
                visible[t, p] = masks[t, int(y), int(x)] == owner[p]
    return LabeledClip(frames, masks, kp, visible, owner, spec)


# -- random scenes -------------------------------------------------------------

def _random_rgb(rng, avoid_l=(), min_gap=18.0, tries=200):
    """A saturated-ish color whose Lab lightness is at least ``min_gap`` from ``avoid_l``."""
    for _ in range(tries):
        rgb = tuple(int(v) for v in rng.integers(0, 256, size=3))
        L = rgb_to_lab(np.array(rgb, dtype=float)[None, None])[0, 0, 0]
        if all(abs(L - a) >= min_gap for a in avoid_l):
            return rgb, L
    return rgb, L


def _pick_linear_path(rng, n, T, half, speed_range):
    """Start/velocity keeping a box of half-extent ``half`` fully inside for all frames."""
    lo, hi = half, n - half
    room = hi - lo
    travel_max = speed_range[1] * (T - 1)
    for _ in range(100):
        speed = rng.uniform(*speed_range)
        ang = rng.uniform(0, 2 * math.pi)
        vx, vy = speed * math.cos(ang), speed * math.sin(ang)
        dx, dy = vx * (T - 1), vy * (T - 1)
        if abs(dx) <= room and abs(dy) <= room:
            x0 = rng.uniform(lo + max(0.0, -dx), hi - max(0.0, dx))
            y0 = rng.uniform(lo + max(0.0, -dy), hi - max(0.0, dy))
            return (x0, y0), (vx, vy)
    # fall back to the largest speed that fits
    speed = min(speed_range[0], room / max(T - 1, 1), travel_max)
    return (lo + room / 2 - speed * (T - 1) / 2, rng.uniform(lo, hi)), (speed, 0.0)


def _isoluminant_rgb(rng, rgb, min_ab=30.0, max_dl=2.0, tries=400):
    """A color with (nearly) the same lightness as ``rgb`` but clearly different chroma."""
    ref = rgb_to_lab(np.array(rgb, dtype=float)[None, None])[0, 0]
    cand = rng.integers(0, 256, size=(tries, 3))
    lab = rgb_to_lab(cand[None].astype(float))[0]
    ok = (np.abs(lab[:, 0] - ref[0]) <= max_dl) & (np.hypot(*(lab[:, 1:] - ref[1:]).T) >= min_ab)
    if not ok.any():
        return None
    i = int(np.flatnonzero(ok)[0])
    return tuple(int(v) for v in cand[i]), float(lab[i, 0])


def _random_object(rng, n, T, colors_l, speed_range, size_range, depth, color=None):
    shape = "rect" if rng.random() < 0.6 else "circle"
    if shape == "rect":
        size = tuple(float(rng.integers(size_range[0], size_range[1] + 1)) for _ in range(2))
    else:
        d = float(rng.integers(size_range[0], size_range[1] + 1))
        size = (d, d)
    rgb, L = color if color is not None else _random_rgb(rng, colors_l)
    start, vel = _pick_linear_path(rng, n, T, max(size) / 2, speed_range)
    return ObjectSpec(shape, rgb, size, start, vel, depth=depth), L


def _scene_rng(preset, seed, index):
    return np.random.default_rng([_PRESET_CODE[preset], seed, index])


def random_scene(preset, seed, index, size=64, num_frames=20):
    """Deterministic scene for (preset, seed, index)."""
    if preset not in PRESETS:
        raise ValidationError(f"unknown preset {preset!r}; choose from {PRESETS}")
    rng = _scene_rng(preset, seed, index)
    scene_seed = int(rng.integers(2**31))
    bg_rgb, bg_l = _random_rgb(rng, ())
    lightness = [bg_l]
    background = (bg_rgb,)
    angle = float(rng.uniform(0, 360))
    drift = 0.0
    if rng.random() < 0.5 or preset == "hard":
        bg2, l2 = _random_rgb(rng, [a for a in lightness], min_gap=0.0)
        # keep the gradient gentle so objects stay separable in gray
        bg2 = tuple(int(round(0.7 * a + 0.3 * b)) for a, b in zip(bg_rgb, bg2))
        background = (bg_rgb, bg2)
        lightness.append(float(rgb_to_lab(np.array(bg2, dtype=float)[None, None])[0, 0, 0]))
    tags = {"preset": preset, "index": index}

    if preset in ("plain", "static"):
        speed = (0.0, 0.0) if preset == "static" else (1.0, 2.4)
        objects = []
        bg_l = list(lightness)
        for k in range(int(rng.integers(1, 3))):
            color = None
            if k == 1 and rng.random() < 0.5:
                # same gray level as the first object: only motion tells them apart
                color = _isoluminant_rgb(rng, objects[0].rgb)
                if color is not None and any(abs(color[1] - b) < 18.0 for b in bg_l):
                    color = None
            avoid = bg_l if color is None else lightness
            ob, L = _random_object(rng, size, num_frames, avoid, speed, (14, 24), depth=k, color=color)
            lightness.append(L)
            objects.append(ob)
        if preset == "static":
            # grid-aligned so the label grid represents the masks exactly
            for ob in objects:
                ob.shape = "rect"
                w = 8 * max(1, round(ob.size[0] / 8))
                h = 8 * max(1, round(ob.size[1] / 8))
                x0 = 8 * int(rng.integers(0, (size - w) // 8 + 1))
                y0 = 8 * int(rng.integers(0, (size - h) // 8 + 1))
                ob.size = (float(w), float(h))
                ob.start = (x0 + w / 2, y0 + h / 2)
        return SceneSpec(size, num_frames, background, angle, drift, objects, None, scene_seed, tags).validate()

    # hard
    drift = float(rng.uniform(0.5, 1.5)) * (1 if rng.random() < 0.5 else -1)
    objects = []
    n_obj = int(rng.integers(3, 6))
    same_color = index % 2 == 0
    if same_color:
        objects.extend(_crossing_pair(rng, size, num_frames, lightness))
        tags["same_color_pair"] = [1, 2]
        tags["crossing"] = True
    while len(objects) < n_obj:
        ob, L = _random_object(rng, size, num_frames, lightness, (0.5, 2.0), (8, 16), depth=len(objects))
        if rng.random() < 0.3:
            ob.trajectory = "sinusoidal"
            ob.amplitude = (float(rng.uniform(0, 4)), float(rng.uniform(0, 4)))
            ob.period = float(rng.uniform(8, 16))
        lightness.append(L)
        objects.append(ob)
    occluder = None
    if rng.random() < 0.6:
        occ_rgb, _ = _random_rgb(rng, lightness)
        thick = float(rng.integers(6, 10))
        at = float(rng.uniform(16, 48))
        if rng.random() < 0.5:
            occluder = ObjectSpec("rect", occ_rgb, (thick, float(size)), (at, size / 2), depth=-1)
        else:
            occluder = ObjectSpec("rect", occ_rgb, (float(size), thick), (size / 2, at), depth=-1)
    return SceneSpec(size, num_frames, background, angle, drift, objects, occluder, scene_seed, tags).validate()


def _crossing_pair(rng, n, T, lightness):
    """Two identically colored objects whose horizontal paths cross mid-clip."""
    rgb, L = _random_rgb(rng, lightness)
    lightness.append(L)
    d = float(rng.integers(12, 17))
    speed = float(rng.uniform(1.4, 2.0))
    y = float(rng.uniform(d, n - d))
    # vertical offset keeps the overlap partial while they pass
    dy = float(rng.uniform(0.55, 0.8)) * d * (1 if y < n / 2 else -1)
    span = speed * (T - 1)
    x_left = n / 2 - span / 2
    x_right = n / 2 + span / 2
    shape = "rect" if rng.random() < 0.5 else "circle"
    a = ObjectSpec(shape, rgb, (d, d), (x_left, y), (speed, 0.0), depth=0)
    b = ObjectSpec(shape, rgb, (d, d), (x_right, y + dy), (-speed, 0.0), depth=1)
    return [a, b]


class SyntheticDataset:
    """Lazily generated clips, deterministic per (preset, seed, index)."""

    def __init__(self, n_clips, preset="plain", seed=0, size=64, num_frames=20):
        if n_clips < 1:
            raise ValidationError("dataset needs at least one clip")
        if preset not in PRESETS:
            raise ValidationError(f"unknown preset {preset!r}; choose from {PRESETS}")
        self.n_clips = n_clips
        self.preset = preset
        self.seed = seed
        self.size = size
        self.num_frames = num_frames
        self._specs = {}

    def __len__(self):
        return self.n_clips

    def spec(self, index):
        if not 0 <= index < self.n_clips:
            raise IndexError(index)
        s = self._specs.get(index)
        if s is None:
            s = self._specs[index] = random_scene(self.preset, self.seed, index, self.size, self.num_frames)
        return s

    def clip_length(self, index):
        return self.num_frames

    def frames(self, index, frame_indices):
        return render(self.spec(index), frame_indices)[0]

    def __getitem__(self, index):
        return generate(self.spec(index))

    def __iter__(self):
        for i in range(self.n_clips):
            yield self[i]


def generate_dataset(n_clips, preset="plain", seed=0, size=64, num_frames=20):
    return SyntheticDataset(n_clips, preset, seed, size, num_frames)
