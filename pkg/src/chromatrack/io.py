"""File formats: binary PPM/PGM, the tensor checkpoint container, dataset trees.

Checkpoint layout (all integers little-endian)::

    b"CTCK"  u32 version (major << 16 | minor)
    u32 config_len, config JSON (utf-8)
    repeated until the trailer:
        u32 name_len, name (utf-8), u8 dtype tag, u32 rank,
        rank × u64 extents, raw payload
    u32 CRC32 of every preceding byte
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

from .errors import CorruptionError, ParseError, ValidationError, VersionError

MAGIC = b"CTCK"
FORMAT_MAJOR = 1
FORMAT_MINOR = 1
_DTYPE_TAGS = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8")}
_TAG_OF = {np.dtype(np.float32): 1, np.dtype(np.float64): 2, np.dtype(np.int64): 3}


def atomic_write_bytes(path, data):
    """Write via a temp file in the same directory, fsync, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


# -- netpbm ------------------------------------------------------------------

def _parse_netpbm(data, magic, channels):
    pos = 0
    tokens = []

    def skip_ws_and_comments(p):
        while p < len(data):
            c = data[p:p + 1]
            if c == b"#":
                end = data.find(b"\n", p)
                p = len(data) if end < 0 else end + 1
            elif c.isspace():
                p += 1
            else:
                break
        return p

    while len(tokens) < 4:
        pos = skip_ws_and_comments(pos)
        if pos >= len(data):
            raise ParseError("truncated header", pos)
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        tokens.append((data[start:pos], start))
    if tokens[0][0] != magic:
        raise ParseError(f"expected magic {magic.decode()}, got {tokens[0][0]!r}", tokens[0][1])
    try:
        width, height, maxval = (int(t) for t, _ in tokens[1:])
    except ValueError:
        raise ParseError("non-numeric header field", tokens[1][1]) from None
    if width < 1 or height < 1:
        raise ParseError(f"bad dimensions {width}×{height}", tokens[1][1])
    if maxval != 255:
        raise ParseError(f"only maxval 255 is supported, got {maxval}", tokens[3][1])
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise ParseError("missing whitespace after maxval", pos)
    pos += 1
    need = width * height * channels
    if len(data) - pos < need:
        raise ParseError(f"truncated payload: need {need} bytes, have {len(data) - pos}", len(data))
    pixels = np.frombuffer(data, dtype=np.uint8, count=need, offset=pos)
    shape = (height, width, channels) if channels > 1 else (height, width)
    return pixels.reshape(shape).copy()


def read_ppm(path):
    """Binary P6, maxval 255 -> H×W×3 uint8."""
    return _parse_netpbm(Path(path).read_bytes(), b"P6", 3)


def read_pgm(path):
    """Binary P5, maxval 255 -> H×W uint8."""
    return _parse_netpbm(Path(path).read_bytes(), b"P5", 1)


def encode_ppm(image):
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValidationError(f"PPM needs an H×W×3 uint8 image, got {img.shape} {img.dtype}")
    return b"P6\n%d %d\n255\n" % (img.shape[1], img.shape[0]) + np.ascontiguousarray(img).tobytes()


def encode_pgm(image):
    img = np.asarray(image)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValidationError(f"PGM needs an H×W uint8 image, got {img.shape} {img.dtype}")
    return b"P5\n%d %d\n255\n" % (img.shape[1], img.shape[0]) + np.ascontiguousarray(img).tobytes()


def write_ppm(path, image):
    atomic_write_bytes(path, encode_ppm(image))


def write_pgm(path, image):
    atomic_write_bytes(path, encode_pgm(image))


# -- checkpoint container ------------------------------------------------------

def encode_checkpoint(tensors, config=None, version=(FORMAT_MAJOR, FORMAT_MINOR)):
    parts = [MAGIC, struct.pack("<I", (version[0] << 16) | version[1])]
    cfg = json.dumps(config or {}, sort_keys=True).encode("utf-8")
    parts += [struct.pack("<I", len(cfg)), cfg]
    for name, value in tensors.items():
        arr = np.asarray(getattr(value, "data", value))
        tag = _TAG_OF.get(arr.dtype)
        if tag is None:
            raise ValidationError(f"cannot store {name!r} with dtype {arr.dtype}")
        key = name.encode("utf-8")
        parts += [struct.pack("<I", len(key)), key, struct.pack("<BI", tag, arr.ndim)]
        parts += [struct.pack(f"<{arr.ndim}Q", *arr.shape)]
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPE_TAGS[tag]).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def decode_checkpoint(data):
    """Returns ``(tensors, config)``; tensors is an ordered name -> ndarray dict."""
    if len(data) < 16 or data[:4] != MAGIC:
        raise CorruptionError("not a checkpoint file (bad magic)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CorruptionError("checkpoint CRC mismatch")
    (version,) = struct.unpack_from("<I", body, 4)
    major, minor = version >> 16, version & 0xFFFF
    if major != FORMAT_MAJOR or minor > FORMAT_MINOR:
        raise VersionError(
            f"checkpoint format {major}.{minor} is not supported (reader is {FORMAT_MAJOR}.{FORMAT_MINOR})"
        )
    pos = 8
    (cfg_len,) = struct.unpack_from("<I", body, pos)
    pos += 4
    config = json.loads(body[pos:pos + cfg_len].decode("utf-8"))
    pos += cfg_len
    tensors = {}
    while pos < len(body):
        (name_len,) = struct.unpack_from("<I", body, pos)
        pos += 4
        name = body[pos:pos + name_len].decode("utf-8")
        pos += name_len
        tag, rank = struct.unpack_from("<BI", body, pos)
        pos += 5
        shape = struct.unpack_from(f"<{rank}Q", body, pos)
        pos += 8 * rank
        dt = _DTYPE_TAGS.get(tag)
        if dt is None:
            raise CorruptionError(f"unknown dtype tag {tag} for {name!r}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        if pos + nbytes > len(body):
            raise CorruptionError(f"payload of {name!r} runs past end of file")
        arr = np.frombuffer(body, dtype=dt, count=nbytes // dt.itemsize, offset=pos).reshape(shape)
        tensors[name] = arr.astype(dt.newbyteorder("="))
        pos += nbytes
    return tensors, config


def save_checkpoint(path, tensors, config=None):
    atomic_write_bytes(path, encode_checkpoint(tensors, config))


def load_checkpoint(path):
    return decode_checkpoint(Path(path).read_bytes())


def save_palette(path, palette):
    meta = {k: v for k, v in palette.fit_metadata.items() if k != "history"}
    tensors = {
        "centroids": palette.centroids.astype(np.float32),
        "seed": np.asarray(float(palette.seed)),
    }
    save_checkpoint(path, tensors, {"kind": "palette", "fit_metadata": meta})


def load_palette(path):
    from .chroma import Palette

    tensors, cfg = load_checkpoint(path)
    meta = dict(cfg.get("fit_metadata", {}))
    meta["seed"] = int(tensors["seed"])
    return Palette(tensors["centroids"].astype(np.float64), meta)


# -- clip directories ----------------------------------------------------------

def write_clip(clip_dir, clip):
    """``frames/%03d.ppm``, ``masks/%03d.pgm``, ``keypoints.json``, ``spec.json``."""
    clip_dir = Path(clip_dir)
    for t in range(clip.num_frames):
        write_ppm(clip_dir / "frames" / f"{t:03d}.ppm", clip.frames[t])
        write_pgm(clip_dir / "masks" / f"{t:03d}.pgm", clip.masks[t])
    write_keypoints(clip_dir / "keypoints.json", clip.keypoints, clip.visible, clip.keypoint_owner)
    atomic_write_text(clip_dir / "spec.json", json.dumps(clip.spec.to_dict(), indent=1))


def write_keypoints(path, points, visible=None, owner=None):
    frames = []
    for t in range(len(points)):
        rec = {"points": [[float(x), float(y)] for x, y in points[t]]}
        if visible is not None:
            rec["visible"] = [bool(v) for v in visible[t]]
        frames.append(rec)
    doc = {"frames": frames}
    if owner is not None:
        doc["owner"] = [int(o) for o in owner]
    atomic_write_text(path, json.dumps(doc))


def read_keypoints(path):
    """Returns ``(points T×P×2, visible T×P or None, owner P or None)``."""
    doc = json.loads(Path(path).read_text())
    frames = doc["frames"]
    pts = np.array([f["points"] for f in frames], dtype=np.float64).reshape(len(frames), -1, 2)
    vis = None
    if all("visible" in f for f in frames):
        vis = np.array([f["visible"] for f in frames], dtype=bool).reshape(pts.shape[:2])
    owner = np.array(doc["owner"], dtype=np.int64) if "owner" in doc else None
    return pts, vis, owner


def _sorted_files(directory, suffix):
    return sorted(p for p in Path(directory).iterdir() if p.suffix == suffix)


def read_clip(clip_dir):
    """Load a clip directory (our layout or DAVIS-style) as a LabeledClip.

    DAVIS-style directories carry ``frames/%05d.ppm`` and only a first-frame
    mask ``masks/00000.pgm``; missing masks come back as zeros and keypoints
    as an empty array.
    """
    from .synth import LabeledClip, SceneSpec

    clip_dir = Path(clip_dir)
    frame_files = _sorted_files(clip_dir / "frames", ".ppm")
    if not frame_files:
        raise ValidationError(f"no frames under {clip_dir / 'frames'}")
    frames = np.stack([read_ppm(p) for p in frame_files])
    T, H, W = frames.shape[:3]
    masks = np.zeros((T, H, W), dtype=np.uint8)
    mask_dir = clip_dir / "masks"
    if mask_dir.is_dir():
        for p in _sorted_files(mask_dir, ".pgm"):
            t = int(p.stem)
            if t < T:
                masks[t] = read_pgm(p)
    kp_path = clip_dir / "keypoints.json"
    if kp_path.exists():
        kp, vis, owner = read_keypoints(kp_path)
        if vis is None:
            vis = np.ones(kp.shape[:2], dtype=bool)
        if owner is None:
            owner = np.zeros(kp.shape[1], dtype=np.int64)
    else:
        kp, vis, owner = np.zeros((T, 0, 2)), np.zeros((T, 0), dtype=bool), np.zeros(0, dtype=np.int64)
    spec_path = clip_dir / "spec.json"
    if spec_path.exists():
        spec = SceneSpec.from_dict(json.loads(spec_path.read_text()))
    else:
        spec = SceneSpec(size=H, num_frames=T)
    return LabeledClip(frames, masks, kp, vis, owner, spec)


def write_dataset(out_dir, dataset):
    out_dir = Path(out_dir)
    for i, clip in enumerate(dataset):
        write_clip(out_dir / f"clip_{i:04d}", clip)
    return out_dir


class DirectoryDataset:
    """Clips stored as ``clip_%04d`` directories."""

    def __init__(self, root):
        self.root = Path(root)
        self.clip_dirs = sorted(p for p in self.root.iterdir() if p.is_dir() and p.name.startswith("clip_"))
        if not self.clip_dirs:
            raise ValidationError(f"no clip_* directories under {self.root}")

    def __len__(self):
        return len(self.clip_dirs)

    def clip_length(self, index):
        return len(_sorted_files(self.clip_dirs[index] / "frames", ".ppm"))

    def frames(self, index, frame_indices):
        files = _sorted_files(self.clip_dirs[index] / "frames", ".ppm")
        return np.stack([read_ppm(files[t]) for t in frame_indices])

    def __getitem__(self, index):
        return read_clip(self.clip_dirs[index])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]
