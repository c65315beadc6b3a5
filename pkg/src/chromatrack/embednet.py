"""Embedding network: gray clip -> one D-dim vector per grid cell per frame.

Layout, all at reduced width:

* per-frame encoder, weights shared across frames: stride-2 3×3 convs,
  one per halving of the resolution;
* two coordinate channels in [-1, 1] appended once to the encoder output;
* a cross-frame stack of (1×3×3 dilated spatial, 3×1×1 temporal) conv pairs;
* a final 1×1 projection to D channels with a bias and no activation.

Every conv except the projection is followed by batch norm and ReLU.
"""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ValidationError
from .numcore import Tensor, batch_norm, concat, conv2d, relu
from .numcore import ops


@dataclass
class NetworkConfig:
    input_size: int = 64
    grid_factor: int = 8
    embed_dim: int = 32
    encoder_channels: tuple = (16, 32, 64)
    stack_channels: int = 64
    dilations: tuple = (1, 2, 4)
    num_frames: int = 4
    init_std: float = 0.05
    bn_momentum: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.encoder_channels = tuple(int(c) for c in self.encoder_channels)
        self.dilations = tuple(int(d) for d in self.dilations)
        self.validate()

    @property
    def grid_size(self):
        return self.input_size // self.grid_factor

    def validate(self):
        if self.input_size < 1 or self.grid_factor < 1 or self.input_size % self.grid_factor:
            raise ValidationError(
                f"input_size {self.input_size} must be divisible by grid_factor {self.grid_factor}"
            )
        stages = math.log2(self.grid_factor)
        if stages != int(stages):
            raise ValidationError(f"grid_factor must be a power of two, got {self.grid_factor}")
        if len(self.encoder_channels) != int(stages):
            raise ValidationError(
                f"grid_factor {self.grid_factor} needs {int(stages)} encoder stages, "
                f"got channels {self.encoder_channels}"
            )
        if self.embed_dim < 2:
            raise ValidationError("embed_dim must be >= 2")
        if self.num_frames < 2:
            raise ValidationError("num_frames must be >= 2")
        if not self.dilations or min(self.dilations) < 1:
            raise ValidationError("dilations must be a non-empty list of positive ints")
        if self.stack_channels < 1 or min(self.encoder_channels, default=1) < 1:
            raise ValidationError("channel widths must be positive")
        if self.init_std < 0:
            raise ValidationError("init_std must be >= 0")

    def to_dict(self):
        d = asdict(self)
        d["encoder_channels"] = list(self.encoder_channels)
        d["dilations"] = list(self.dilations)
        return d


@dataclass
class EmbeddingGrid:
    """``values`` is a T×H′×W′×D tensor (B×T×H′×W′×D when batched)."""

    values: Tensor
    frames: list = field(default_factory=list)


def _layer_shapes(cfg):
    """(name, kernel shape, has_bn) for every conv, in forward order."""
    shapes = []
    c_in = 1
    for i, c in enumerate(cfg.encoder_channels):
        shapes.append((f"enc{i}", (c, c_in, 3, 3), True))
        c_in = c
    c_in += 2
    s = cfg.stack_channels
    for i, _ in enumerate(cfg.dilations):
        shapes.append((f"stack{i}.spatial", (s, c_in, 3, 3), True))
        shapes.append((f"stack{i}.temporal", (s, s, 3, 1), True))
        c_in = s
    shapes.append(("proj", (cfg.embed_dim, c_in, 1, 1), False))
    return shapes


def parameter_count(cfg):
    """Trainable scalars: conv kernels, BN scale/shift, projection bias."""
    total = 0
    for _, shape, has_bn in _layer_shapes(cfg):
        total += int(np.prod(shape))
        total += 2 * shape[0] if has_bn else shape[0]
    return total


def build(config, dtype=np.float32):
    """Fresh parameters: Gaussian(0, init_std) kernels, zero biases, unit BN scales.

    Returns an ordered ``name -> Tensor`` map. BN running statistics are
    included as tensors with ``requires_grad=False``.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    params = OrderedDict()
    for name, shape, has_bn in _layer_shapes(config):
        w = rng.normal(0.0, 1.0, size=shape) * config.init_std
        params[f"{name}.weight"] = Tensor(w.astype(dtype), requires_grad=True)
        c = shape[0]
        if has_bn:
            params[f"{name}.bn.gamma"] = Tensor(np.ones(c, dtype), requires_grad=True)
            params[f"{name}.bn.beta"] = Tensor(np.zeros(c, dtype), requires_grad=True)
            params[f"{name}.bn.running_mean"] = Tensor(np.zeros(c, dtype))
            params[f"{name}.bn.running_var"] = Tensor(np.ones(c, dtype))
        else:
            params[f"{name}.bias"] = Tensor(np.zeros(c, dtype), requires_grad=True)
    return params


def trainable(params):
    return OrderedDict((k, v) for k, v in params.items() if v.requires_grad)


def coord_grid(h, w):
    """2×h×w grid: channel 0 is x, channel 1 is y, both spanning [-1, 1]."""
    if h < 1 or w < 1:
        raise ValidationError("coord_grid needs h, w >= 1")
    xs = np.linspace(-1.0, 1.0, w) if w > 1 else np.zeros(1)
    ys = np.linspace(-1.0, 1.0, h) if h > 1 else np.zeros(1)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx, gy])


def _bn_relu(params, name, x, training, momentum, activate=True):
    y = batch_norm(
        x,
        params[f"{name}.bn.gamma"],
        params[f"{name}.bn.beta"],
        params[f"{name}.bn.running_mean"].data,
        params[f"{name}.bn.running_var"].data,
        training=training,
        momentum=momentum,
    )
    return relu(y) if activate else y


def forward(params, gray_clip, config, training=False, coords=True):
    """Embed a gray clip.

    ``gray_clip`` is T×H×W (or B×T×H×W) with intensities in [-1, 1] and
    T = ``config.num_frames``. ``coords=False`` zeroes the coordinate
    channels, which is only useful for probing the network.
    """
    x = gray_clip.data if isinstance(gray_clip, Tensor) else np.asarray(gray_clip)
    batched = x.ndim == 4
    if x.ndim not in (3, 4):
        raise ValidationError(f"gray clip must be T×H×W or B×T×H×W, got shape {x.shape}")
    if not batched:
        x = x[None]
    B, T, H, W = x.shape
    if T != config.num_frames:
        raise ValidationError(f"expected {config.num_frames} frames, got {T}")
    if H != config.input_size or W != config.input_size:
        raise ValidationError(f"expected {config.input_size}×{config.input_size} frames, got {H}×{W}")
    if not np.all(np.isfinite(x)) or x.min() < -1.0 - 1e-6 or x.max() > 1.0 + 1e-6:
        raise ValidationError("gray intensities must be finite and within [-1, 1]")

    dtype = params["proj.weight"].dtype
    mom = config.bn_momentum
    h = Tensor(x.reshape(B * T, 1, H, W).astype(dtype, copy=False))
    for i, _ in enumerate(config.encoder_channels):
        h = conv2d(h, params[f"enc{i}.weight"], stride=2, padding=1)
        h = _bn_relu(params, f"enc{i}", h, training, mom)

    g = config.grid_size
    grid = coord_grid(g, g) if coords else np.zeros((2, g, g))
    grid = Tensor(np.broadcast_to(grid.astype(dtype), (B * T, 2, g, g)).copy())
    h = concat([h, grid], axis=1)

    s = config.stack_channels
    for i, d in enumerate(config.dilations):
        h = conv2d(h, params[f"stack{i}.spatial.weight"], padding=d, dilation=d)
        h = _bn_relu(params, f"stack{i}.spatial", h, training, mom)
        # time on the row axis, space flattened on the column axis
        h = ops.transpose(h.reshape(B, T, s, g * g), (0, 2, 1, 3))
        h = conv2d(h, params[f"stack{i}.temporal.weight"], padding=(1, 0))
        h = _bn_relu(params, f"stack{i}.temporal", h, training, mom)
        h = ops.transpose(h, (0, 2, 1, 3)).reshape(B * T, s, g, g)

    h = conv2d(h, params["proj.weight"], params["proj.bias"])
    out = ops.transpose(h.reshape(B, T, config.embed_dim, g, g), (0, 1, 3, 4, 2))
    if not batched:
        out = out.reshape(T, g, g, config.embed_dim)
    return EmbeddingGrid(out, list(range(T)))
