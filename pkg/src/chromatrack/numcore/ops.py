"""Differentiable operations on :class:`Tensor`."""
from __future__ import annotations

import numpy as np

from ..errors import DimensionError, NumericError, ValidationError
from .tensor import Tensor, make_result

CE_EPS = 1e-8


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float64))


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _binary_operands(a, b):
    if isinstance(a, Tensor):
        b = as_tensor(b, like=a)
    else:
        b = as_tensor(b)
        a = as_tensor(a, like=b)
    return a, b


# -- elementwise -------------------------------------------------------------

def add(a, b):
    a, b = _binary_operands(a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), back)


def sub(a, b):
    a, b = _binary_operands(a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), back)


def mul(a, b):
    a, b = _binary_operands(a, b)

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_result(a.data * b.data, (a, b), back)


def div(a, b):
    a, b = _binary_operands(a, b)

    def back(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_result(a.data / b.data, (a, b), back)


def relu(x):
    mask = x.data > 0

    def back(g):
        return (g * mask,)

    return make_result(x.data * mask, (x,), back)


def exp(x):
    out = np.exp(x.data)

    def back(g):
        return (g * out,)

    return make_result(out, (x,), back)


def log(x):
    def back(g):
        return (g / x.data,)

    return make_result(np.log(x.data), (x,), back)


# -- shape -------------------------------------------------------------------

def reshape(x, shape):
    src = x.shape

    def back(g):
        return (g.reshape(src),)

    return make_result(x.data.reshape(shape), (x,), back)


def transpose(x, axes=None):
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(a % x.ndim for a in axes)
    inverse = np.argsort(axes)

    def back(g):
        return (np.transpose(g, inverse),)

    return make_result(np.transpose(x.data, axes), (x,), back)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back)


def _is_basic_index(index):
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (slice, int, np.integer)) or p is None or p is Ellipsis for p in parts)


def getitem(x, index):
    basic = _is_basic_index(index)

    def back(g):
        gx = np.zeros_like(x.data)
        if basic:
            gx[index] += g
        else:
            np.add.at(gx, index, g)
        return (gx,)

    return make_result(x.data[index], (x,), back)


def sum(x, axis=None, keepdims=False):
    src = x.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return make_result(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), back)


def mean(x, axis=None, keepdims=False):
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([x.shape[a] for a in axes]))
    return sum(x, axis=axis, keepdims=keepdims) * (1.0 / n)


# -- linear algebra ----------------------------------------------------------

def matmul(a, b):
    """Matrix product ``a @ b``; leading dimensions broadcast as in numpy."""
    a, b = _binary_operands(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    if a.dtype != b.dtype:
        raise DimensionError(f"matmul dtype mismatch: {a.dtype} vs {b.dtype}")

    def back(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_result(np.matmul(a.data, b.data), (a, b), back)


def _pair(v, name):
    if isinstance(v, (int, np.integer)):
        return int(v), int(v)
    v = tuple(int(e) for e in v)
    if len(v) != 2:
        raise ValidationError(f"{name} must be an int or a pair, got {v}")
    return v


def conv2d(x, weight, bias=None, stride=1, padding=0, dilation=1):
    """2D cross-correlation (no kernel flip).

    ``x`` is C×H×W or N×C×H×W, ``weight`` is O×C×kh×kw. ``stride``,
    ``padding`` and ``dilation`` take an int or a (rows, cols) pair.
    """
    sh, sw = _pair(stride, "stride")
    ph, pw = _pair(padding, "padding")
    dh, dw = _pair(dilation, "dilation")
    if sh < 1 or sw < 1 or dh < 1 or dw < 1 or ph < 0 or pw < 0:
        raise ValidationError("stride and dilation must be >= 1, padding >= 0")
    if weight.ndim != 4:
        raise DimensionError(f"kernel must be O×C×kh×kw, got {weight.shape}")
    O, C, kh, kw = weight.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValidationError(f"kernel extents must be odd, got {kh}×{kw}")
    unbatched = x.ndim == 3
    if x.ndim not in (3, 4):
        raise DimensionError(f"conv2d input must be C×H×W or N×C×H×W, got {x.shape}")
    xd = x.data[None] if unbatched else x.data
    N, Cx, H, W = xd.shape
    if Cx != C:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape}, kernel {weight.shape}")
    Ho = (H + 2 * ph - dh * (kh - 1) - 1) // sh + 1
    Wo = (W + 2 * pw - dw * (kw - 1) - 1) // sw + 1
    if Ho < 1 or Wo < 1:
        raise DimensionError(
            f"conv2d output extent {Ho}×{Wo} is not positive for input {x.shape}, kernel {weight.shape}"
        )

    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else xd
    K = kh * kw
    cols = np.empty((N, C, K, Ho, Wo), dtype=xd.dtype)
    windows = []
    for i in range(kh):
        for j in range(kw):
            rs = slice(i * dh, i * dh + sh * (Ho - 1) + 1, sh)
            cs = slice(j * dw, j * dw + sw * (Wo - 1) + 1, sw)
            windows.append((rs, cs))
            cols[:, :, i * kw + j] = xp[:, :, rs, cs]
    cols = cols.reshape(N, C * K, Ho * Wo)
    w2 = weight.data.reshape(O, C * K)
    out = np.matmul(w2, cols).reshape(N, O, Ho, Wo)
    inputs = (x, weight)
    if bias is not None:
        out += bias.data.reshape(1, O, 1, 1)
        inputs = (x, weight, bias)
    if unbatched:
        out = out[0]

    def back(g):
        g2 = (g[None] if unbatched else g).reshape(N, O, Ho * Wo)
        gx = gw = None
        if weight.requires_grad:
            gw = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
        if x.requires_grad:
            gcols = np.matmul(w2.T, g2).reshape(N, C, K, Ho, Wo)
            gxp = np.zeros_like(xp)
            for k, (rs, cs) in enumerate(windows):
                gxp[:, :, rs, cs] += gcols[:, :, k]
            gx = gxp[:, :, ph:ph + H, pw:pw + W]
            if unbatched:
                gx = gx[0]
        grads = (gx, gw)
        if bias is not None:
            grads += (g2.sum(axis=(0, 2)),)
        return grads

    return make_result(out, inputs, back)


def batch_norm(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Per-channel normalization over every axis except axis 1.

    In training mode the batch statistics are used and the running buffers
    (plain numpy arrays) are updated in place; otherwise the running
    statistics are used and the op is affine in ``x``.
    """
    C = x.shape[1]
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, C) + (1,) * (x.ndim - 2)
    if training:
        n = x.size // C
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (n / max(n - 1, 1))
    else:
        mu, var = running_mean, running_var
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mu.reshape(bshape).astype(x.dtype)) * inv_std.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def back(g):
        gbeta = g.sum(axis=axes)
        ggamma = (g * xhat).sum(axis=axes)
        gxhat = g * gamma.data.reshape(bshape)
        if training:
            m = x.size // C
            s1 = gxhat.sum(axis=axes).reshape(bshape)
            s2 = (gxhat * xhat).sum(axis=axes).reshape(bshape)
            gx = (inv_std.reshape(bshape) / m) * (m * gxhat - s1 - xhat * s2)
        else:
            gx = gxhat * inv_std.reshape(bshape)
        return gx, ggamma, gbeta

    return make_result(out, (x, gamma, beta), back)


# -- probabilities -----------------------------------------------------------

def softmax_rows(logits):
    """Softmax over the last axis with per-row max subtraction."""
    if not np.all(np.isfinite(logits.data)):
        raise NumericError("softmax_rows received non-finite logits")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return make_result(p, (logits,), back)


def cross_entropy(pred_probs, target_onehot, eps=CE_EPS):
    """Mean over rows of ``-sum(target * log(pred + eps))``.

    Rows are everything but the last axis, so B×d and B×P×d both work.
    """
    pred_probs = as_tensor(pred_probs)
    target = np.asarray(target_onehot.data if isinstance(target_onehot, Tensor) else target_onehot)
    if target.shape != pred_probs.shape:
        raise DimensionError(f"cross_entropy shape mismatch: {pred_probs.shape} vs {target.shape}")
    is_binary = np.all((target == 0) | (target == 1))
    if not is_binary or not np.all(target.sum(axis=-1) == 1):
        raise ValidationError("cross_entropy target rows must be one-hot")
    p = pred_probs.data
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-4):
        raise ValidationError("cross_entropy predictions must sum to 1 per row")
    rows = p.size // p.shape[-1]
    t = target.astype(p.dtype)
    loss = -(t * np.log(p + eps)).sum() / rows

    def back(g):
        return (-g * t / (p + eps) / rows,)

    return make_result(np.asarray(loss, dtype=p.dtype), (pred_probs,), back)
