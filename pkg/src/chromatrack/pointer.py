"""Softmax pointer between a target frame and its reference frames.

For target cell j and reference cell i (over all reference frames jointly)

    A[j, i] = exp(f_i . f_j / T) / sum_k exp(f_k . f_j / T)

and labels are copied with y_j = sum_i A[j, i] c_i.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ValidationError
from .numcore import Tensor, matmul, softmax_rows
from .numcore import ops

LABEL_KINDS = ("color", "segment", "keypoint")


@dataclass
class PointerConfig:
    temperature: float = 1.0

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValidationError(f"temperature must be > 0, got {self.temperature}")


@dataclass
class SimilarityMatrix:
    """Row-stochastic R_t × R_r weights; columns run over all reference cells."""

    weights: np.ndarray
    temperature: float = 1.0
    frames: list = field(default_factory=list)

    @property
    def shape(self):
        return self.weights.shape


@dataclass
class LabelGrid:
    distributions: np.ndarray
    kind: str = "segment"

    def __post_init__(self):
        self.distributions = np.asarray(self.distributions, dtype=np.float64)
        if self.kind not in LABEL_KINDS:
            raise ValidationError(f"unknown label kind {self.kind!r}")
        if self.distributions.ndim != 3:
            raise DimensionError(f"label grid must be H′×W′×d, got {self.distributions.shape}")

    @property
    def d(self):
        return self.distributions.shape[-1]

    def validate(self, tol=1e-4):
        p = self.distributions
        if np.any(p < -tol) or np.any(p > 1 + tol):
            raise ValidationError("label entries must lie in [0, 1]")
        if self.kind != "keypoint" and np.any(np.abs(p.sum(axis=-1) - 1.0) > tol):
            raise ValidationError(f"{self.kind} distributions must sum to 1 per position")
        return self


def attention(target, references, temperature=1.0):
    """Differentiable pointer.

    ``target`` is (B×)P×D, ``references`` is (B×)R×D, both Tensors.
    Returns the (B×)P×R row-stochastic weights as a Tensor.
    """
    if target.shape[-1] != references.shape[-1]:
        raise DimensionError(
            f"embedding width mismatch: target {target.shape}, references {references.shape}"
        )
    logits = matmul(target, ops.transpose(references, tuple(range(references.ndim - 2)) + (-1, -2)))
    if temperature != 1.0:
        logits = logits * (1.0 / temperature)
    return softmax_rows(logits)


def _as_array(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def similarity(target_embed, reference_embeds, config=None, frames=None):
    """Pointer from an H′×W′×D target into N_ref×H′×W′×D references."""
    config = config or PointerConfig()
    t = _as_array(target_embed)
    r = _as_array(reference_embeds)
    if r.ndim == t.ndim:
        r = r[None]
    if t.shape[-1] != r.shape[-1]:
        raise DimensionError(f"embedding width mismatch: target {t.shape}, references {r.shape}")
    D = t.shape[-1]
    A = attention(Tensor(t.reshape(-1, D)), Tensor(r.reshape(-1, D)), config.temperature)
    return SimilarityMatrix(A.data, config.temperature, list(frames or range(r.shape[0])))


def propagate(A, reference_labels, kind=None):
    """Mix reference label grids through the pointer.

    ``reference_labels`` is a LabelGrid, a list of them, or an array of shape
    N_ref×H′×W′×d. The output grid has the target's H′×W′, which must be
    square-compatible with the number of rows of ``A`` (assumed equal to a
    single reference frame's shape).
    """
    if isinstance(reference_labels, LabelGrid):
        reference_labels = [reference_labels]
    if isinstance(reference_labels, (list, tuple)):
        if not reference_labels:
            raise ValidationError("need at least one reference label grid")
        kinds = {lg.kind for lg in reference_labels}
        if len(kinds) != 1:
            raise ValidationError(f"mixed label kinds {kinds}")
        kind = kind or kinds.pop()
        ds = {lg.d for lg in reference_labels}
        if len(ds) != 1:
            raise DimensionError(f"reference label grids disagree on d: {sorted(ds)}")
        labels = np.stack([lg.distributions for lg in reference_labels])
    else:
        labels = np.asarray(reference_labels, dtype=np.float64)
        if labels.ndim == 3:
            labels = labels[None]
    kind = kind or "segment"
    W = A.weights if isinstance(A, SimilarityMatrix) else np.asarray(A)
    n_ref, h, w, d = labels.shape
    if W.shape[1] != n_ref * h * w:
        raise DimensionError(
            f"pointer has {W.shape[1]} reference columns, labels provide {n_ref}×{h}×{w}"
        )
    if W.shape[0] != h * w:
        raise DimensionError(f"pointer has {W.shape[0]} target rows, expected {h * w}")
    out = W @ labels.reshape(-1, d)
    return LabelGrid(out.reshape(h, w, d), kind)


def argmax_pointer(A):
    """Reference column with the largest weight for each target row (ties -> lowest)."""
    W = A.weights if isinstance(A, SimilarityMatrix) else np.asarray(A)
    return W.argmax(axis=1)
