"""Central finite-difference gradient checking."""
from __future__ import annotations

import numpy as np

from .tensor import Tape, backward


def finite_diff_check(fn, params, h=1e-4, max_coords=None, seed=0):
    """Largest relative error between tape gradients and central differences.

    ``fn()`` must rebuild a scalar loss from ``params`` (Tensors, float64
    recommended) on every call. With ``max_coords`` set, that many
    coordinates are sampled per parameter instead of checking all of them.
    Relative error is ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    params = list(params.values()) if isinstance(params, dict) else list(params)
    with Tape() as tape:
        loss = fn()
    grads = backward(loss, tape)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in params:
        analytic = grads[p].data if p in grads else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            up = float(fn().data)
            flat[c] = orig - h
            down = float(fn().data)
            flat[c] = orig
            numeric = (up - down) / (2 * h)
            a = float(analytic.reshape(-1)[c])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
