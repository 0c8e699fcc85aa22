"""Differentiable bilinear sampling, flow-based view synthesis, and the
range-map visibility check.

Sampling ops are torch and fully differentiable (adjoints via autograd);
the range map is a non-differentiable occlusion gate and is computed with
a sequential numpy scatter so its accumulation order matches the literal
double-sum definition bit for bit.
"""

from __future__ import annotations

from typing import Union

import numpy as np
import torch
from torch import Tensor

from .geometry import pixel_grid

#: Range-map threshold above which a pixel counts as visible.
VISIBILITY_THRESHOLD = 0.95

ArrayLike = Union[Tensor, np.ndarray]


def bilinear_sample(source: Tensor, coords: Tensor) -> Tensor:
    """Sample `source` (H, W, C) at per-pixel coordinates (Ho, Wo, 2).

    Standard four-neighbor bilinear interpolation; coordinates outside the
    image are clamped to the border (border replication). Integer
    coordinates reproduce source pixels bit for bit.
    """
    if source.ndim != 3:
        raise ValueError(f"source must be (H, W, C), got {tuple(source.shape)}")
    if coords.shape[-1] != 2:
        raise ValueError(f"coords must end in (u, v) pairs, got {tuple(coords.shape)}")
    h, w, _ = source.shape
    x = coords[..., 0].clamp(0, w - 1)
    y = coords[..., 1].clamp(0, h - 1)
    x0 = torch.floor(x)
    y0 = torch.floor(y)
    wx = x - x0
    wy = y - y0
    x0i = x0.long()
    y0i = y0.long()
    x1i = torch.clamp(x0i + 1, max=w - 1)
    y1i = torch.clamp(y0i + 1, max=h - 1)

    flat = source.reshape(h * w, -1)

    def grab(yi: Tensor, xi: Tensor) -> Tensor:
        return flat[(yi * w + xi).reshape(-1)].reshape(*yi.shape, flat.shape[-1])

    wx = wx[..., None]
    wy = wy[..., None]
    top = grab(y0i, x0i) * (1 - wx) + grab(y0i, x1i) * wx
    bottom = grab(y1i, x0i) * (1 - wx) + grab(y1i, x1i) * wx
    return top * (1 - wy) + bottom * wy


def synthesize_view(source: Tensor, flow: Tensor) -> Tensor:
    """Inverse-warp `source` by a displacement field: out(p) = source(p + flow(p))."""
    if flow.shape[:2] != source.shape[:2] or flow.shape[-1] != 2:
        raise ValueError(
            f"flow shape {tuple(flow.shape)} incompatible with source {tuple(source.shape)}"
        )
    h, w = source.shape[:2]
    return bilinear_sample(source, pixel_grid(h, w) + flow)


def range_map(backward_flow: ArrayLike) -> Tensor:
    """Forward-splatted occupancy of a backward flow.

    R(u,v) = sum_{i,j} max(0, 1-|u-(i+Fu(i,j))|) * max(0, 1-|v-(j+Fv(i,j))|).
    Implemented in scatter form: each source pixel deposits the kernel at
    the four integer pixels around its flowed location. np.add.at applies
    contributions sequentially in source row-major order, so the result is
    bit-identical to evaluating the double sum directly. Not differentiable
    by design (the visibility mask is a gate, not a loss surface).
    """
    flow = backward_flow.detach().numpy() if isinstance(backward_flow, Tensor) else np.asarray(backward_flow)
    flow = flow.astype(np.float64, copy=False)
    if flow.ndim != 3 or flow.shape[-1] != 2:
        raise ValueError(f"backward flow must be (H, W, 2), got {flow.shape}")
    if not np.isfinite(flow).all():
        raise ValueError("backward flow must be finite")
    h, w = flow.shape[:2]
    jj, ii = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    x = ii + flow[..., 0]
    y = jj + flow[..., 1]
    x0 = np.floor(x)
    y0 = np.floor(y)
    # (H, W, 4) corner coordinates, source-major when flattened
    cx = np.stack([x0, x0 + 1, x0, x0 + 1], axis=-1)
    cy = np.stack([y0, y0, y0 + 1, y0 + 1], axis=-1)
    weight = np.maximum(0.0, 1.0 - np.abs(cx - x[..., None])) * np.maximum(
        0.0, 1.0 - np.abs(cy - y[..., None])
    )
    keep = (cx >= 0) & (cx <= w - 1) & (cy >= 0) & (cy <= h - 1)
    keep = keep.reshape(-1)
    idx = (cy.reshape(-1)[keep].astype(np.int64) * w + cx.reshape(-1)[keep].astype(np.int64))
    out = np.zeros(h * w, dtype=np.float64)
    np.add.at(out, idx, weight.reshape(-1)[keep])
    return torch.from_numpy(out.reshape(h, w))


def visibility_mask(range_values: ArrayLike, threshold: float = VISIBILITY_THRESHOLD) -> Tensor:
    """Boolean visibility gate: strictly greater than the threshold."""
    r = range_values if isinstance(range_values, Tensor) else torch.as_tensor(range_values)
    return r > threshold
