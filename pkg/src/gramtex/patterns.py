"""Small synthetic test images, as [1,3,H,W] tensors in [0,1]."""

import numpy as np

from .tensor import Tensor


def checkerboard(extent, tile=4, low=0.2, high=0.8, dtype=np.float32):
    """Two-tone checkerboard with square tiles."""
    H, W = (extent, extent) if isinstance(extent, int) else extent
    iy, ix = np.indices((H, W))
    mask = ((iy // tile + ix // tile) % 2).astype(dtype)
    plane = low + (high - low) * mask
    return Tensor(np.broadcast_to(plane, (1, 3, H, W)).astype(dtype).copy())


def diagonal_ramp(extent, dtype=np.float32):
    """Smooth corner-to-corner gradient, different per channel."""
    H, W = (extent, extent) if isinstance(extent, int) else extent
    iy, ix = np.indices((H, W))
    r = (iy / max(H - 1, 1)).astype(dtype)
    g = (ix / max(W - 1, 1)).astype(dtype)
    b = ((iy + ix) / max(H + W - 2, 1)).astype(dtype)
    return Tensor(np.stack([r, g, b])[None])


def disc(extent, radius_frac=0.3, background=0.15, foreground=0.9, dtype=np.float32):
    """Filled circle on a flat background."""
    H, W = (extent, extent) if isinstance(extent, int) else extent
    iy, ix = np.indices((H, W))
    cy, cx = (H - 1) / 2.0, (W - 1) / 2.0
    inside = ((iy - cy) ** 2 + (ix - cx) ** 2) <= (radius_frac * min(H, W)) ** 2
    plane = np.where(inside, foreground, background).astype(dtype)
    return Tensor(np.broadcast_to(plane, (1, 3, H, W)).astype(dtype).copy())


def stripes(extent, period=8, axis=0, low=0.1, high=0.9, dtype=np.float32):
    """Square-wave stripes along one axis."""
    H, W = (extent, extent) if isinstance(extent, int) else extent
    iy, ix = np.indices((H, W))
    coord = iy if axis == 0 else ix
    plane = np.where((coord // (period // 2)) % 2 == 0, low, high).astype(dtype)
    return Tensor(np.broadcast_to(plane, (1, 3, H, W)).astype(dtype).copy())
