"""Differentiable layers: conv2d, relu, batch norm, upsampling, pooling.

All layers are functional: they take input tensors plus a parameter/state
object and return a new tensor wired into the graph.  Image tensors are laid
out ``[batch, channel, height, width]``.

Convolutions are stride-1 "same" convolutions with odd kernels; padding is
either ``zero`` or ``circular`` (toroidal wraparound, which makes the output
exactly equivariant under cyclic shifts of the input).  The implementation
gathers patches im2col-style from a padded copy and reduces them with one
matmul per batch; the backward pass scatters patch gradients back and folds
the pad bands (cropping them for zero padding, wrap-adding for circular).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError
from .tensor import Tensor, concat, from_op


@dataclass
class ConvSpec:
    """Weights and geometry of one stride-1 2-D convolution.

    weights: Tensor [out_channels, in_channels, kh, kw]; bias: Tensor [out_channels].
    """

    in_channels: int
    out_channels: int
    kernel: tuple
    padding_mode: str
    weights: Tensor
    bias: Tensor

    def __post_init__(self):
        kh, kw = self.kernel
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError(f"conv kernel extents must be odd, got {self.kernel}")
        if self.padding_mode not in ("circular", "zero"):
            raise ValueError(f"unknown padding mode {self.padding_mode!r}")
        expect = (self.out_channels, self.in_channels, kh, kw)
        if tuple(self.weights.shape) != expect:
            raise ShapeError(f"conv weights shaped {tuple(self.weights.shape)}, expected {expect}")
        if tuple(self.bias.shape) != (self.out_channels,):
            raise ShapeError(f"conv bias shaped {tuple(self.bias.shape)}, expected ({self.out_channels},)")

    def parameters(self):
        return [self.weights, self.bias]


@dataclass
class BatchNormState:
    """Per-channel affine parameters plus running statistics.

    ``training`` selects batch statistics (and updates the running ones) vs
    frozen running statistics.  Not safe for concurrent train-mode use.
    """

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5
    training: bool = True

    @classmethod
    def create(cls, channels, momentum=0.1, eps=1e-5, dtype=np.float32):
        if eps <= 0:
            raise ValueError("batch norm eps must be > 0")
        return cls(
            gamma=Tensor(np.ones(channels, dtype=dtype), requires_grad=True),
            beta=Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            momentum=momentum,
            eps=eps,
        )

    @property
    def channels(self):
        return self.gamma.shape[0]

    def parameters(self):
        return [self.gamma, self.beta]


def conv2d(x, spec):
    """Same-size 2-D convolution of ``x`` [B,C,H,W] by ``spec``.

    Differentiable w.r.t. the input, the weights, and the bias; gradient
    work for frozen weights is skipped.
    """
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects [B,C,H,W], got shape {tuple(x.shape)}")
    B, C, H, W = x.shape
    if C != spec.in_channels:
        raise ShapeError(f"conv2d: input has {C} channels, spec expects {spec.in_channels}")
    kh, kw = spec.kernel
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    if spec.padding_mode == "circular" and (ph > H or pw > W):
        raise ShapeError(f"circular pad ({ph},{pw}) exceeds spatial extent ({H},{W})")

    if ph or pw:
        mode = "wrap" if spec.padding_mode == "circular" else "constant"
        padded = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)), mode=mode)
    else:
        padded = x.data
    win = sliding_window_view(padded, (kh, kw), axis=(2, 3))  # (B,C,H,W,kh,kw)
    cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(B, C * kh * kw, H * W)
    wmat = spec.weights.data.reshape(spec.out_channels, C * kh * kw)
    out = np.matmul(wmat, cols).reshape(B, spec.out_channels, H, W)
    out = out + spec.bias.data.reshape(1, -1, 1, 1)

    weights, bias = spec.weights, spec.bias

    def backward(g):
        gmat = g.reshape(B, spec.out_channels, H * W)
        gw = gb = gx = None
        if weights.requires_grad:
            gw = np.matmul(gmat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weights.shape)
        if bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            dcols = np.matmul(wmat.T, gmat).reshape(B, C, kh, kw, H, W)
            dpad = np.zeros_like(padded)
            for u in range(kh):
                for v in range(kw):
                    dpad[:, :, u : u + H, v : v + W] += dcols[:, :, u, v]
            gx = _fold_pad(dpad, H, W, ph, pw, spec.padding_mode)
        return gx, gw, gb

    return from_op(out, (x, weights, bias), backward, "conv2d")


def _fold_pad(dpad, H, W, ph, pw, mode):
    """Collapse gradient on a padded array back to the input extent."""
    if ph == 0 and pw == 0:
        return dpad
    if mode == "zero":
        return dpad[:, :, ph : ph + H, pw : pw + W]
    # Circular: pad bands alias wrapped rows/cols; fold rows first (full
    # width, so corners resolve), then columns.
    rows = dpad[:, :, ph : ph + H, :].copy()
    rows[:, :, H - ph :, :] += dpad[:, :, :ph, :]
    rows[:, :, :ph, :] += dpad[:, :, ph + H :, :]
    out = rows[:, :, :, pw : pw + W].copy()
    out[:, :, :, W - pw :] += rows[:, :, :, :pw]
    out[:, :, :, :pw] += rows[:, :, :, pw + W :]
    return out


def relu(x):
    """max(x, 0); the subgradient at 0 is taken as 0."""
    mask = x.data > 0
    return from_op(np.maximum(x.data, 0), (x,), lambda g: (g * mask,), "relu")


def batch_norm(x, state):
    """Per-channel batch normalization over (batch, height, width).

    Train mode normalizes with batch statistics and updates the running
    statistics as a side effect; eval mode uses the stored running ones.
    Output is gamma * xhat + beta either way.
    """
    if x.ndim != 4:
        raise ShapeError(f"batch_norm expects [B,C,H,W], got shape {tuple(x.shape)}")
    B, C, H, W = x.shape
    if C != state.channels:
        raise ShapeError(f"batch_norm: input has {C} channels, state has {state.channels}")
    gamma = state.gamma.reshape(1, C, 1, 1)
    beta = state.beta.reshape(1, C, 1, 1)
    if state.training:
        n = B * H * W
        if n < 2:
            raise ShapeError("batch_norm train mode needs at least 2 values per channel")
        mean = x.mean(axis=(0, 2, 3), keepdims=True)
        centered = x - mean
        var = (centered * centered).mean(axis=(0, 2, 3), keepdims=True)
        xhat = centered * ((var + state.eps) ** -0.5)
        m = state.momentum
        state.running_mean = ((1.0 - m) * state.running_mean + m * mean.data.reshape(C)).astype(
            state.running_mean.dtype
        )
        state.running_var = (
            (1.0 - m) * state.running_var + m * var.data.reshape(C) * (n / (n - 1.0))
        ).astype(state.running_var.dtype)
    else:
        rm = state.running_mean.reshape(1, C, 1, 1)
        rstd = 1.0 / np.sqrt(state.running_var.reshape(1, C, 1, 1) + state.eps)
        xhat = (x - Tensor(rm)) * Tensor(rstd)
    return xhat * gamma + beta


def upsample_nearest(x, factor=2):
    """Replicate each pixel into a factor x factor block (factor fixed at 2)."""
    if factor != 2:
        raise ShapeError("upsample_nearest supports factor 2 only")
    if x.ndim != 4:
        raise ShapeError(f"upsample_nearest expects [B,C,H,W], got {tuple(x.shape)}")
    B, C, H, W = x.shape
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def backward(g):
        return (g.reshape(B, C, H, 2, W, 2).sum(axis=(3, 5)),)

    return from_op(out, (x,), backward, "upsample_nearest")


def concat_channels(a, b):
    """Stack two [B,C,H,W] tensors along the channel axis, a first."""
    if a.ndim != 4 or b.ndim != 4 or a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(
            f"concat_channels: shapes {tuple(a.shape)} and {tuple(b.shape)} disagree off-channel"
        )
    return concat([a, b], axis=1)


def pool(x, kind="avg", window=2, stride=2):
    """2x2 stride-2 pooling; max routes gradient to the first argmax."""
    if window != 2 or stride != 2:
        raise ShapeError("pool supports window=2, stride=2 only")
    if kind not in ("avg", "max"):
        raise ValueError(f"unknown pool kind {kind!r}")
    if x.ndim != 4:
        raise ShapeError(f"pool expects [B,C,H,W], got {tuple(x.shape)}")
    B, C, H, W = x.shape
    if H % 2 or W % 2 or H < 2 or W < 2:
        raise ShapeError(f"pool needs even spatial extents >= 2, got ({H},{W})")
    Ho, Wo = H // 2, W // 2
    windows = x.data.reshape(B, C, Ho, 2, Wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho, Wo, 4)

    if kind == "avg":
        out = windows.mean(axis=-1)

        def backward(g):
            return (g.repeat(2, axis=2).repeat(2, axis=3) * 0.25,)

    else:
        idx = windows.argmax(axis=-1)  # first max wins within the (0,0),(0,1),(1,0),(1,1) scan
        out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

        def backward(g):
            gwin = np.zeros((B, C, Ho, Wo, 4), dtype=g.dtype)
            np.put_along_axis(gwin, idx[..., None], g[..., None], axis=-1)
            return (
                gwin.reshape(B, C, Ho, Wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H, W),
            )

    return from_op(out, (x,), backward, "pool_" + kind)


def downsample_image(y, levels):
    """Average-pool pyramid of ``y``: returns [level0 .. levelN], level 0 = input."""
    if y.ndim != 4:
        raise ShapeError(f"downsample_image expects [B,C,H,W], got {tuple(y.shape)}")
    H, W = y.shape[2], y.shape[3]
    step = 2**levels
    if levels < 0 or H % step or W % step:
        raise ShapeError(f"extents ({H},{W}) not divisible by 2^{levels}")
    pyramid = [y]
    for _ in range(levels):
        pyramid.append(pool(pyramid[-1], kind="avg"))
    return pyramid
