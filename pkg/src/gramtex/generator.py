"""The multi-scale feed-forward generator.

A generator is a pyramid of K scales processed coarse to fine.  Each scale
owns a conv block (3x3 -> BN -> ReLU, 3x3 -> BN -> ReLU, 1x1 -> BN -> ReLU,
all circular padding, stride 1) that digests that scale's noise input; from
scale 2 on, the carried tensor from the scale below is upsampled 2x, batch
normalized, and concatenated with the batch-normalized block output before a
second ("main") block mixes them.  A final 1x1 convolution maps to RGB with
no activation; pixel values are only clamped at image export so gradients
survive.

In style mode every scale additionally sees the conditioning image,
average-pool downsampled to the scale's extent and concatenated with the
noise as three extra input channels.

Channel widths follow ``schedule`` (default a ramp of 8 per scale capped at
40); each scale's noise block always produces ``schedule[0]`` channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _container as container
from .errors import FormatError, ShapeError
from .layers import (
    BatchNormState,
    ConvSpec,
    batch_norm,
    concat_channels,
    conv2d,
    downsample_image,
    relu,
    upsample_nearest,
)
from .tensor import Tensor

MIN_CHANNELS = 8
MAX_CHANNELS = 40


@dataclass
class ConvBlock:
    conv1: ConvSpec
    bn1: BatchNormState
    conv2: ConvSpec
    bn2: BatchNormState
    conv3: ConvSpec
    bn3: BatchNormState

    def units(self):
        return [self.conv1, self.bn1, self.conv2, self.bn2, self.conv3, self.bn3]


@dataclass
class JoinStage:
    """Everything scale i >= 2 owns: its noise block, the two pre-join batch
    norms (upsampled carry, noise branch), and the post-join main block."""

    noise_block: ConvBlock
    up_bn: BatchNormState
    noise_bn: BatchNormState
    main_block: ConvBlock

    def units(self):
        return self.noise_block.units() + [self.up_bn, self.noise_bn] + self.main_block.units()


class GeneratorParams:
    """All trainable state of one generator plus its architecture metadata."""

    def __init__(self, mode, schedule, entry_block, stages, output_conv, noise_channels=1):
        if mode not in ("texture", "style"):
            raise ValueError(f"unknown generator mode {mode!r}")
        self.mode = mode
        self.schedule = tuple(int(c) for c in schedule)
        self.entry_block = entry_block
        self.stages = list(stages)
        self.output_conv = output_conv
        self.noise_channels = noise_channels

    @property
    def scales(self):
        return len(self.schedule)

    @property
    def in_channels(self):
        return self.noise_channels + (3 if self.mode == "style" else 0)

    def units(self):
        out = self.entry_block.units()
        for stage in self.stages:
            out.extend(stage.units())
        out.append(self.output_conv)
        return out

    def parameters(self):
        """Trainable tensors in canonical (serialization) order."""
        params = []
        for unit in self.units():
            params.extend(unit.parameters())
        return params

    def set_training(self, training):
        for unit in self.units():
            if isinstance(unit, BatchNormState):
                unit.training = bool(training)
        return self


def default_schedule(scales):
    return tuple(min(MIN_CHANNELS * i, MAX_CHANNELS) for i in range(1, scales + 1))


def xavier_uniform(rng, shape, fan_in, fan_out, dtype):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return (rng.uniform(-bound, bound, size=shape)).astype(dtype)


def init_params(mode="texture", scales=None, schedule=None, seed=0, dtype=np.float32, noise_channels=1):
    """Xavier-initialized generator: biases zero, BN gamma 1 / beta 0."""
    if scales is None:
        scales = 6 if mode == "style" else 5
    if schedule is None:
        schedule = default_schedule(scales)
    schedule = tuple(int(c) for c in schedule)
    if len(schedule) != scales:
        raise ValueError(f"schedule {schedule} does not cover {scales} scales")
    bad = [c for c in schedule if not MIN_CHANNELS <= c <= MAX_CHANNELS]
    if bad:
        raise ValueError(f"channel counts {bad} outside [{MIN_CHANNELS}, {MAX_CHANNELS}]")
    if scales < 1:
        raise ValueError("need at least one scale")
    rng = np.random.default_rng(seed)
    in_ch = noise_channels + (3 if mode == "style" else 0)
    base = schedule[0]

    def conv(in_c, out_c, k):
        w = xavier_uniform(rng, (out_c, in_c, k, k), in_c * k * k, out_c * k * k, dtype)
        return ConvSpec(
            in_c, out_c, (k, k), "circular",
            Tensor(w, requires_grad=True),
            Tensor(np.zeros(out_c, dtype=dtype), requires_grad=True),
        )

    def block(in_c, out_c):
        return ConvBlock(
            conv(in_c, out_c, 3), BatchNormState.create(out_c, dtype=dtype),
            conv(out_c, out_c, 3), BatchNormState.create(out_c, dtype=dtype),
            conv(out_c, out_c, 1), BatchNormState.create(out_c, dtype=dtype),
        )

    entry = block(in_ch, schedule[0])
    stages = []
    for i in range(1, scales):
        stages.append(
            JoinStage(
                noise_block=block(in_ch, base),
                up_bn=BatchNormState.create(schedule[i - 1], dtype=dtype),
                noise_bn=BatchNormState.create(base, dtype=dtype),
                main_block=block(schedule[i - 1] + base, schedule[i]),
            )
        )
    output_conv = conv(schedule[-1], 3, 1)
    return GeneratorParams(mode, schedule, entry, stages, output_conv, noise_channels)


def count_params(params):
    """Number of trainable scalars (running statistics excluded)."""
    return int(sum(p.size for p in params.parameters()))


class NoiseStack:
    """Per-scale noise tensors ordered coarse to fine; extents double scale
    to scale and the finest extent is the output extent."""

    def __init__(self, tensors, magnitude=1.0):
        if not tensors:
            raise ShapeError("noise stack is empty")
        shapes = [tuple(t.shape) for t in tensors]
        batch = shapes[0][0]
        for i, shape in enumerate(shapes):
            if len(shape) != 4 or shape[0] != batch:
                raise ShapeError(f"noise tensor {i} has shape {shape}")
            if i:
                prev = shapes[i - 1]
                if shape[2] != prev[2] * 2 or shape[3] != prev[3] * 2:
                    raise ShapeError(f"noise extents must double per scale, got {prev} -> {shape}")
        self.tensors = list(tensors)
        self.magnitude = float(magnitude)

    @property
    def scales(self):
        return len(self.tensors)

    @property
    def batch(self):
        return self.tensors[0].shape[0]

    @property
    def extent(self):
        finest = self.tensors[-1]
        return (finest.shape[2], finest.shape[3])

    def replaced(self, index, tensor):
        tensors = list(self.tensors)
        tensors[index] = tensor
        return NoiseStack(tensors, self.magnitude)


def _as_extent(extent):
    if isinstance(extent, int):
        return (extent, extent)
    h, w = extent
    return (int(h), int(w))


def sample_noise(extent, scales, batch=1, magnitude=1.0, seed=None, noise_channels=1, dtype=np.float32):
    """Draw a seeded NoiseStack of i.i.d. uniform [0, magnitude) entries.

    ``extent`` is the finest (output) extent, an int or (height, width); it
    must be divisible by 2**(scales-1).  Tensors are drawn coarse to fine.
    """
    H, W = _as_extent(extent)
    step = 2 ** (scales - 1)
    if H % step or W % step or H < step or W < step:
        raise ShapeError(f"extent ({H},{W}) not divisible by 2^{scales - 1}")
    if magnitude < 0:
        raise ValueError(f"noise magnitude must be >= 0, got {magnitude}")
    rng = np.random.default_rng(seed)
    tensors = []
    for i in range(scales):
        h, w = H >> (scales - 1 - i), W >> (scales - 1 - i)
        # Always draw float32 so the stream is identical across dtypes.
        draw = rng.random((batch, noise_channels, h, w), dtype=np.float32)
        tensors.append(Tensor(draw.astype(dtype, copy=False) * magnitude))
    return NoiseStack(tensors, magnitude)


def zero_noise(extent, scales, batch=1, noise_channels=1, dtype=np.float32):
    return sample_noise(extent, scales, batch=batch, magnitude=0.0, seed=0,
                        noise_channels=noise_channels, dtype=dtype)


def _apply_block(x, block):
    x = relu(batch_norm(conv2d(x, block.conv1), block.bn1))
    x = relu(batch_norm(conv2d(x, block.conv2), block.bn2))
    x = relu(batch_norm(conv2d(x, block.conv3), block.bn3))
    return x


def generator_forward(params, z, y=None):
    """Run the pyramid; returns an RGB tensor at the stack's finest extent."""
    K = params.scales
    if z.scales != K:
        raise ShapeError(f"noise stack has {z.scales} scales, generator has {K}")
    if z.tensors[0].shape[1] != params.noise_channels:
        raise ShapeError(
            f"noise has {z.tensors[0].shape[1]} channels, generator expects {params.noise_channels}"
        )
    if params.mode == "texture":
        if y is not None:
            raise ShapeError("texture-mode generator takes no content image")
        levels = None
    else:
        if y is None:
            raise ShapeError("style-mode generator requires a content image")
        H, W = z.extent
        if y.ndim != 4 or y.shape[0] != z.batch or y.shape[1] != 3 or (y.shape[2], y.shape[3]) != (H, W):
            raise ShapeError(
                f"content image shaped {tuple(y.shape)} does not match noise "
                f"(batch {z.batch}, extent ({H},{W}))"
            )
        levels = downsample_image(y, K - 1)

    carried = None
    for i in range(1, K + 1):
        x_in = z.tensors[i - 1]
        if levels is not None:
            x_in = concat_channels(x_in, levels[K - i])
        if i == 1:
            carried = _apply_block(x_in, params.entry_block)
        else:
            stage = params.stages[i - 2]
            up = batch_norm(upsample_nearest(carried), stage.up_bn)
            branch = batch_norm(_apply_block(x_in, stage.noise_block), stage.noise_bn)
            carried = _apply_block(concat_channels(up, branch), stage.main_block)
    return conv2d(carried, params.output_conv)


def ablate_scales(params, z, keep, y=None):
    """Forward with every noise tensor zeroed except scale ``keep`` (1-based)."""
    if not 1 <= keep <= z.scales:
        raise ShapeError(f"keep={keep} outside [1, {z.scales}]")
    tensors = []
    for i, t in enumerate(z.tensors):
        tensors.append(t if i == keep - 1 else Tensor(np.zeros_like(t.data)))
    return generator_forward(params, NoiseStack(tensors, z.magnitude), y=y)


# -- serialization -----------------------------------------------------------

_MODE_TAGS = {"texture": 0, "style": 1}
_TAG_MODES = {v: k for k, v in _MODE_TAGS.items()}


def save_params(params, path):
    """Write generator params (weights, biases, BN affine + running stats)."""
    blob = bytearray()
    blob += container.MAGIC_GENERATOR
    blob += bytes([_MODE_TAGS[params.mode]])
    blob += container.pack_u32(params.scales, *params.schedule)
    records = params.units()
    blob += container.pack_u32(len(records))
    for unit in records:
        if isinstance(unit, ConvSpec):
            blob += container.pack_record(
                container.KIND_CONV, unit.weights.shape, unit.weights.data, unit.bias.data
            )
        else:
            C = unit.channels
            packed = np.stack(
                [unit.gamma.data, unit.beta.data, unit.running_mean, unit.running_var]
            ).reshape(4, C, 1, 1)
            blob += container.pack_record(container.KIND_BATCHNORM, (4, C, 1, 1), packed, np.empty(0))
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_params(path, expect_mode=None):
    """Read a TXNG1 file back; ``expect_mode`` guards texture/style misuse."""
    with open(path, "rb") as fh:
        reader = container.Reader(fh.read(), str(path))
    reader.expect_magic(container.MAGIC_GENERATOR)
    mode_tag = reader.u8()
    if mode_tag not in _TAG_MODES:
        raise FormatError(f"{path}: unknown mode tag {mode_tag}")
    mode = _TAG_MODES[mode_tag]
    if expect_mode is not None and mode != expect_mode:
        raise FormatError(f"{path}: params are {mode}-mode, expected {expect_mode}-mode")
    scales = reader.u32()
    schedule = tuple(reader.u32() for _ in range(scales))
    count = reader.u32()
    records = [container.read_record(reader) for _ in range(count)]
    reader.done()

    params = init_params(mode=mode, scales=scales, schedule=schedule, seed=0)
    units = params.units()
    if len(units) != count:
        raise FormatError(f"{path}: {count} records, architecture needs {len(units)}")
    for unit, (tag, shape, weights, bias) in zip(units, records):
        if isinstance(unit, ConvSpec):
            if tag != container.KIND_CONV or shape != tuple(unit.weights.shape):
                raise FormatError(f"{path}: conv record shaped {shape}, expected {tuple(unit.weights.shape)}")
            if bias.size != unit.bias.size:
                raise FormatError(f"{path}: conv bias holds {bias.size}, expected {unit.bias.size}")
            unit.weights.data = weights.reshape(shape)
            unit.bias.data = bias
        else:
            C = unit.channels
            if tag != container.KIND_BATCHNORM or shape != (4, C, 1, 1):
                raise FormatError(f"{path}: batchnorm record shaped {shape}, expected {(4, C, 1, 1)}")
            packed = weights.reshape(4, C)
            unit.gamma.data = packed[0].copy()
            unit.beta.data = packed[1].copy()
            unit.running_mean = packed[2].copy()
            unit.running_var = packed[3].copy()
    return params
