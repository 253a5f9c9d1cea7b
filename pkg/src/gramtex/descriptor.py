"""The fixed descriptor network and the statistics losses built on it.

A descriptor is a frozen stack of conv / relu / pool layers with named tap
points.  Texture statistics are channel-by-channel Gram matrices of the
tapped feature maps, normalized by spatial size so that a target computed at
one resolution remains valid at another.  The texture loss is the summed
squared Frobenius distance between Gram matrices; the content loss compares
raw feature maps location-by-location; the stylization loss combines the two
with a content weight alpha.

``mmd_form`` restates the single-layer texture loss as a maximum mean
discrepancy with the quadratic per-pixel feature map phi(v) = vec(v v^T); the
two formulations agree to rounding and the test suite pins that equivalence.

Descriptor architecture is described by a small text config (see
``parse_descriptor_config``) and weights travel in the TXNW1 binary container.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _container as container
from .errors import FormatError, ShapeError
from .layers import ConvSpec, conv2d, pool, relu
from .tensor import Tensor


@dataclass
class DescriptorLayer:
    id: str
    kind: str  # "conv" | "relu" | "pool"
    conv: ConvSpec | None = None


class DescriptorNet:
    """Frozen loss-providing network; safe for concurrent read-only forwards."""

    def __init__(self, layers, taps, pool_kind="avg"):
        ids = [layer.id for layer in layers]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate layer ids in descriptor: {ids}")
        taps = tuple(taps)
        if len(set(taps)) != len(taps):
            raise ValueError(f"duplicate tap ids: {taps}")
        missing = [t for t in taps if t not in ids]
        if missing:
            raise ValueError(f"tap ids {missing} name no layer")
        if pool_kind not in ("avg", "max"):
            raise ValueError(f"unknown pool kind {pool_kind!r}")
        self.layers = list(layers)
        self.taps = taps
        self.pool_kind = pool_kind
        for layer in self.layers:
            if layer.kind == "conv":
                layer.conv.weights.requires_grad = False
                layer.conv.bias.requires_grad = False

    def weight_arrays(self):
        out = []
        for layer in self.layers:
            if layer.kind == "conv":
                out.extend([layer.conv.weights.data, layer.conv.bias.data])
        return out


def descriptor_forward(net, x):
    """Run the descriptor over ``x`` [B,C,H,W]; returns {tap id: feature Tensor}.

    Gradients flow into ``x`` only; the descriptor weights are frozen.
    """
    feats = {}
    h = x
    for layer in net.layers:
        if layer.kind == "conv":
            h = conv2d(h, layer.conv)
        elif layer.kind == "relu":
            h = relu(h)
        elif layer.kind == "pool":
            if h.shape[2] < 2 or h.shape[3] < 2:
                raise ShapeError(f"descriptor pool at {layer.id}: extent {h.shape[2:]} too small")
            h = pool(h, kind=net.pool_kind)
        else:
            raise ValueError(f"unknown descriptor layer kind {layer.kind!r}")
        if layer.id in net.taps:
            feats[layer.id] = h
    return feats


@dataclass
class GramSet:
    """Normalized Gram matrices keyed by tap id, plus the spatial sizes used."""

    grams: dict
    spatial: dict = field(default_factory=dict)


@dataclass
class LossSpec:
    """Which taps feed the texture and content terms, and the content weight."""

    texture_layers: dict
    content_layers: tuple = ()
    alpha: float = 0.0

    def __post_init__(self):
        if not isinstance(self.texture_layers, dict):
            self.texture_layers = {l: 1.0 for l in self.texture_layers}
        self.content_layers = tuple(self.content_layers)
        if self.alpha < 0:
            raise ValueError(f"content weight alpha must be >= 0, got {self.alpha}")


def gram(feature):
    """Spatially normalized Gram matrix per batch item: (1/HW) F F^T, [B,C,C]."""
    if feature.ndim != 4:
        raise ShapeError(f"gram expects [B,C,H,W], got {tuple(feature.shape)}")
    B, C, H, W = feature.shape
    flat = feature.reshape(B, C, H * W)
    return (flat @ flat.transpose(0, 2, 1)).scale(1.0 / (H * W))


def gram_targets(net, x0, loss_spec):
    """Texture description of a prototype: constant Gram targets per texture tap."""
    if x0.shape[0] != 1:
        raise ShapeError(f"prototype must be a single image, got batch {x0.shape[0]}")
    feats = descriptor_forward(net, x0.detach())
    grams, spatial = {}, {}
    for layer_id in loss_spec.texture_layers:
        if layer_id not in feats:
            raise ShapeError(f"texture layer {layer_id!r} is not a descriptor tap")
        f = feats[layer_id]
        grams[layer_id] = gram(f).data[0]
        spatial[layer_id] = f.shape[2] * f.shape[3]
    return GramSet(grams, spatial)


def texture_loss(x, target_grams, net, loss_spec):
    """Mean over batch of sum_l w_l ||G^l(x) - G^l(target)||_F^2."""
    feats = descriptor_forward(net, x)
    return texture_loss_from_features(feats, target_grams, loss_spec)


def texture_loss_from_features(feats, target_grams, loss_spec):
    per_item = None
    for layer_id, weight in loss_spec.texture_layers.items():
        if layer_id not in feats:
            raise ShapeError(f"texture layer {layer_id!r} missing from features")
        if layer_id not in target_grams.grams:
            raise ShapeError(f"texture layer {layer_id!r} missing from target grams")
        g = gram(feats[layer_id])
        target = target_grams.grams[layer_id]
        if g.shape[1:] != target.shape:
            raise ShapeError(
                f"gram for {layer_id!r} is {tuple(g.shape[1:])}, target is {tuple(target.shape)}"
            )
        diff = g - Tensor(target[None])
        term = (diff * diff).sum(axis=(1, 2))
        per_item = term.scale(weight) if per_item is None else per_item + term.scale(weight)
    if per_item is None:
        raise ShapeError("loss spec names no texture layers")
    return per_item.mean()


def content_features(net, y, loss_spec):
    """Constant per-image content targets {tap id: ndarray} for ``y``."""
    feats = descriptor_forward(net, y.detach())
    out = {}
    for layer_id in loss_spec.content_layers:
        if layer_id not in feats:
            raise ShapeError(f"content layer {layer_id!r} is not a descriptor tap")
        out[layer_id] = feats[layer_id].data
    return out


def content_loss(x, y, net, loss_spec):
    """Mean over batch of sum_l ||F^l(x) - F^l(y)||^2 at matching locations."""
    if x.shape != y.shape:
        raise ShapeError(f"content loss needs matching shapes, got {tuple(x.shape)} vs {tuple(y.shape)}")
    feats = descriptor_forward(net, x)
    return content_loss_from_features(feats, content_features(net, y, loss_spec), loss_spec)


def content_loss_from_features(feats, targets, loss_spec):
    per_item = None
    for layer_id in loss_spec.content_layers:
        if layer_id not in feats:
            raise ShapeError(f"content layer {layer_id!r} missing from features")
        diff = feats[layer_id] - Tensor(targets[layer_id])
        term = (diff * diff).sum(axis=(1, 2, 3))
        per_item = term if per_item is None else per_item + term
    if per_item is None:
        raise ShapeError("loss spec names no content layers")
    return per_item.mean()


def stylization_loss(x, y, target_grams, net, loss_spec):
    """texture_loss + alpha * content_loss, sharing one descriptor pass over x."""
    if loss_spec.alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {loss_spec.alpha}")
    feats = descriptor_forward(net, x)
    loss = texture_loss_from_features(feats, target_grams, loss_spec)
    if loss_spec.alpha == 0 or not loss_spec.content_layers:
        return loss
    targets = content_features(net, y, loss_spec)
    return loss + content_loss_from_features(feats, targets, loss_spec).scale(loss_spec.alpha)


def mmd_form(fx, fy):
    """Squared MMD between per-pixel feature vectors with phi(v) = vec(v v^T).

    Computed directly from mean outer products, without the Gram-matrix code
    path; equals the single-layer normalized texture loss.
    """
    fx = _single_feature(fx)
    fy = _single_feature(fy)
    if fx.shape[0] != fy.shape[0]:
        raise ShapeError(f"channel counts differ: {fx.shape[0]} vs {fy.shape[0]}")

    def mean_outer(f):
        flat = f.reshape(f.shape[0], -1)
        return (flat[:, None, :] * flat[None, :, :]).mean(axis=2)

    diff = mean_outer(fx) - mean_outer(fy)
    return float((diff * diff).sum())


def _single_feature(f):
    arr = f.data if isinstance(f, Tensor) else np.asarray(f)
    if arr.ndim == 4:
        if arr.shape[0] != 1:
            raise ShapeError(f"mmd_form takes one feature map, got batch {arr.shape[0]}")
        arr = arr[0]
    if arr.ndim != 3:
        raise ShapeError(f"mmd_form expects [C,H,W], got {arr.shape}")
    return arr


# -- architecture config ----------------------------------------------------

@dataclass
class DescriptorConfig:
    layers: list  # (kind, id, in_c, out_c, kh, kw) with zeros for non-conv
    taps: tuple
    padding_mode: str = "zero"
    pool_kind: str = "avg"


TINY_DESCRIPTOR_CONFIG = """\
# two-stage reference descriptor
padding zero
pooling avg
conv conv1 3 16 3 3
relu relu1
pool pool1
conv conv2 16 32 3 3
relu relu2
pool pool2
taps relu1 relu2
"""


def parse_descriptor_config(text):
    """Parse the line-based descriptor architecture config."""
    layers, taps = [], []
    padding, pooling = "zero", "avg"
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        word, args = parts[0], parts[1:]
        try:
            if word == "padding":
                (padding,) = args
                if padding not in ("zero", "circular"):
                    raise ValueError
            elif word == "pooling":
                (pooling,) = args
                if pooling not in ("avg", "max"):
                    raise ValueError
            elif word == "conv":
                name, in_c, out_c, kh, kw = args
                layers.append(("conv", name, int(in_c), int(out_c), int(kh), int(kw)))
            elif word == "relu":
                (name,) = args
                layers.append(("relu", name, 0, 0, 0, 0))
            elif word == "pool":
                (name,) = args
                layers.append(("pool", name, 0, 0, 0, 0))
            elif word == "taps":
                if not args:
                    raise ValueError
                taps.extend(args)
            else:
                raise ValueError
        except ValueError:
            raise FormatError(f"descriptor config line {lineno}: cannot parse {raw!r}") from None
    if not layers:
        raise FormatError("descriptor config declares no layers")
    return DescriptorConfig(layers, tuple(taps), padding, pooling)


def build_descriptor(config, seed=0, dtype=np.float32):
    """Instantiate a descriptor with seeded random orthogonalized filters."""
    rng = np.random.default_rng(seed)
    layers = []
    for kind, name, in_c, out_c, kh, kw in config.layers:
        if kind == "conv":
            w = _orthogonal_filters(out_c, in_c, kh, kw, rng).astype(dtype)
            spec = ConvSpec(in_c, out_c, (kh, kw), config.padding_mode, Tensor(w), Tensor(np.zeros(out_c, dtype=dtype)))
            layers.append(DescriptorLayer(name, "conv", spec))
        else:
            layers.append(DescriptorLayer(name, kind))
    return DescriptorNet(layers, config.taps, config.pool_kind)


def tiny_descriptor(seed=0, dtype=np.float32):
    """The shipped reference descriptor: conv16-relu-pool-conv32-relu-pool."""
    return build_descriptor(parse_descriptor_config(TINY_DESCRIPTOR_CONFIG), seed=seed, dtype=dtype)


def _orthogonal_filters(out_c, in_c, kh, kw, rng):
    n = in_c * kh * kw
    if n < out_c:
        raise ValueError(f"cannot orthogonalize {out_c} filters of {n} taps")
    q, r = np.linalg.qr(rng.standard_normal((n, out_c)))
    q = q * np.sign(np.diag(r))  # fix QR sign ambiguity for determinism
    return q.T.reshape(out_c, in_c, kh, kw)


# -- serialization -----------------------------------------------------------

_KIND_TO_TAG = {"conv": container.KIND_CONV, "relu": container.KIND_RELU, "pool": container.KIND_POOL}
_TAG_TO_KIND = {v: k for k, v in _KIND_TO_TAG.items()}


def save_weights(net, path):
    """Write descriptor weights in the TXNW1 container."""
    blob = bytearray()
    blob += container.MAGIC_DESCRIPTOR
    blob += container.pack_u32(len(net.layers))
    for layer in net.layers:
        if layer.kind == "conv":
            spec = layer.conv
            blob += container.pack_record(
                container.KIND_CONV, spec.weights.shape, spec.weights.data, spec.bias.data
            )
        else:
            blob += container.pack_record(_KIND_TO_TAG[layer.kind], (0, 0, 0, 0), np.empty(0), np.empty(0))
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_weights(path, config=None):
    """Read a TXNW1 file back into a DescriptorNet.

    With ``config`` the layer ids, taps, padding, and pooling come from the
    architecture config (shapes are cross-checked); without it, generic ids
    are synthesized and every relu becomes a tap.
    """
    with open(path, "rb") as fh:
        reader = container.Reader(fh.read(), str(path))
    reader.expect_magic(container.MAGIC_DESCRIPTOR)
    count = reader.u32()
    records = [container.read_record(reader) for _ in range(count)]
    reader.done()

    if config is not None and len(config.layers) != count:
        raise FormatError(f"{path}: {count} layers on disk, config declares {len(config.layers)}")

    layers = []
    counters = {"conv": 0, "relu": 0, "pool": 0}
    padding = config.padding_mode if config else "zero"
    for i, (tag, shape, weights, bias) in enumerate(records):
        kind = _TAG_TO_KIND.get(tag)
        if kind is None:
            raise FormatError(f"{path}: unknown layer kind tag {tag}")
        if config is not None:
            ckind, name, in_c, out_c, kh, kw = config.layers[i]
            if ckind != kind:
                raise FormatError(f"{path}: layer {i} is {kind}, config says {ckind}")
            if kind == "conv" and shape != (out_c, in_c, kh, kw):
                raise FormatError(f"{path}: conv {name} shaped {shape}, config says {(out_c, in_c, kh, kw)}")
        else:
            counters[kind] += 1
            name = f"{kind}{counters[kind]}"
        if kind == "conv":
            out_c, in_c, kh, kw = shape
            if bias.size != out_c:
                raise FormatError(f"{path}: conv {name} bias has {bias.size} entries, expected {out_c}")
            spec = ConvSpec(
                in_c, out_c, (kh, kw), padding, Tensor(weights.reshape(shape)), Tensor(bias)
            )
            layers.append(DescriptorLayer(name, "conv", spec))
        else:
            if shape != (0, 0, 0, 0) or weights.size or bias.size:
                raise FormatError(f"{path}: {kind} layer {name} carries unexpected payload")
            layers.append(DescriptorLayer(name, kind))

    if config is not None:
        taps, pool_kind = config.taps, config.pool_kind
    else:
        taps = tuple(l.id for l in layers if l.kind == "relu")
        pool_kind = "avg"
    return DescriptorNet(layers, taps, pool_kind)
