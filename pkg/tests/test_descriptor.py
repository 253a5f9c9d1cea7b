"""Descriptor forward, Gram statistics, losses, MMD equivalence, weight files."""

import numpy as np
import pytest

from gramtex.descriptor import (
    DescriptorLayer,
    DescriptorNet,
    GramSet,
    LossSpec,
    content_loss,
    descriptor_forward,
    gram,
    gram_targets,
    load_weights,
    mmd_form,
    parse_descriptor_config,
    save_weights,
    stylization_loss,
    texture_loss,
    tiny_descriptor,
    build_descriptor,
)
from gramtex.errors import FormatError, ShapeError
from gramtex.layers import ConvSpec, conv2d, pool, relu
from gramtex.tensor import Tensor

from conftest import assert_grad_matches_fd, rel_error


def identity_net(channels=1, dtype=np.float64):
    """Single 1x1 conv with identity weights: tap output equals input."""
    w = np.eye(channels, dtype=dtype).reshape(channels, channels, 1, 1)
    spec = ConvSpec(channels, channels, (1, 1), "zero", Tensor(w), Tensor(np.zeros(channels, dtype=dtype)))
    return DescriptorNet([DescriptorLayer("id", "conv", spec)], taps=("id",))


def small_net(rng, padding="zero", dtype=np.float64):
    """conv(2->3) - relu - pool - conv(3->4) - relu, taps at both relus."""
    def conv_spec(in_c, out_c):
        w = rng.standard_normal((out_c, in_c, 3, 3)).astype(dtype)
        return ConvSpec(in_c, out_c, (3, 3), padding, Tensor(w), Tensor(np.zeros(out_c, dtype=dtype)))

    layers = [
        DescriptorLayer("c1", "conv", conv_spec(2, 3)),
        DescriptorLayer("r1", "relu"),
        DescriptorLayer("p1", "pool"),
        DescriptorLayer("c2", "conv", conv_spec(3, 4)),
        DescriptorLayer("r2", "relu"),
    ]
    return DescriptorNet(layers, taps=("r1", "r2"))


def gram_reference(feature):
    """Explicit double-loop Gram oracle over one [C,H,W] map."""
    C = feature.shape[0]
    flat = feature.reshape(C, -1)
    n = flat.shape[1]
    out = np.zeros((C, C), dtype=np.float64)
    for i in range(C):
        for j in range(C):
            out[i, j] = float(np.dot(flat[i], flat[j])) / n
    return out


class TestDescriptorForward:
    def test_identity_net_tap_equals_input(self, rng):
        x = rng.standard_normal((1, 1, 4, 4))
        feats = descriptor_forward(identity_net(), Tensor(x))
        assert rel_error(feats["id"].data, x) < 1e-12

    def test_two_layer_net_matches_hand_forward(self, rng):
        net = small_net(rng)
        x = np.ones((1, 2, 4, 4))
        feats = descriptor_forward(net, Tensor(x))
        h = conv2d(Tensor(x), net.layers[0].conv)
        h = relu(h)
        assert np.array_equal(feats["r1"].data, h.data)
        h = pool(h, "avg")
        h = relu(conv2d(h, net.layers[3].conv))
        assert np.array_equal(feats["r2"].data, h.data)

    def test_gradient_into_input_matches_fd(self, rng):
        net = small_net(rng)
        x0 = rng.standard_normal((1, 2, 4, 4))
        x = Tensor(x0.copy(), requires_grad=True)
        loss = sum((f**2.0).sum() for f in descriptor_forward(net, x).values())
        loss.backward()

        def f(a):
            feats = descriptor_forward(net, Tensor(a))
            return float(sum((t.data**2).sum() for t in feats.values()))

        assert_grad_matches_fd(f, x0, x.grad)

    def test_weights_never_receive_gradient(self, rng):
        net = small_net(rng)
        before = [w.copy() for w in net.weight_arrays()]
        x = Tensor(rng.standard_normal((1, 2, 4, 4)), requires_grad=True)
        (descriptor_forward(net, x)["r2"] ** 2.0).sum().backward()
        for layer in net.layers:
            if layer.kind == "conv":
                assert layer.conv.weights.grad is None
        for w, b in zip(net.weight_arrays(), before):
            assert np.array_equal(w, b)

    def test_too_small_for_pool_rejected(self, rng):
        net = small_net(rng)
        with pytest.raises(ShapeError):
            descriptor_forward(net, Tensor(np.ones((1, 2, 1, 1))))


class TestGram:
    def test_ones_single_channel(self):
        g = gram(Tensor(np.ones((1, 1, 2, 2))))
        assert g.shape == (1, 1, 1)
        assert g.data[0, 0, 0] == 1.0  # unnormalized inner product is 4, /HW = 1

    def test_orthogonal_support_channels(self):
        f = np.zeros((1, 2, 2, 2))
        f[0, 0, 0, :] = 1.0
        f[0, 1, 1, :] = 2.0
        g = gram(Tensor(f)).data[0]
        assert g[0, 1] == 0.0 and g[1, 0] == 0.0

    def test_matches_double_loop_oracle(self, rng):
        f = rng.standard_normal((1, 3, 4, 4))
        g = gram(Tensor(f)).data[0]
        assert rel_error(g, gram_reference(f[0])) < 1e-12

    def test_symmetric_exact_and_psd(self, rng):
        for _ in range(20):
            f = rng.standard_normal((2, 5, 6, 6)).astype(np.float32)
            g = gram(Tensor(f)).data
            assert np.array_equal(g, np.swapaxes(g, 1, 2))
            for item in g:
                assert np.linalg.eigvalsh(item.astype(np.float64)).min() >= -1e-8

    def test_gradient_matches_fd(self, rng):
        f0 = rng.standard_normal((1, 2, 3, 3))
        f = Tensor(f0.copy(), requires_grad=True)
        (gram(f) ** 2.0).sum().backward()
        assert_grad_matches_fd(lambda a: float((gram_reference(a[0]) ** 2).sum()), f0, f.grad)


class TestTextureLoss:
    def test_zero_at_prototype(self, rng):
        net = small_net(rng)
        spec = LossSpec({"r1": 1.0, "r2": 1.0})
        x0 = Tensor(rng.random((1, 2, 8, 8)))
        targets = gram_targets(net, x0, spec)
        loss = texture_loss(x0, targets, net, spec)
        assert abs(loss.item()) < 1e-20

    def test_single_layer_scalar_case(self):
        # G(x) = [[2]], G(x0) = [[1]] -> loss 1.
        net = identity_net()
        spec = LossSpec({"id": 1.0})
        x = Tensor(np.full((1, 1, 2, 2), np.sqrt(2.0)))
        targets = GramSet({"id": np.array([[1.0]])})
        assert abs(texture_loss(x, targets, net, spec).item() - 1.0) < 1e-12

    def test_matches_brute_force_frobenius(self, rng):
        net = small_net(rng)
        spec = LossSpec({"r1": 0.5, "r2": 2.0})
        x0 = Tensor(rng.random((1, 2, 8, 8)))
        x = Tensor(rng.random((1, 2, 8, 8)))
        targets = gram_targets(net, x0, spec)
        feats = descriptor_forward(net, x)
        expect = 0.0
        for lid, w in spec.texture_layers.items():
            diff = gram_reference(feats[lid].data[0]) - targets.grams[lid]
            expect += w * float((diff**2).sum())
        assert rel_error(texture_loss(x, targets, net, spec).item(), expect) < 1e-10

    def test_nonnegative(self, rng):
        net = small_net(rng)
        spec = LossSpec(["r1", "r2"])
        targets = gram_targets(net, Tensor(rng.random((1, 2, 8, 8))), spec)
        for _ in range(5):
            loss = texture_loss(Tensor(rng.random((2, 2, 8, 8))), targets, net, spec)
            assert loss.item() >= 0.0

    def test_layer_set_mismatch(self, rng):
        net = small_net(rng)
        targets = gram_targets(net, Tensor(rng.random((1, 2, 8, 8))), LossSpec(["r1"]))
        with pytest.raises(ShapeError):
            texture_loss(Tensor(rng.random((1, 2, 8, 8))), targets, net, LossSpec(["r1", "r2"]))

    def test_shift_invariance_exact_with_circular_descriptor(self, rng):
        # Dyadic weights/inputs keep every sum exact in float64, so reordering
        # the Gram accumulation under a cyclic shift cannot change the loss.
        # Shifts are multiples of 4 = the total pooling stride of the net.
        net = small_net(rng, padding="circular")
        for layer in net.layers:
            if layer.kind == "conv":
                w = np.round(layer.conv.weights.data * 2.0) / 4.0
                layer.conv.weights = Tensor(w)
        spec = LossSpec(["r1", "r2"])
        x0 = rng.integers(0, 2, size=(1, 2, 16, 16)).astype(np.float64)
        targets = gram_targets(net, Tensor(rng.integers(0, 2, size=(1, 2, 16, 16)).astype(np.float64)), spec)
        base = texture_loss(Tensor(x0), targets, net, spec).item()
        for s, t in [(4, 0), (0, 8), (4, 12)]:
            shifted = np.roll(x0, (s, t), axis=(2, 3))
            assert texture_loss(Tensor(shifted), targets, net, spec).item() == base

    @pytest.mark.parametrize("size,bound", [(64, 0.20), (128, 0.10), (256, 0.05)])
    def test_shift_near_invariance_with_zero_padding(self, size, bound):
        # Zero padding breaks stationarity in a band of one receptive field
        # (rf 8 here) around the border, so the loss drift under a cyclic
        # shift shrinks roughly with rf/extent.  Bounds frozen from measured
        # worst cases over seeds 0..7; the 5% level is reached at 32x rf.
        worst = 0.0
        for seed in range(4):
            srng = np.random.default_rng(seed)
            net = small_net(srng, padding="zero")
            spec = LossSpec(["r1", "r2"])
            x0 = srng.random((1, 2, size, size))
            feats = descriptor_forward(net, Tensor(x0))
            targets = GramSet({l: np.zeros_like(gram(feats[l]).data[0]) for l in spec.texture_layers})
            base = texture_loss(Tensor(x0), targets, net, spec).item()
            for s, t in [(1, 0), (12, 24), (size // 2, size // 2), (size - 1, 1)]:
                shifted = np.roll(x0, (s, t), axis=(2, 3))
                drift = abs(texture_loss(Tensor(shifted), targets, net, spec).item() - base) / base
                worst = max(worst, drift)
        assert worst < bound


class TestContentLoss:
    def test_zero_when_equal(self, rng):
        net = small_net(rng)
        spec = LossSpec(["r1"], content_layers=("r2",))
        x = Tensor(rng.random((1, 2, 8, 8)))
        assert content_loss(x, x, net, spec).item() == 0.0

    def test_identity_descriptor_ones_diff(self):
        net = identity_net()
        spec = LossSpec(["id"], content_layers=("id",))
        x = Tensor(np.ones((1, 1, 2, 2)))
        y = Tensor(np.zeros((1, 1, 2, 2)))
        assert content_loss(x, y, net, spec).item() == 4.0

    def test_matches_elementwise_oracle(self, rng):
        net = small_net(rng)
        spec = LossSpec(["r1"], content_layers=("r1", "r2"))
        x = Tensor(rng.random((1, 2, 8, 8)))
        y = Tensor(rng.random((1, 2, 8, 8)))
        fx = descriptor_forward(net, x)
        fy = descriptor_forward(net, y)
        expect = sum(float(((fx[l].data - fy[l].data) ** 2).sum()) for l in spec.content_layers)
        assert rel_error(content_loss(x, y, net, spec).item(), expect) < 1e-10

    def test_size_mismatch(self, rng):
        net = small_net(rng)
        spec = LossSpec(["r1"], content_layers=("r1",))
        with pytest.raises(ShapeError):
            content_loss(Tensor(np.ones((1, 2, 8, 8))), Tensor(np.ones((1, 2, 4, 4))), net, spec)


class TestStylizationLoss:
    def test_alpha_zero_equals_texture(self, rng):
        net = small_net(rng)
        spec = LossSpec(["r1", "r2"], content_layers=("r2",), alpha=0.0)
        x = Tensor(rng.random((1, 2, 8, 8)))
        y = Tensor(rng.random((1, 2, 8, 8)))
        targets = gram_targets(net, y, spec)
        assert stylization_loss(x, y, targets, net, spec).item() == texture_loss(x, targets, net, spec).item()

    def test_zero_when_everything_matches(self, rng):
        net = small_net(rng)
        spec = LossSpec(["r1"], content_layers=("r2",), alpha=1.0)
        x = Tensor(rng.random((1, 2, 8, 8)))
        targets = gram_targets(net, x, spec)
        assert abs(stylization_loss(x, x, targets, net, spec).item()) < 1e-20

    def test_combination_arithmetic(self, rng):
        net = small_net(rng)
        spec = LossSpec(["r1", "r2"], content_layers=("r2",), alpha=2.0)
        x = Tensor(rng.random((1, 2, 8, 8)))
        y = Tensor(rng.random((1, 2, 8, 8)))
        targets = gram_targets(net, Tensor(rng.random((1, 2, 8, 8))), spec)
        t = texture_loss(x, targets, net, spec).item()
        c = content_loss(x, y, net, spec).item()
        s = stylization_loss(x, y, targets, net, spec).item()
        assert rel_error(s, t + 2.0 * c) < 1e-10

    def test_negative_alpha_rejected(self):
        with pytest.raises(ValueError):
            LossSpec(["r1"], alpha=-1.0)


class TestMmdEquivalence:
    def test_zero_when_equal(self, rng):
        f = rng.standard_normal((3, 4, 4))
        assert mmd_form(f, f.copy()) == 0.0

    def test_single_pixel_single_channel(self):
        # phi(v) = v^2: (1 - 4)^2 = 9.
        assert mmd_form(np.array([[[1.0]]]), np.array([[[2.0]]])) == 9.0

    def test_equals_single_layer_texture_loss(self, rng):
        for _ in range(25):
            fx = rng.standard_normal((3, 4, 4))
            fy = rng.standard_normal((3, 4, 4))
            gx = gram(Tensor(fx[None])).data[0]
            gy = gram(Tensor(fy[None])).data[0]
            frob = float(((gx - gy) ** 2).sum())
            assert rel_error(mmd_form(fx, fy), frob) < 1e-9

    def test_different_spatial_sizes_allowed(self, rng):
        assert mmd_form(rng.standard_normal((2, 4, 4)), rng.standard_normal((2, 8, 8))) > 0.0

    def test_channel_mismatch(self, rng):
        with pytest.raises(ShapeError):
            mmd_form(rng.standard_normal((2, 4, 4)), rng.standard_normal((3, 4, 4)))


class TestWeightFiles:
    def test_round_trip_bitwise(self, rng, tmp_path):
        net = tiny_descriptor(seed=3)
        path = tmp_path / "d.txnw"
        save_weights(net, path)
        loaded = load_weights(path)
        for a, b in zip(net.weight_arrays(), loaded.weight_arrays()):
            assert np.array_equal(a, b) and a.dtype == b.dtype

    def test_round_trip_with_config(self, tmp_path):
        from gramtex.descriptor import TINY_DESCRIPTOR_CONFIG

        cfg = parse_descriptor_config(TINY_DESCRIPTOR_CONFIG)
        net = build_descriptor(cfg, seed=1)
        path = tmp_path / "d.txnw"
        save_weights(net, path)
        loaded = load_weights(path, config=cfg)
        assert loaded.taps == ("relu1", "relu2")
        assert [l.id for l in loaded.layers] == [l.id for l in net.layers]

    def test_corrupt_magic(self, tmp_path):
        path = tmp_path / "bad.txnw"
        path.write_bytes(b"NOPE!\x00" + b"\x00" * 32)
        with pytest.raises(FormatError):
            load_weights(path)

    def test_truncated_file(self, tmp_path):
        net = tiny_descriptor()
        path = tmp_path / "d.txnw"
        save_weights(net, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(FormatError):
            load_weights(path)

    def test_shape_inconsistency_against_config(self, tmp_path):
        net = tiny_descriptor()
        path = tmp_path / "d.txnw"
        save_weights(net, path)
        other = parse_descriptor_config(
            "padding zero\npooling avg\nconv conv1 3 8 3 3\nrelu relu1\npool pool1\n"
            "conv conv2 8 32 3 3\nrelu relu2\npool pool2\ntaps relu1 relu2\n"
        )
        with pytest.raises(FormatError):
            load_weights(path, config=other)


class TestConfigParsing:
    def test_tiny_config_shape(self):
        net = tiny_descriptor(seed=0)
        assert [l.kind for l in net.layers] == ["conv", "relu", "pool", "conv", "relu", "pool"]
        assert net.taps == ("relu1", "relu2")

    def test_seeded_filters_deterministic_and_orthogonal(self):
        a = tiny_descriptor(seed=5)
        b = tiny_descriptor(seed=5)
        for wa, wb in zip(a.weight_arrays(), b.weight_arrays()):
            assert np.array_equal(wa, wb)
        w = a.layers[0].conv.weights.data.reshape(16, -1).astype(np.float64)
        assert rel_error(w @ w.T, np.eye(16)) < 1e-5

    def test_bad_directive_rejected(self):
        with pytest.raises(FormatError):
            parse_descriptor_config("convolve c1 3 16 3 3\n")

    def test_unknown_tap_rejected(self):
        with pytest.raises(ValueError):
            parse_config_and_build("conv c1 3 4 3 3\nrelu r1\ntaps nosuch\n")


def parse_config_and_build(text):
    return build_descriptor(parse_descriptor_config(text))
