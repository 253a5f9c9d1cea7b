"""Generator architecture: noise stacks, forward pipeline, ablation, files."""

import numpy as np
import pytest

from gramtex.errors import FormatError, ShapeError
from gramtex.generator import (
    NoiseStack,
    ablate_scales,
    count_params,
    default_schedule,
    generator_forward,
    init_params,
    load_params,
    sample_noise,
    save_params,
    zero_noise,
)
from gramtex.tensor import Tensor


def randomize_bn_stats(params, rng):
    """Give running stats non-trivial values so eval mode is exercised."""
    from gramtex.layers import BatchNormState

    for unit in params.units():
        if isinstance(unit, BatchNormState):
            unit.running_mean = rng.normal(0, 0.1, unit.channels).astype(np.float32)
            unit.running_var = rng.uniform(0.5, 1.5, unit.channels).astype(np.float32)
    return params


class TestSampleNoise:
    def test_extent_halving(self):
        z = sample_noise(16, scales=3, batch=2, seed=0)
        assert [t.shape for t in z.tensors] == [(2, 1, 4, 4), (2, 1, 8, 8), (2, 1, 16, 16)]

    def test_zero_magnitude(self):
        z = sample_noise(8, scales=2, magnitude=0.0, seed=1)
        assert all(np.array_equal(t.data, np.zeros_like(t.data)) for t in z.tensors)

    def test_uniform_mean_within_three_sigma(self):
        k = 0.8
        z = sample_noise((256, 256), scales=4, batch=16, magnitude=k, seed=2)
        draws = np.concatenate([t.data.reshape(-1) for t in z.tensors])
        assert draws.size > 1_000_000
        sigma = k / np.sqrt(12.0 * draws.size)
        assert abs(draws.mean() - k / 2.0) < 3.0 * sigma
        assert draws.min() >= 0.0 and draws.max() < k

    def test_deterministic_given_seed(self):
        a = sample_noise(16, scales=3, seed=9)
        b = sample_noise(16, scales=3, seed=9)
        for ta, tb in zip(a.tensors, b.tensors):
            assert np.array_equal(ta.data, tb.data)

    def test_divisibility_enforced(self):
        with pytest.raises(ShapeError):
            sample_noise(12, scales=4)

    def test_rectangular_extents(self):
        z = sample_noise((8, 16), scales=2, seed=0)
        assert z.extent == (8, 16)

    def test_stack_validation(self):
        with pytest.raises(ShapeError):
            NoiseStack([Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 6, 6)))])


class TestInitParams:
    def test_xavier_bound_for_8_to_8(self):
        params = init_params(scales=2, schedule=(8, 16), seed=0)
        w = params.entry_block.conv2.weights.data  # 3x3, 8 -> 8
        bound = np.sqrt(6.0 / (72 + 72))
        assert abs(bound - 0.2041) < 1e-4
        assert np.abs(w).max() <= bound

    def test_biases_zero_and_bn_identity(self):
        params = init_params(scales=3, schedule=(8, 16, 24), seed=0)
        assert np.array_equal(params.entry_block.conv1.bias.data, np.zeros(8))
        bn = params.entry_block.bn1
        assert np.array_equal(bn.gamma.data, np.ones(8))
        assert np.array_equal(bn.beta.data, np.zeros(8))
        assert np.array_equal(bn.running_var, np.ones(8))

    def test_same_seed_bitwise_equal(self):
        a = init_params(scales=3, seed=4)
        b = init_params(scales=3, seed=4)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert np.array_equal(pa.data, pb.data)

    def test_schedule_bounds_enforced(self):
        with pytest.raises(ValueError):
            init_params(scales=2, schedule=(4, 16))
        with pytest.raises(ValueError):
            init_params(scales=2, schedule=(8, 48))

    def test_default_schedules(self):
        assert default_schedule(5) == (8, 16, 24, 32, 40)
        assert default_schedule(6) == (8, 16, 24, 32, 40, 40)


class TestCountParams:
    def test_final_conv_contribution(self):
        params = init_params(scales=1, schedule=(8,), seed=0)
        rgb = params.output_conv
        assert sum(p.size for p in rgb.parameters()) == 8 * 3 + 3  # 27

    def test_default_texture_config_in_range(self):
        n = count_params(init_params(mode="texture", scales=5, seed=0))
        assert 40_000 <= n <= 90_000

    def test_count_independent_of_input_extent(self):
        params = init_params(scales=2, schedule=(8, 16), seed=0)
        n = count_params(params)
        generator_forward(params, sample_noise(8, 2, seed=0))
        generator_forward(params, sample_noise(32, 2, seed=0))
        assert count_params(params) == n

    def test_doubled_schedule_quadruples_conv_weights(self):
        def conv_weight_count(params):
            from gramtex.layers import ConvSpec

            return sum(u.weights.size for u in params.units() if isinstance(u, ConvSpec))

        small = conv_weight_count(init_params(scales=2, schedule=(8, 16), seed=0))
        big = conv_weight_count(init_params(scales=2, schedule=(16, 32), seed=0))
        assert 3.5 < big / small <= 4.05


class TestGeneratorForward:
    def test_output_shape(self, rng):
        params = init_params(scales=3, schedule=(8, 16, 24), seed=0)
        out = generator_forward(params, sample_noise(16, 3, batch=2, seed=1))
        assert out.shape == (2, 3, 16, 16)

    def test_zero_noise_eval_gives_constant_image(self):
        params = init_params(scales=3, schedule=(8, 16, 24), seed=0).set_training(False)
        out = generator_forward(params, zero_noise(16, 3)).data
        for c in range(3):
            channel = out[0, c]
            assert np.ptp(channel) == 0.0

    def test_cyclic_shift_equivariance_eval(self, rng):
        # Shifting scale i by s / 2^(K-i) shifts the output by s, exactly.
        K = 3
        params = randomize_bn_stats(init_params(scales=K, schedule=(8, 16, 24), seed=1), rng)
        params.set_training(False)
        z = sample_noise(16, K, seed=2)
        base = generator_forward(params, z).data
        for s, t in [(4, 0), (0, 4), (8, 12)]:
            shifted = NoiseStack(
                [
                    Tensor(np.roll(zi.data, (s >> (K - 1 - i), t >> (K - 1 - i)), axis=(2, 3)))
                    for i, zi in enumerate(z.tensors)
                ],
                z.magnitude,
            )
            out = generator_forward(params, shifted).data
            assert np.array_equal(out, np.roll(base, (s, t), axis=(2, 3)))

    def test_fully_convolutional_rectangular(self):
        params = init_params(scales=3, schedule=(8, 16, 24), seed=0).set_training(False)
        out = generator_forward(params, sample_noise((128, 64), 3, seed=3))
        assert out.shape == (1, 3, 128, 64)

    def test_style_mode_resolution_transfer(self, rng):
        # a stylizer is not bound to one content resolution either
        params = init_params(mode="style", scales=2, schedule=(8, 16), seed=0)
        params.set_training(False)
        for extent in (8, 16, 32):
            z = sample_noise(extent, 2, seed=1)
            y = Tensor(rng.random((1, 3, extent, extent)))
            assert generator_forward(params, z, y=y).shape == (1, 3, extent, extent)

    def test_texture_mode_rejects_content_image(self):
        params = init_params(scales=2, schedule=(8, 16), seed=0)
        with pytest.raises(ShapeError):
            generator_forward(params, sample_noise(8, 2, seed=0), y=Tensor(np.zeros((1, 3, 8, 8))))

    def test_style_mode_requires_matching_content(self, rng):
        params = init_params(mode="style", scales=2, schedule=(8, 16), seed=0)
        z = sample_noise(8, 2, seed=0)
        with pytest.raises(ShapeError):
            generator_forward(params, z)
        with pytest.raises(ShapeError):
            generator_forward(params, z, y=Tensor(rng.random((1, 3, 16, 16))))
        out = generator_forward(params, z, y=Tensor(rng.random((1, 3, 8, 8))))
        assert out.shape == (1, 3, 8, 8)

    def test_every_scale_matters(self, rng):
        K = 3
        params = randomize_bn_stats(init_params(scales=K, schedule=(8, 16, 24), seed=5), rng)
        params.set_training(False)
        z = sample_noise(16, K, seed=6)
        base = generator_forward(params, z).data
        for i in range(K):
            bumped = z.replaced(i, Tensor(z.tensors[i].data + 0.5))
            out = generator_forward(params, bumped).data
            assert float(((out - base) ** 2).sum()) > 0.0

    def test_train_mode_updates_running_stats(self):
        params = init_params(scales=2, schedule=(8, 16), seed=0).set_training(True)
        bn = params.entry_block.bn1
        before = bn.running_mean.copy()
        generator_forward(params, sample_noise(8, 2, batch=2, seed=7))
        assert not np.array_equal(bn.running_mean, before)


class TestAblateScales:
    def test_keep_equals_manual_zeroed_stack(self, rng):
        K = 3
        params = randomize_bn_stats(init_params(scales=K, schedule=(8, 16, 24), seed=2), rng)
        params.set_training(False)
        z = sample_noise(16, K, seed=4)
        for keep in (1, 2, 3):
            manual = NoiseStack(
                [
                    zi if i == keep - 1 else Tensor(np.zeros_like(zi.data))
                    for i, zi in enumerate(z.tensors)
                ],
                z.magnitude,
            )
            a = ablate_scales(params, z, keep).data
            b = generator_forward(params, manual).data
            assert np.array_equal(a, b)

    def test_kept_scales_differ(self, rng):
        K = 3
        params = randomize_bn_stats(init_params(scales=K, schedule=(8, 16, 24), seed=3), rng)
        params.set_training(False)
        z = sample_noise(16, K, seed=5)
        outs = [ablate_scales(params, z, keep).data for keep in (1, 2, 3)]
        for i in range(3):
            for j in range(i + 1, 3):
                assert float(((outs[i] - outs[j]) ** 2).sum()) > 0.0

    def test_index_out_of_range(self):
        params = init_params(scales=2, schedule=(8, 16), seed=0)
        z = sample_noise(8, 2, seed=0)
        with pytest.raises(ShapeError):
            ablate_scales(params, z, 0)
        with pytest.raises(ShapeError):
            ablate_scales(params, z, 3)

    def test_empty_zeroed_set_equals_plain_forward(self):
        # one scale: keeping it zeroes nothing, so ablation is a no-op
        params = init_params(scales=1, schedule=(8,), seed=0).set_training(False)
        z = sample_noise(8, 1, seed=1)
        assert np.array_equal(
            ablate_scales(params, z, 1).data, generator_forward(params, z).data
        )


class TestParamFiles:
    def test_round_trip_bitwise(self, rng, tmp_path):
        params = init_params(mode="style", scales=3, schedule=(8, 16, 24), seed=8)
        randomize_bn_stats(params, rng)
        path = tmp_path / "g.txng"
        save_params(params, path)
        loaded = load_params(path)
        assert loaded.mode == "style"
        assert loaded.schedule == (8, 16, 24)
        for a, b in zip(params.parameters(), loaded.parameters()):
            assert np.array_equal(a.data, b.data)
        from gramtex.layers import BatchNormState

        bns_a = [u for u in params.units() if isinstance(u, BatchNormState)]
        bns_b = [u for u in loaded.units() if isinstance(u, BatchNormState)]
        for a, b in zip(bns_a, bns_b):
            assert np.array_equal(a.running_mean, b.running_mean)
            assert np.array_equal(a.running_var, b.running_var)

    def test_round_trip_forward_identical(self, tmp_path):
        params = init_params(scales=2, schedule=(8, 16), seed=1).set_training(False)
        path = tmp_path / "g.txng"
        save_params(params, path)
        loaded = load_params(path).set_training(False)
        z = sample_noise(8, 2, seed=2)
        assert np.array_equal(generator_forward(params, z).data, generator_forward(loaded, z).data)

    def test_mode_guard(self, tmp_path):
        params = init_params(mode="texture", scales=2, schedule=(8, 16), seed=0)
        path = tmp_path / "g.txng"
        save_params(params, path)
        with pytest.raises(FormatError):
            load_params(path, expect_mode="style")

    def test_truncated_file(self, tmp_path):
        params = init_params(scales=2, schedule=(8, 16), seed=0)
        path = tmp_path / "g.txng"
        save_params(params, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-40])
        with pytest.raises(FormatError):
            load_params(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "g.txng"
        path.write_bytes(b"WRONG\x00" + b"\x00" * 64)
        with pytest.raises(FormatError):
            load_params(path)
