"""Generator architecture: shapes, taps, fusion, determinism, gradient flow."""

import numpy as np
import pytest

from gradsr.arch import RRDB, GeneratorConfig, build_generator
from gradsr.losses import pixel_loss
from gradsr.nn import Tensor, backward, tsum, tabs


def tiny_cfg(**kw):
    base = dict(num_rrdb=2, base_channels=8, growth_channels=4, tap_indices=(1, 2))
    base.update(kw)
    return GeneratorConfig(**base)


def rrdb_oracle(params: dict, x: np.ndarray) -> np.ndarray:
    """Straight-line numpy re-evaluation of one RRDB given its weights."""

    def conv(x, w, b):
        n, c, h, wd = x.shape
        cout, cin, kh, kw = w.shape
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        out = np.zeros((n, cout, h, wd))
        for i in range(h):
            for j in range(wd):
                patch = xp[:, :, i:i + kh, j:j + kw]
                out[:, :, i, j] = np.tensordot(patch, w, axes=([1, 2, 3], [1, 2, 3])) + b
        return out

    def lrelu(v):
        return np.where(v > 0, v, 0.2 * v)

    def dense_block(x, p):
        x1 = lrelu(conv(x, p["conv1.weight"], p["conv1.bias"]))
        x2 = lrelu(conv(np.concatenate([x, x1], 1), p["conv2.weight"], p["conv2.bias"]))
        x3 = lrelu(conv(np.concatenate([x, x1, x2], 1), p["conv3.weight"], p["conv3.bias"]))
        x4 = lrelu(conv(np.concatenate([x, x1, x2, x3], 1), p["conv4.weight"], p["conv4.bias"]))
        x5 = conv(np.concatenate([x, x1, x2, x3, x4], 1), p["conv5.weight"], p["conv5.bias"])
        return x + 0.2 * x5

    def sub(prefix):
        cut = len(prefix) + 1
        return {k[cut:]: v for k, v in params.items() if k.startswith(prefix + ".")}

    out = dense_block(x, sub("dense1"))
    out = dense_block(out, sub("dense2"))
    out = dense_block(out, sub("dense3"))
    return x + 0.2 * out


class TestRRDB:
    def test_zero_input_zero_final_convs_is_identity(self, rng):
        block = RRDB(8, 4, rng)
        for name, p in block.param_tree().items():
            if name.endswith("conv5.weight") or name.endswith("conv5.bias"):
                p.data[...] = 0.0
        x = np.zeros((1, 8, 6, 6))
        out = block(Tensor(x)).data
        assert np.allclose(out, x, atol=1e-14)
        # with the final convs zeroed each dense block is the identity, so the
        # whole block reduces to the outer scaled skip: x + 0.2 x
        y = rng.random((1, 8, 6, 6))
        assert np.allclose(block(Tensor(y)).data, 1.2 * y, atol=1e-12)

    def test_shape_preserved(self, rng):
        block = RRDB(32, 16, rng)
        x = rng.random((1, 32, 16, 16))
        assert block(Tensor(x)).data.shape == x.shape

    def test_matches_straightline_reimplementation(self, rng):
        block = RRDB(4, 3, rng)
        params = {k: v.data for k, v in block.param_tree().items()}
        x = rng.random((1, 4, 5, 5))
        ours = block(Tensor(x)).data
        assert np.max(np.abs(ours - rrdb_oracle(params, x))) < 1e-10


class TestBuildGenerator:
    def test_tap_count_contract(self):
        cfg = GeneratorConfig(num_rrdb=8, tap_indices=(2, 4, 6, 8))
        g = build_generator(cfg, rng_seed=0)
        assert len(g.grad_branch.blocks) == 4

    def test_same_seed_bit_identical(self):
        cfg = tiny_cfg()
        a = build_generator(cfg, rng_seed=3)
        b = build_generator(cfg, rng_seed=3)
        for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb
            assert np.array_equal(pa.data, pb.data)

    def test_no_branch_has_no_grad_branch_params(self):
        g = build_generator(tiny_cfg(use_gradient_branch=False), rng_seed=0)
        names = list(g.param_tree())
        assert all(not n.startswith("grad_branch.") for n in names)
        assert all(not n.startswith("sr_branch.fusion") for n in names)

    def test_branch_increment_is_fusion_block_only(self):
        with_branch = build_generator(tiny_cfg(), rng_seed=0)
        without = build_generator(tiny_cfg(use_gradient_branch=False), rng_seed=0)
        sr_with = {n: p.data.size for n, p in with_branch.named_parameters()
                   if n.startswith("sr_branch.")}
        sr_without = {n: p.data.size for n, p in without.named_parameters()
                      if n.startswith("sr_branch.")}
        extra = set(sr_with) - set(sr_without)
        assert extra and all(n.startswith("sr_branch.fusion") for n in extra)
        assert set(sr_without) - set(sr_with) == set()

    def test_invalid_tap_layouts_rejected(self):
        with pytest.raises(ValueError):
            GeneratorConfig(num_rrdb=4, tap_indices=(2, 2))
        with pytest.raises(ValueError):
            GeneratorConfig(num_rrdb=4, tap_indices=(3, 5))
        with pytest.raises(ValueError):
            GeneratorConfig(num_rrdb=4, tap_indices=())

    def test_scale_pinned_to_four(self):
        with pytest.raises(ValueError):
            GeneratorConfig(scale=2)


class TestGeneratorForward:
    def test_output_shape_contract(self, rng):
        g = build_generator(tiny_cfg(), rng_seed=1)
        out = g(Tensor(rng.random((1, 3, 16, 16))))
        assert out.sr_image.data.shape == (1, 3, 64, 64)
        assert out.sr_gradient.data.shape == (1, 3, 64, 64)

    @pytest.mark.parametrize("size", [8, 11, 24])
    def test_always_4x_spatial(self, size, rng):
        g = build_generator(tiny_cfg(), rng_seed=1)
        out = g(Tensor(rng.random((1, 3, size, size))))
        assert out.sr_image.data.shape[2:] == (4 * size, 4 * size)
        assert out.sr_gradient.data.shape[2:] == (4 * size, 4 * size)

    def test_too_small_input_rejected(self, rng):
        g = build_generator(tiny_cfg(), rng_seed=1)
        with pytest.raises(ValueError):
            g(Tensor(rng.random((1, 3, 7, 7))))

    def test_determinism(self, rng):
        x = rng.random((1, 3, 8, 8))
        a = build_generator(tiny_cfg(), rng_seed=5)(Tensor(x)).sr_image.data
        b = build_generator(tiny_cfg(), rng_seed=5)(Tensor(x)).sr_image.data
        assert np.array_equal(a, b)

    def test_fusion_toggle_changes_image_not_gradient(self, rng):
        g = build_generator(tiny_cfg(), rng_seed=2)
        x = Tensor(rng.random((1, 3, 8, 8)))
        fused = g(x, fuse_gradient_features=True)
        zeroed = g(x, fuse_gradient_features=False)
        assert not np.allclose(fused.sr_image.data, zeroed.sr_image.data)
        assert np.array_equal(fused.sr_gradient.data, zeroed.sr_gradient.data)

    def test_no_branch_output_has_no_gradient_map(self, rng):
        g = build_generator(tiny_cfg(use_gradient_branch=False), rng_seed=2)
        out = g(Tensor(rng.random((1, 3, 8, 8))))
        assert out.sr_gradient is None

    def test_gradient_reaches_nearly_all_parameters(self, rng):
        g = build_generator(tiny_cfg(), rng_seed=4)
        x = Tensor(rng.random((2, 3, 8, 8)))
        target = Tensor(rng.random((2, 3, 32, 32)))
        out = g(x)
        loss = pixel_loss(out.sr_image, target) + pixel_loss(out.sr_gradient, target)
        backward(loss)
        total = nonzero = 0
        for _, p in g.named_parameters():
            total += 1
            if p.grad is not None and np.any(p.grad != 0):
                nonzero += 1
        assert nonzero / total >= 0.99

    def test_gradient_branch_loss_reaches_sr_branch(self, rng):
        # the taps create cross-branch paths: supervising only the predicted
        # gradient map must still update SR-branch blocks
        g = build_generator(tiny_cfg(), rng_seed=4)
        x = Tensor(rng.random((1, 3, 8, 8)))
        out = g(x)
        backward(tsum(tabs(out.sr_gradient)))
        touched = [n for n, p in g.named_parameters()
                   if n.startswith("sr_branch.blocks.") and p.grad is not None
                   and np.any(p.grad != 0)]
        assert touched


class TestConfigRoundTrip:
    def test_dict_round_trip(self):
        cfg = tiny_cfg(use_gradient_branch=False, tap_indices=(1,))
        again = GeneratorConfig.from_dict(cfg.to_dict())
        assert again == cfg
