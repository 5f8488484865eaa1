"""Tests for module infrastructure and the neural network layers."""

import numpy as np
import pytest

from tripath.errors import ConfigError, ParamError, ShapeError
from tripath.layers import (
    Backbone,
    BackboneSpec,
    BasicBlock3d,
    BottleneckBlock3d,
    Conv3d,
    GroupNorm,
    Linear,
    MaxPool3d,
    Module,
    ModuleDict,
    ModuleList,
    Stage,
    Stem,
    build_backbone,
    default_num_groups,
    uniform_init,
)
from tripath.tensor import Tensor, tensor_sum


def rand_video(shape, seed=0):
    return Tensor(np.random.default_rng(seed).normal(size=shape).astype(np.float32))


class TestModuleInfrastructure:
    def test_parameter_and_child_registration(self):
        class Net(Module):
            def __init__(self):
                super().__init__()
                self.w = Tensor(np.ones(3, np.float32), requires_grad=True)
                self.frozen = Tensor(np.ones(2, np.float32))
                self.inner = Linear(2, 2)

        net = Net()
        names = dict(net.named_parameters())
        assert "w" in names
        assert "frozen" not in names
        assert "inner.weight" in names and "inner.bias" in names

    def test_reassignment_replaces_registration(self):
        class Net(Module):
            def __init__(self):
                super().__init__()
                self.w = Tensor(np.ones(3, np.float32), requires_grad=True)

        net = Net()
        net.w = None
        assert dict(net.named_parameters()) == {}

    def test_train_eval_propagates(self):
        net = BasicBlock3d(4, 4)
        assert not net.training
        net.train()
        assert all(m.training for _, m in net.named_modules())
        net.eval()
        assert not any(m.training for _, m in net.named_modules())

    def test_state_dict_roundtrip(self):
        a = Linear(3, 2, rng=np.random.default_rng(1))
        b = Linear(3, 2, rng=np.random.default_rng(2))
        assert not np.allclose(a.weight.data, b.weight.data)
        b.load_state_dict(a.state_dict())
        np.testing.assert_array_equal(a.weight.data, b.weight.data)
        np.testing.assert_array_equal(a.bias.data, b.bias.data)

    def test_state_dict_copies_storage(self):
        layer = Linear(2, 2)
        state = layer.state_dict()
        state["weight"][:] = 99.0
        assert not np.any(layer.weight.data == 99.0)

    def test_load_state_dict_validates_names_and_shapes(self):
        layer = Linear(3, 2)
        with pytest.raises(ParamError):
            layer.load_state_dict({"weight": np.zeros((2, 3))})
        bad = layer.state_dict()
        bad["weight"] = np.zeros((5, 5))
        with pytest.raises(ShapeError):
            layer.load_state_dict(bad)

    def test_zero_grads(self):
        layer = Linear(3, 2)
        x = Tensor(np.ones((1, 3), np.float32))
        tensor_sum(layer(x)).backward()
        assert layer.weight.grad is not None
        layer.zero_grads()
        assert layer.weight.grad is None

    def test_module_list_and_dict(self):
        ml = ModuleList([Linear(2, 2), Linear(2, 2)])
        assert len(ml) == 2
        assert len(dict(ml.named_parameters())) == 4
        md = ModuleDict({"a": Linear(2, 2)})
        md["b"] = Linear(2, 2)
        assert "a" in md and "b" in md
        assert sorted(md.keys()) == ["a", "b"]
        with pytest.raises(NotImplementedError):
            md(None)

    def test_count_parameters(self):
        assert Linear(3, 2).count_parameters() == 3 * 2 + 2


class TestInitHelpers:
    def test_uniform_init_bound(self):
        w = uniform_init(np.random.default_rng(0), (100, 100), fan_in=4)
        assert w.requires_grad
        assert np.abs(w.data).max() <= 0.5
        assert np.abs(w.data).max() > 0.4

    @pytest.mark.parametrize(
        "channels,groups", [(8, 8), (16, 8), (6, 6), (12, 4), (10, 2), (7, 7), (3, 3)]
    )
    def test_default_num_groups(self, channels, groups):
        assert default_num_groups(channels) == groups
        assert channels % default_num_groups(channels) == 0


class TestBasicLayers:
    def test_conv3d_shapes_and_params(self):
        conv = Conv3d(3, 8, (1, 3, 3), stride=(1, 2, 2), padding=(0, 1, 1))
        y = conv(rand_video((2, 3, 4, 8, 8)))
        assert y.shape == (2, 8, 4, 4, 4)
        assert conv.count_parameters() == 8 * 3 * 9 + 8

    def test_conv3d_without_bias(self):
        conv = Conv3d(2, 4, (1, 1, 1), bias=False)
        assert conv.bias is None
        assert conv.count_parameters() == 4 * 2

    def test_group_norm_layer_normalizes_at_init(self):
        gn = GroupNorm(8)
        y = gn(rand_video((2, 8, 3, 4, 4), seed=3))
        grouped = y.data.reshape(2, gn.num_groups, -1)
        np.testing.assert_allclose(grouped.mean(axis=2), 0.0, atol=1e-5)
        np.testing.assert_allclose(grouped.var(axis=2), 1.0, atol=1e-3)

    def test_group_norm_validates_grouping(self):
        with pytest.raises(ConfigError):
            GroupNorm(6, num_groups=4)
        with pytest.raises(ParamError):
            GroupNorm(8, epsilon=0.0)

    def test_linear_zero_bias_default(self):
        layer = Linear(4, 3)
        np.testing.assert_array_equal(layer.bias.data, np.zeros(3))
        layer2 = Linear(4, 3, zero_bias=False)
        assert np.any(layer2.bias.data != 0.0)

    def test_maxpool_default_stride_is_window(self):
        pool = MaxPool3d((1, 2, 2))
        y = pool(rand_video((1, 2, 3, 8, 8)))
        assert y.shape == (1, 2, 3, 4, 4)


class TestResidualBlocks:
    def test_basic_block_identity_shortcut(self):
        block = BasicBlock3d(8, 8, temporal_kernel=3, stride=1)
        assert block.project is None
        y = block(rand_video((1, 8, 4, 8, 8)))
        assert y.shape == (1, 8, 4, 8, 8)
        assert np.all(y.data >= 0.0)

    def test_basic_block_projection_on_stride(self):
        block = BasicBlock3d(8, 16, stride=2)
        assert block.project is not None
        y = block(rand_video((1, 8, 4, 8, 8)))
        assert y.shape == (1, 16, 4, 4, 4)

    def test_basic_block_projection_on_channel_change(self):
        block = BasicBlock3d(4, 8, stride=1)
        assert block.project is not None

    def test_basic_block_preserves_time(self):
        block = BasicBlock3d(4, 4, temporal_kernel=3)
        y = block(rand_video((1, 4, 6, 8, 8)))
        assert y.shape[2] == 6

    def test_basic_block_residual_is_live(self):
        # zero both conv paths: output must reduce to relu(shortcut)
        block = BasicBlock3d(4, 4, stride=1)
        for conv in (block.conv1, block.conv2):
            conv.weight.data[:] = 0.0
        block.norm2.gamma.data[:] = 0.0
        x = rand_video((1, 4, 2, 6, 6), seed=5)
        np.testing.assert_allclose(block(x).data, np.maximum(x.data, 0.0), atol=1e-6)

    def test_bottleneck_expansion(self):
        block = BottleneckBlock3d(8, 4, temporal_kernel=3, stride=2)
        assert block.out_channels == 16
        y = block(rand_video((1, 8, 4, 8, 8)))
        assert y.shape == (1, 16, 4, 4, 4)

    def test_bottleneck_identity_when_channels_match(self):
        block = BottleneckBlock3d(16, 4, stride=1)
        assert block.project is None

    def test_blocks_are_differentiable(self):
        block = BasicBlock3d(4, 4, temporal_kernel=3)
        x = Tensor(
            np.random.default_rng(6).normal(size=(1, 4, 3, 6, 6)).astype(np.float32),
            requires_grad=True,
        )
        tensor_sum(block(x)).backward()
        assert x.grad is not None
        assert all(p.grad is not None for p in block.parameters())


class TestStemAndBackbone:
    def test_stem_downsamples_space_only(self):
        stem = Stem(1, 8)
        y = stem(rand_video((2, 1, 5, 32, 32)))
        assert y.shape == (2, 8, 5, 8, 8)

    def test_backbone_spec_validation(self):
        with pytest.raises(ConfigError):
            BackboneSpec(depth=34, base_width=64)
        with pytest.raises(ConfigError):
            BackboneSpec(depth=18, base_width=0)

    def test_backbone_spec_widths(self):
        spec = BackboneSpec(depth=18, base_width=64)
        assert [spec.stage_width(i) for i in range(4)] == [64, 128, 256, 512]
        assert spec.final_channels == 512
        assert spec.block_counts == (2, 2, 2, 2)
        deep = BackboneSpec(depth=50, base_width=64)
        assert deep.final_channels == 2048
        assert deep.block_counts == (3, 4, 6, 3)
        assert deep.expansion == 4

    def test_stage_strides_first_block_only(self):
        spec = BackboneSpec(depth=18, base_width=8)
        stage = Stage(spec, index=1, in_channels=8)
        y = stage(rand_video((1, 8, 2, 8, 8)))
        assert y.shape == (1, 16, 2, 4, 4)

    def test_backbone_end_to_end_shape(self):
        spec = BackboneSpec(depth=18, base_width=8)
        net = Backbone(spec, in_channels=1)
        y = net(rand_video((1, 1, 4, 64, 64)))
        assert y.shape == (1, 64, 4, 2, 2)

    def test_build_backbone_accepts_tuple(self):
        net = build_backbone((18, 4), in_channels=1)
        assert net.out_channels == 32

    def test_depth50_backbone_shape(self):
        spec = BackboneSpec(depth=50, base_width=4)
        net = Backbone(spec, in_channels=1)
        y = net(rand_video((1, 1, 2, 32, 32)))
        assert y.shape == (1, 4 * 8 * 4, 2, 1, 1)
