"""Unit tests for the autodiff tensor and its operations."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tripath.errors import (
    ConfigError,
    ContractError,
    DomainError,
    NumericError,
    ParamError,
    ShapeError,
)
from tripath.tensor import (
    Tensor,
    clamp,
    concat,
    conv3d,
    dropout,
    elementwise,
    global_avg_pool,
    group_norm,
    linear,
    maxpool3d,
    no_grad,
    relu,
    softmax,
    temporal_subsample,
    tensor_mean,
    tensor_sum,
    zero_grads,
)


def t64(data, requires_grad=False):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=requires_grad)


class TestConstruction:
    def test_integer_input_defaults_to_float32(self):
        assert Tensor([1, 2, 3]).dtype == np.float32
        assert Tensor(np.arange(3)).dtype == np.float32

    def test_float_input_dtype_is_preserved(self):
        assert Tensor(np.zeros(3, dtype=np.float64)).dtype == np.float64
        assert Tensor(np.zeros(3, dtype=np.float32)).dtype == np.float32

    def test_integer_dtype_request_rejected(self):
        with pytest.raises(ParamError):
            Tensor([1, 2], dtype=np.int32)

    def test_wrapping_tensor_rejected(self):
        with pytest.raises(ParamError):
            Tensor(Tensor([1.0]))

    def test_zero_sized_extent_rejected(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((2, 0, 3)))

    def test_item_requires_single_element(self):
        assert Tensor([[2.5]]).item() == 2.5
        with pytest.raises(ShapeError):
            Tensor([1.0, 2.0]).item()

    def test_len_of_scalar_rejected(self):
        with pytest.raises(ShapeError):
            len(Tensor(1.0))

    def test_detach_drops_graph(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        y = (x * 3.0).detach()
        assert not y.requires_grad
        with pytest.raises(ContractError):
            tensor_sum(y).backward()


class TestElementwise:
    def test_binary_forward_values(self):
        a = t64([1.0, -2.0, 3.0], requires_grad=True)
        b = t64([4.0, 5.0, -6.0], requires_grad=True)
        np.testing.assert_allclose((a + b).data, [5.0, 3.0, -3.0])
        np.testing.assert_allclose((a - b).data, [-3.0, -7.0, 9.0])
        np.testing.assert_allclose((a * b).data, [4.0, -10.0, -18.0])
        np.testing.assert_allclose((a / b).data, [0.25, -0.4, -0.5])

    def test_binary_gradients(self):
        a = t64([1.0, -2.0, 3.0], requires_grad=True)
        b = t64([4.0, 5.0, -6.0], requires_grad=True)
        tensor_sum(a * b).backward()
        np.testing.assert_allclose(a.grad, b.data)
        np.testing.assert_allclose(b.grad, a.data)

    def test_div_gradients(self):
        a = t64([1.0, -2.0], requires_grad=True)
        b = t64([4.0, 5.0], requires_grad=True)
        tensor_sum(a / b).backward()
        np.testing.assert_allclose(a.grad, 1.0 / b.data)
        np.testing.assert_allclose(b.grad, -a.data / b.data**2)

    def test_scalar_broadcast(self):
        a = t64([1.0, 2.0], requires_grad=True)
        y = 2.0 * a + 1.0
        np.testing.assert_allclose(y.data, [3.0, 5.0])
        tensor_sum(y).backward()
        np.testing.assert_allclose(a.grad, [2.0, 2.0])

    def test_reflected_operators(self):
        a = t64([2.0, 4.0], requires_grad=True)
        np.testing.assert_allclose((1.0 - a).data, [-1.0, -3.0])
        np.testing.assert_allclose((8.0 / a).data, [4.0, 2.0])
        np.testing.assert_allclose((-a).data, [-2.0, -4.0])

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            t64([1.0, 2.0]) + t64([1.0, 2.0, 3.0])

    def test_non_tensor_operand_rejected(self):
        with pytest.raises(ParamError):
            t64([1.0]) + "nope"

    def test_scalar_division_by_zero(self):
        with pytest.raises(DomainError):
            t64([1.0]) / 0.0

    def test_pow_forward_and_grad(self):
        a = t64([2.0, 3.0], requires_grad=True)
        y = a**3
        np.testing.assert_allclose(y.data, [8.0, 27.0])
        tensor_sum(y).backward()
        np.testing.assert_allclose(a.grad, 3.0 * a.data**2)

    def test_pow_negative_base_fractional_exponent(self):
        with pytest.raises(DomainError):
            t64([-1.0]) ** 0.5

    def test_pow_tensor_exponent_rejected(self):
        with pytest.raises(ParamError):
            t64([1.0]) ** t64([2.0])

    def test_log_domain(self):
        with pytest.raises(DomainError):
            elementwise("log", t64([1.0, 0.0]))
        with pytest.raises(DomainError):
            elementwise("log", t64([-0.5]))

    def test_log_exp_roundtrip_grad(self):
        a = t64([0.5, 1.5], requires_grad=True)
        y = elementwise("log", elementwise("exp", a))
        np.testing.assert_allclose(y.data, a.data, rtol=1e-12)
        tensor_sum(y).backward()
        np.testing.assert_allclose(a.grad, [1.0, 1.0], rtol=1e-12)

    def test_relu_subgradient_zero_at_kink(self):
        a = t64([-1.0, 0.0, 2.0], requires_grad=True)
        y = relu(a)
        np.testing.assert_allclose(y.data, [0.0, 0.0, 2.0])
        tensor_sum(y).backward()
        np.testing.assert_allclose(a.grad, [0.0, 0.0, 1.0])

    def test_clamp_gradient_masks_clipped_entries(self):
        a = t64([-2.0, 0.5, 3.0], requires_grad=True)
        y = clamp(a, 0.0, 1.0)
        np.testing.assert_allclose(y.data, [0.0, 0.5, 1.0])
        tensor_sum(y).backward()
        np.testing.assert_allclose(a.grad, [0.0, 1.0, 0.0])

    def test_clamp_bounds_validated(self):
        with pytest.raises(ParamError):
            clamp(t64([0.0]), 1.0, 1.0)

    def test_elementwise_dispatch_errors(self):
        a = t64([1.0])
        with pytest.raises(ParamError):
            elementwise("log", a, a)
        with pytest.raises(ParamError):
            elementwise("mul", a)
        with pytest.raises(ParamError):
            elementwise("hypot", a, a)

    @given(st.integers(min_value=0, max_value=2**31 - 1))
    @settings(max_examples=20, deadline=None)
    def test_mul_grad_matches_product_rule(self, seed):
        rng = np.random.default_rng(seed)
        a = t64(rng.normal(size=5), requires_grad=True)
        b = t64(rng.normal(size=5), requires_grad=True)
        tensor_sum(a * b * a).backward()
        np.testing.assert_allclose(a.grad, 2.0 * a.data * b.data, rtol=1e-10)
        np.testing.assert_allclose(b.grad, a.data**2, rtol=1e-10)


class TestReductions:
    def test_sum_axis_and_keepdims(self):
        a = t64(np.arange(12.0).reshape(3, 4), requires_grad=True)
        y = tensor_sum(a, axis=1, keepdims=True)
        assert y.shape == (3, 1)
        np.testing.assert_allclose(y.data[:, 0], a.data.sum(axis=1))
        tensor_sum(y).backward()
        np.testing.assert_allclose(a.grad, np.ones((3, 4)))

    def test_sum_negative_axis(self):
        a = t64(np.ones((2, 3)))
        assert tensor_sum(a, axis=-1).shape == (2,)

    def test_mean_gradient_scales_by_count(self):
        a = t64(np.arange(6.0).reshape(2, 3), requires_grad=True)
        tensor_mean(a).backward()
        np.testing.assert_allclose(a.grad, np.full((2, 3), 1.0 / 6.0))

    def test_mean_multi_axis(self):
        a = t64(np.arange(24.0).reshape(2, 3, 4), requires_grad=True)
        y = tensor_mean(a, axis=(0, 2))
        np.testing.assert_allclose(y.data, a.data.mean(axis=(0, 2)))
        tensor_sum(y).backward()
        np.testing.assert_allclose(a.grad, np.full(a.shape, 1.0 / 8.0))

    def test_axis_out_of_range(self):
        with pytest.raises(ShapeError):
            tensor_sum(t64(np.ones((2, 3))), axis=2)

    def test_duplicate_axes_rejected(self):
        with pytest.raises(ParamError):
            tensor_sum(t64(np.ones((2, 3))), axis=(0, 0))


class TestShapeOps:
    def test_concat_values_and_grad_partition(self):
        a = t64(np.ones((2, 2)), requires_grad=True)
        b = t64(2.0 * np.ones((2, 3)), requires_grad=True)
        y = concat([a, b], axis=1)
        assert y.shape == (2, 5)
        tensor_sum(y * y).backward()
        np.testing.assert_allclose(a.grad, 2.0 * np.ones((2, 2)))
        np.testing.assert_allclose(b.grad, 4.0 * np.ones((2, 3)))

    def test_concat_validation(self):
        with pytest.raises(ParamError):
            concat([], axis=0)
        with pytest.raises(ShapeError):
            concat([t64(np.ones((2, 2))), t64(np.ones((3, 3)))], axis=0)
        with pytest.raises(ShapeError):
            concat([t64(np.ones((2, 2)))], axis=5)

    def test_temporal_subsample_stride(self):
        a = t64(np.arange(2 * 1 * 6 * 1 * 1).reshape(2, 1, 6, 1, 1), requires_grad=True)
        y = temporal_subsample(a, 2)
        assert y.shape == (2, 1, 3, 1, 1)
        np.testing.assert_allclose(y.data, a.data[:, :, ::2])
        tensor_sum(y).backward()
        expected = np.zeros(a.shape)
        expected[:, :, ::2] = 1.0
        np.testing.assert_allclose(a.grad, expected)

    def test_temporal_subsample_validation(self):
        with pytest.raises(ShapeError):
            temporal_subsample(t64(np.ones((2, 2))), 2)
        with pytest.raises(ParamError):
            temporal_subsample(t64(np.ones((1, 1, 4, 1, 1))), 0)


class TestDenseOps:
    def test_linear_matches_matmul(self):
        rng = np.random.default_rng(0)
        x = t64(rng.normal(size=(4, 3)), requires_grad=True)
        w = t64(rng.normal(size=(2, 3)), requires_grad=True)
        b = t64(rng.normal(size=2), requires_grad=True)
        y = linear(x, w, b)
        np.testing.assert_allclose(y.data, x.data @ w.data.T + b.data, rtol=1e-12)
        tensor_sum(y).backward()
        np.testing.assert_allclose(x.grad, np.ones((4, 2)) @ w.data, rtol=1e-12)
        np.testing.assert_allclose(w.grad, np.ones((4, 2)).T @ x.data, rtol=1e-12)
        np.testing.assert_allclose(b.grad, np.full(2, 4.0))

    def test_linear_shape_validation(self):
        x, w, b = t64(np.ones((2, 3))), t64(np.ones((4, 3))), t64(np.ones(4))
        with pytest.raises(ShapeError):
            linear(x, t64(np.ones((4, 5))), b)
        with pytest.raises(ShapeError):
            linear(x, w, t64(np.ones(3)))
        with pytest.raises(ShapeError):
            linear(t64(np.ones(3)), w, b)

    def test_softmax_rows_normalize(self):
        x = t64([[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]])
        y = softmax(x)
        np.testing.assert_allclose(y.data.sum(axis=1), [1.0, 1.0], rtol=1e-12)
        np.testing.assert_allclose(y.data[1], [1 / 3, 1 / 3, 1 / 3], rtol=1e-12)

    def test_softmax_large_logits_stable(self):
        y = softmax(t64([[1000.0, 1000.0]]))
        np.testing.assert_allclose(y.data, [[0.5, 0.5]])

    def test_softmax_shift_invariance(self):
        x = np.array([[0.3, -1.2, 2.0]])
        np.testing.assert_allclose(
            softmax(t64(x)).data, softmax(t64(x + 100.0)).data, rtol=1e-9
        )

    def test_softmax_rejects_nonfinite(self):
        with pytest.raises(NumericError):
            softmax(t64([[np.inf, 1.0]]))

    def test_softmax_rank_check(self):
        with pytest.raises(ShapeError):
            softmax(t64([1.0, 2.0]))

    def test_softmax_gradient_sums_to_zero(self):
        x = t64([[0.1, -0.4, 0.9]], requires_grad=True)
        tensor_sum(softmax(x) * t64([[1.0, 0.0, 0.0]])).backward()
        np.testing.assert_allclose(x.grad.sum(), 0.0, atol=1e-12)

    def test_dropout_zero_rate_is_identity(self):
        x = t64([1.0, 2.0], requires_grad=True)
        assert dropout(x, 0.0, np.random.default_rng(0)) is x

    def test_dropout_scales_kept_entries(self):
        x = t64(np.ones(1000), requires_grad=True)
        y = dropout(x, 0.25, np.random.default_rng(7))
        scale = 1.0 / 0.75
        values = set(np.round(np.unique(y.data), 9))
        assert values <= {0.0, round(scale, 9)}
        kept = y.data != 0.0
        assert 0.6 < kept.mean() < 0.9
        tensor_sum(y).backward()
        np.testing.assert_allclose(x.grad[kept], scale)
        np.testing.assert_allclose(x.grad[~kept], 0.0)

    def test_dropout_rate_validation(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ParamError):
            dropout(t64([1.0]), 1.0, rng)
        with pytest.raises(ParamError):
            dropout(t64([1.0]), -0.1, rng)


def naive_conv3d(x, w, stride, padding):
    """Direct-loop cross correlation used as a test oracle."""
    b, ci, t, h, wd = x.shape
    co, _, kt, kh, kw = w.shape
    st_, sh, sw = stride
    pt, ph, pw = padding
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))
    to = (t + 2 * pt - kt) // st_ + 1
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (wd + 2 * pw - kw) // sw + 1
    out = np.zeros((b, co, to, ho, wo), dtype=x.dtype)
    for bi in range(b):
        for oc in range(co):
            for ot in range(to):
                for oh in range(ho):
                    for ow in range(wo):
                        patch = xp[
                            bi,
                            :,
                            ot * st_ : ot * st_ + kt,
                            oh * sh : oh * sh + kh,
                            ow * sw : ow * sw + kw,
                        ]
                        out[bi, oc, ot, oh, ow] = (patch * w[oc]).sum()
    return out


class TestVideoOps:
    def test_conv3d_matches_naive(self):
        rng = np.random.default_rng(3)
        x = t64(rng.normal(size=(2, 3, 5, 6, 6)), requires_grad=True)
        w = t64(rng.normal(size=(4, 3, 3, 3, 3)), requires_grad=True)
        b = t64(rng.normal(size=4), requires_grad=True)
        for stride, padding in [((1, 1, 1), (0, 0, 0)), ((2, 2, 2), (1, 1, 1)), ((1, 2, 2), (2, 1, 1))]:
            y = conv3d(x, w, b, stride=stride, padding=padding)
            ref = naive_conv3d(x.data, w.data, stride, padding) + b.data.reshape(1, -1, 1, 1, 1)
            np.testing.assert_allclose(y.data, ref, rtol=1e-10, atol=1e-12)

    def test_conv3d_no_bias(self):
        rng = np.random.default_rng(4)
        x = t64(rng.normal(size=(1, 2, 4, 4, 4)))
        w = t64(rng.normal(size=(3, 2, 2, 2, 2)))
        y = conv3d(x, w, None, stride=(2, 2, 2))
        ref = naive_conv3d(x.data, w.data, (2, 2, 2), (0, 0, 0))
        np.testing.assert_allclose(y.data, ref, rtol=1e-10)

    def test_conv3d_gradients_match_naive_fd(self):
        rng = np.random.default_rng(5)
        x = t64(rng.normal(size=(1, 2, 3, 4, 4)), requires_grad=True)
        w = t64(rng.normal(size=(2, 2, 2, 3, 3)), requires_grad=True)
        b = t64(rng.normal(size=2), requires_grad=True)
        y = conv3d(x, w, b, stride=(1, 1, 1), padding=(1, 1, 1))
        tensor_sum(y * y).backward()
        eps = 1e-6
        for tensor in (x, w, b):
            flat = tensor.data.reshape(-1)
            for idx in [0, flat.size // 2, flat.size - 1]:
                orig = flat[idx]
                flat[idx] = orig + eps
                up = (conv3d(x, w, b, stride=(1, 1, 1), padding=(1, 1, 1)).data ** 2).sum()
                flat[idx] = orig - eps
                dn = (conv3d(x, w, b, stride=(1, 1, 1), padding=(1, 1, 1)).data ** 2).sum()
                flat[idx] = orig
                np.testing.assert_allclose(
                    tensor.grad.reshape(-1)[idx], (up - dn) / (2 * eps), rtol=1e-5, atol=1e-7
                )

    def test_conv3d_validation(self):
        x = t64(np.ones((1, 2, 4, 4, 4)))
        with pytest.raises(ShapeError):
            conv3d(x, t64(np.ones((3, 5, 2, 2, 2))), None)
        with pytest.raises(ShapeError):
            conv3d(x, t64(np.ones((3, 2, 9, 2, 2))), None)
        with pytest.raises(ShapeError):
            conv3d(x, t64(np.ones((3, 2, 2, 2, 2))), t64(np.ones(4)))
        with pytest.raises(ParamError):
            conv3d(x, t64(np.ones((3, 2, 2, 2, 2))), None, stride=(0, 1, 1))
        with pytest.raises(ShapeError):
            conv3d(t64(np.ones((2, 4, 4, 4))), t64(np.ones((3, 2, 2, 2, 2))), None)

    def test_maxpool_matches_naive(self):
        rng = np.random.default_rng(6)
        x = t64(rng.normal(size=(2, 3, 6, 6, 6)))
        y, _ = maxpool3d(x, (2, 2, 2)).data, None
        ref = x.data.reshape(2, 3, 3, 2, 3, 2, 3, 2).max(axis=(3, 5, 7))
        np.testing.assert_allclose(y, ref)

    def test_maxpool_gradient_routes_to_argmax(self):
        x = t64(
            np.array([[[[[1.0, 5.0], [2.0, 3.0]], [[0.0, -1.0], [4.0, 2.0]]]]]),
            requires_grad=True,
        )
        y = maxpool3d(x, (2, 2, 2))
        assert y.data.reshape(()) == 5.0
        tensor_sum(y).backward()
        expected = np.zeros(x.shape)
        expected[0, 0, 0, 0, 1] = 1.0
        np.testing.assert_allclose(x.grad, expected)

    def test_maxpool_ties_route_to_single_slot(self):
        x = t64(np.ones((1, 1, 2, 2, 2)), requires_grad=True)
        tensor_sum(maxpool3d(x, (2, 2, 2))).backward()
        assert x.grad.sum() == 1.0
        assert (x.grad != 0).sum() == 1

    def test_maxpool_padding_uses_neg_inf(self):
        x = t64(-np.ones((1, 1, 2, 4, 4)))
        y = maxpool3d(x, (3, 3, 3), stride=(2, 2, 2), padding=(1, 1, 1))
        assert np.all(np.isfinite(y.data))
        assert np.all(y.data == -1.0)

    def test_maxpool_validation(self):
        x = t64(np.ones((1, 1, 4, 4, 4)))
        with pytest.raises(ParamError):
            maxpool3d(x, (2, 2, 2), padding=(2, 2, 2))
        with pytest.raises(ShapeError):
            maxpool3d(x, (5, 5, 5))

    def test_global_avg_pool(self):
        rng = np.random.default_rng(7)
        x = t64(rng.normal(size=(2, 3, 4, 5, 6)), requires_grad=True)
        y = global_avg_pool(x)
        np.testing.assert_allclose(y.data, x.data.mean(axis=(2, 3, 4)), rtol=1e-12)
        tensor_sum(y).backward()
        np.testing.assert_allclose(x.grad, np.full(x.shape, 1.0 / (4 * 5 * 6)))

    def test_group_norm_normalizes_groups(self):
        rng = np.random.default_rng(8)
        x = t64(rng.normal(loc=3.0, scale=2.0, size=(2, 6, 3, 4, 4)), requires_grad=True)
        gamma = t64(np.ones(6), requires_grad=True)
        beta = t64(np.zeros(6), requires_grad=True)
        y = group_norm(x, gamma, beta, num_groups=2)
        grouped = y.data.reshape(2, 2, -1)
        np.testing.assert_allclose(grouped.mean(axis=2), 0.0, atol=1e-10)
        np.testing.assert_allclose(grouped.var(axis=2), 1.0, rtol=1e-4)

    def test_group_norm_affine(self):
        x = t64(np.random.default_rng(9).normal(size=(1, 4, 2, 2, 2)))
        gamma = t64([2.0, 2.0, 2.0, 2.0])
        beta = t64([1.0, 1.0, 1.0, 1.0])
        base = group_norm(x, t64(np.ones(4)), t64(np.zeros(4)), num_groups=1)
        scaled = group_norm(x, gamma, beta, num_groups=1)
        np.testing.assert_allclose(scaled.data, 2.0 * base.data + 1.0, rtol=1e-10)

    def test_group_norm_validation(self):
        x = t64(np.ones((1, 6, 2, 2, 2)))
        gamma, beta = t64(np.ones(6)), t64(np.zeros(6))
        with pytest.raises(ConfigError):
            group_norm(x, gamma, beta, num_groups=4)
        with pytest.raises(ShapeError):
            group_norm(x, t64(np.ones(3)), beta, num_groups=2)
        with pytest.raises(ParamError):
            group_norm(x, gamma, beta, num_groups=0)
        with pytest.raises(ParamError):
            group_norm(x, gamma, beta, num_groups=2, eps=0.0)


class TestBackwardMachinery:
    def test_backward_requires_scalar(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            (x * 2.0).backward()

    def test_backward_requires_graph(self):
        with pytest.raises(ContractError):
            Tensor(1.0).backward()

    def test_gradients_accumulate_across_calls(self):
        x = t64([1.0, 2.0], requires_grad=True)
        loss = tensor_sum(x * 3.0)
        loss.backward()
        loss2 = tensor_sum(x * 3.0)
        loss2.backward()
        np.testing.assert_allclose(x.grad, [6.0, 6.0])

    def test_each_vjp_runs_once_per_call(self):
        x = t64([1.0], requires_grad=True)
        y = x * 2.0
        z = tensor_sum(y + y)
        z.backward()
        assert y.backward_count == 1
        np.testing.assert_allclose(x.grad, [4.0])

    def test_diamond_graph_gradient(self):
        x = t64([3.0], requires_grad=True)
        y = (x * x) + (x * 2.0)
        tensor_sum(y).backward()
        np.testing.assert_allclose(x.grad, [8.0])

    def test_no_grad_blocks_graph(self):
        x = t64([1.0], requires_grad=True)
        with no_grad():
            y = x * 2.0
        assert not y.requires_grad
        with pytest.raises(ContractError):
            tensor_sum(y).backward()

    def test_zero_grads(self):
        x = t64([1.0], requires_grad=True)
        tensor_sum(x * 2.0).backward()
        assert x.grad is not None
        zero_grads([x])
        assert x.grad is None

    def test_grad_not_kept_without_requires_grad(self):
        x = t64([1.0], requires_grad=False)
        w = t64([2.0], requires_grad=True)
        tensor_sum(x * w).backward()
        assert x.grad is None
        np.testing.assert_allclose(w.grad, [1.0])
