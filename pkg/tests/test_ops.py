import numpy as np
import pytest

from valdnet import ops
from valdnet.errors import ContractError, DimensionError, NumericError
from valdnet.tensor import Tape, Tensor, backward


def same_padding(size: int, kernel: int, stride: int) -> tuple[int, int]:
    out = (size + stride - 1) // stride
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def reference_conv(x, k, stride=1, padding='valid'):
    """Nested-loop cross-correlation"""
    c_in, h, w = x.shape
    c_out, _, kh, kw = k.shape
    top, bottom = same_padding(h, kh, stride) if padding == 'same' else (0, 0)
    left, right = same_padding(w, kw, stride) if padding == 'same' else (0, 0)
    padded = np.zeros((c_in, h + top + bottom, w + left + right))
    padded[:, top:top + h, left:left + w] = x

    out_h = (padded.shape[1] - kh) // stride + 1
    out_w = (padded.shape[2] - kw) // stride + 1
    out = np.zeros((c_out, out_h, out_w))
    for o in range(c_out):
        for i in range(out_h):
            for j in range(out_w):
                total = 0.0
                for c in range(c_in):
                    for a in range(kh):
                        for b in range(kw):
                            total += padded[c, i * stride + a, j * stride + b] * k[o, c, a, b]
                out[o, i, j] = total
    return out


class TestConv2d:
    def test_unit_1x1_kernel_is_identity(self, rng):
        x = rng.uniform(-1, 1, size=(1, 4, 5))
        out = ops.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))))
        np.testing.assert_array_equal(out.data, x)

    def test_hand_example(self):
        out = ops.conv2d(Tensor([[[1.0, 2.0], [3.0, 4.0]]]), Tensor([[[[1.0, 0.0], [0.0, 1.0]]]]))
        np.testing.assert_array_equal(out.data, [[[5.0]]])

    def test_zero_kernel(self, rng):
        out = ops.conv2d(Tensor(rng.uniform(-1, 1, size=(2, 5, 5))), Tensor(np.zeros((3, 2, 3, 3))), padding='same')
        assert out.shape == (3, 5, 5)
        assert not np.any(out.data)

    def test_same_padding_puts_the_odd_pixel_after(self):
        out = ops.conv2d(Tensor(np.ones((1, 2, 2))), Tensor(np.ones((1, 1, 2, 2))), padding='same')
        np.testing.assert_array_equal(out.data, [[[4.0, 2.0], [2.0, 1.0]]])

    def test_same_stride_2_output_extent(self, rng):
        out = ops.conv2d(Tensor(rng.uniform(size=(1, 5, 7))), Tensor(np.ones((1, 1, 3, 3))), stride=2, padding='same')
        assert out.shape == (1, 3, 4)

    def test_matches_nested_loops(self):
        rng = np.random.default_rng(2024)
        for _ in range(100):
            c_in, c_out = rng.integers(1, 4, size=2)
            h, w = rng.integers(1, 6, size=2)
            kh, kw = rng.integers(1, 4, size=2)
            stride = int(rng.integers(1, 3))
            padding = 'same' if rng.random() < 0.5 or kh > h or kw > w else 'valid'
            x = rng.uniform(-1, 1, size=(c_in, h, w))
            k = rng.uniform(-1, 1, size=(c_out, c_in, kh, kw))
            out = ops.conv2d(Tensor(x), Tensor(k), stride=stride, padding=padding)
            np.testing.assert_allclose(out.data, reference_conv(x, k, stride, padding), rtol=0, atol=1e-12)

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            ops.conv2d(Tensor(np.ones((2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))

    def test_kernel_larger_than_input(self):
        with pytest.raises(DimensionError):
            ops.conv2d(Tensor(np.ones((1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))))

    def test_bad_stride(self):
        with pytest.raises(ContractError):
            ops.conv2d(Tensor(np.ones((1, 4, 4))), Tensor(np.ones((1, 1, 3, 3))), stride=0)


class TestDepthwiseConv2d:
    def test_identity_kernels(self, rng):
        x = rng.uniform(-1, 1, size=(2, 4, 4))
        kernel = np.zeros((2, 3, 3))
        kernel[:, 1, 1] = 1.0
        out = ops.depthwise_conv2d(Tensor(x), Tensor(kernel), padding='same')
        np.testing.assert_array_equal(out.data, x)

    def test_matches_per_channel_loop(self, rng):
        x = rng.uniform(-1, 1, size=(2, 4, 4))
        k = rng.uniform(-1, 1, size=(2, 3, 3))
        out = ops.depthwise_conv2d(Tensor(x), Tensor(k))
        for c in range(2):
            expected = reference_conv(x[c:c + 1], k[c][None, None])
            np.testing.assert_allclose(out.data[c], expected[0], rtol=0, atol=1e-12)

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            ops.depthwise_conv2d(Tensor(np.ones((2, 4, 4))), Tensor(np.ones((3, 3, 3))))


class TestMatmul:
    def test_identity(self, rng):
        x = rng.uniform(-1, 1, size=(3, 2))
        np.testing.assert_array_equal(ops.matmul(Tensor(np.eye(3)), Tensor(x)).data, x)

    def test_hand_example(self):
        out = ops.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0], [6.0]]))
        np.testing.assert_array_equal(out.data, [[17.0], [39.0]])

    def test_zero_matrix(self, rng):
        out = ops.matmul(Tensor(np.zeros((2, 3))), Tensor(rng.uniform(size=(3, 4))))
        assert not np.any(out.data)

    def test_inner_mismatch(self):
        with pytest.raises(DimensionError):
            ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


class TestElementwise:
    def test_named_functions(self):
        x = Tensor([0.0])
        assert ops.elementwise(x, 'sigmoid').item() == 0.5
        assert ops.elementwise(x, 'tanh').item() == 0.0
        assert ops.elementwise(x, 'swish').item() == 0.0
        np.testing.assert_array_equal(ops.elementwise(Tensor([-1.0, 2.0]), 'relu').data, [0.0, 2.0])

    def test_per_channel_gate_broadcast(self):
        out = ops.elementwise(Tensor(np.ones((1, 2, 2))), 'mul', Tensor([2.0]))
        np.testing.assert_array_equal(out.data, np.full((1, 2, 2), 2.0))

    def test_binary_needs_second_operand(self):
        with pytest.raises(ContractError):
            ops.elementwise(Tensor([1.0]), 'add')

    def test_unknown_function(self):
        with pytest.raises(ContractError):
            ops.elementwise(Tensor([1.0]), 'softplus')

    def test_broadcast_failure(self):
        with pytest.raises(DimensionError):
            ops.add(Tensor(np.ones((2, 3))), Tensor(np.ones(2)))

    def test_sigmoid_saturates_without_overflow(self):
        out = ops.sigmoid(Tensor([-1000.0, 1000.0]))
        np.testing.assert_array_equal(out.data, [0.0, 1.0])

    def test_log_of_zero_is_a_numeric_error(self):
        with pytest.raises(NumericError):
            ops.log(Tensor([0.0]))

    def test_broadcast_gradient_is_summed_back(self):
        a = Tensor(np.ones((3, 4)), requires_grad=True)
        b = Tensor(np.ones(4), requires_grad=True)
        with Tape() as tape:
            loss = ops.sum(ops.mul(a, b))
        backward(tape, loss)
        np.testing.assert_array_equal(b.grad, np.full(4, 3.0))

    def test_clip_blocks_gradient_outside(self):
        x = Tensor([-2.0, 0.5, 2.0], requires_grad=True)
        with Tape() as tape:
            loss = ops.sum(ops.clip(x, -1.0, 1.0))
        backward(tape, loss)
        np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])


class TestGlobalAvgPool:
    def test_constant_map(self):
        np.testing.assert_array_equal(ops.global_avg_pool(Tensor(np.full((2, 3, 3), 1.5))).data, [1.5, 1.5])

    def test_hand_example(self):
        assert ops.global_avg_pool(Tensor([[[1.0, 3.0], [5.0, 7.0]]])).data[0] == 4.0

    def test_single_pixel(self):
        np.testing.assert_array_equal(ops.global_avg_pool(Tensor([[[2.5]], [[-1.0]]])).data, [2.5, -1.0])

    def test_rank(self):
        with pytest.raises(DimensionError):
            ops.global_avg_pool(Tensor(np.ones((2, 2))))


class TestShapeOps:
    def test_stack_heterogeneous(self):
        with pytest.raises(DimensionError):
            ops.stack([Tensor(np.ones(2)), Tensor(np.ones(3))])

    def test_reshape_mismatch(self):
        with pytest.raises(DimensionError):
            ops.reshape(Tensor(np.ones(6)), (4, 2))

    def test_concat_and_flip(self):
        out = ops.flip(ops.concat([Tensor([[1.0], [2.0]]), Tensor([[3.0], [4.0]])], axis=1), axis=0)
        np.testing.assert_array_equal(out.data, [[2.0, 4.0], [1.0, 3.0]])

    def test_index_gradient(self):
        x = Tensor(np.ones((3, 2)), requires_grad=True)
        with Tape() as tape:
            loss = ops.sum(ops.index(x, 1))
        backward(tape, loss)
        np.testing.assert_array_equal(x.grad, [[0.0, 0.0], [1.0, 1.0], [0.0, 0.0]])
