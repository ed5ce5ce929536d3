import numpy as np
import pytest

from valdnet import ops
from valdnet.errors import ContractError, DimensionError, NumericError
from valdnet.tensor import Tape, Tensor, backward, gradient_check, zero_grad


class TestTensor:
    def test_data_is_read_only(self):
        t = Tensor([1.0, 2.0])
        with pytest.raises(ValueError):
            t.data[0] = 5.0

    def test_source_array_is_not_aliased(self):
        source = np.array([1.0, 2.0])
        t = Tensor(source)
        source[0] = 9.0
        assert t.data[0] == 1.0

    def test_zero_extent_rejected(self):
        with pytest.raises(DimensionError):
            Tensor(np.zeros((2, 0)))

    @pytest.mark.parametrize("value", [np.nan, np.inf, -np.inf])
    def test_non_finite_rejected(self, value):
        with pytest.raises(NumericError):
            Tensor([1.0, value])

    def test_item_needs_single_element(self):
        assert Tensor([[3.5]]).item() == 3.5
        with pytest.raises(ContractError):
            Tensor([1.0, 2.0]).item()

    def test_values_are_float64(self):
        assert Tensor([1, 2, 3]).data.dtype == np.float64


class TestBackward:
    def test_sum_of_squares(self):
        x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
        with Tape() as tape:
            loss = ops.sum(ops.mul(x, x))
        backward(tape, loss)
        np.testing.assert_allclose(x.grad, [2.0, -4.0, 6.0])

    def test_sigmoid_slope_at_zero(self):
        w = Tensor(0.0, requires_grad=True)
        with Tape() as tape:
            loss = ops.sigmoid(ops.mul(w, 1.0))
        backward(tape, loss)
        assert float(w.grad) == pytest.approx(0.25)

    def test_gradient_reaches_shared_leaf_from_every_use(self):
        x = Tensor([2.0], requires_grad=True)
        with Tape() as tape:
            loss = ops.sum(ops.add(ops.mul(x, x), ops.scale(x, 3.0)))
        backward(tape, loss)
        np.testing.assert_allclose(x.grad, [7.0])

    def test_gradients_accumulate_until_cleared(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        for _ in range(2):
            with Tape() as tape:
                loss = ops.sum(ops.scale(x, 2.0))
            backward(tape, loss)
        np.testing.assert_allclose(x.grad, [4.0, 4.0])
        zero_grad([x])
        assert x.grad is None

    def test_leaves_without_requires_grad_get_nothing(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        c = Tensor([3.0, 4.0])
        with Tape() as tape:
            loss = ops.sum(ops.mul(x, c))
        backward(tape, loss)
        np.testing.assert_allclose(x.grad, [3.0, 4.0])
        assert c.grad is None

    def test_non_scalar_loss(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            y = ops.scale(x, 2.0)
        with pytest.raises(ContractError):
            backward(tape, y)

    def test_tape_is_consumed(self):
        x = Tensor([1.0], requires_grad=True)
        with Tape() as tape:
            loss = ops.sum(x)
        backward(tape, loss)
        with pytest.raises(ContractError):
            backward(tape, loss)

    def test_loss_from_another_tape(self):
        x = Tensor([1.0], requires_grad=True)
        with Tape():
            loss = ops.sum(x)
        with Tape() as other:
            ops.sum(ops.scale(x, 2.0))
        with pytest.raises(ContractError):
            backward(other, loss)

    def test_recording_needs_tape_and_grad(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        c = Tensor([1.0, 2.0])
        ops.sum(x)
        with Tape() as tape:
            ops.sum(c)
            assert len(tape) == 0
            ops.sum(x)
            assert len(tape) == 1

    def test_three_layer_composite_matches_finite_differences(self, rng):
        def graph(x, w1, w2, w3):
            h = ops.tanh(ops.matmul(x, w1))
            h = ops.swish(ops.matmul(h, w2))
            return ops.sum(ops.sigmoid(ops.matmul(h, w3)))

        inputs = [rng.uniform(-1, 1, size=shape) for shape in [(2, 3), (3, 4), (4, 3), (3, 1)]]
        assert gradient_check(graph, inputs) < 1e-6


class TestGradientCheck:
    def test_conv2d(self, rng):
        x = rng.uniform(-1, 1, size=(1, 4, 4))
        k = rng.uniform(-1, 1, size=(1, 1, 3, 3))
        w = Tensor(rng.uniform(0.5, 1.5, size=(1, 2, 2)))
        assert gradient_check(lambda a, b: ops.sum(ops.mul(ops.conv2d(a, b), w)), [x, k]) < 1e-6

    def test_matmul(self, rng):
        a, b = rng.uniform(-1, 1, size=(2, 2)), rng.uniform(-1, 1, size=(2, 2))
        assert gradient_check(lambda x, y: ops.sum(ops.matmul(x, y)), [a, b]) < 1e-6

    def test_constant_function_is_exactly_zero(self):
        assert gradient_check(lambda x: Tensor(3.0), [np.array([1.0, 2.0])]) == 0.0

    def test_non_finite_intermediate(self):
        with pytest.raises(NumericError):
            gradient_check(lambda x: ops.sum(ops.log(x)), [np.array([0.0, 1.0])])

    def test_non_finite_input(self):
        with pytest.raises(NumericError):
            gradient_check(lambda x: ops.sum(x), [np.array([np.nan])])

    def test_entry_sampling(self, rng):
        x = rng.uniform(-1, 1, size=(6, 6))
        assert gradient_check(lambda t: ops.sum(ops.tanh(t)), [x], max_entries=5, seed=3) < 1e-6

    def test_non_scalar_graph(self):
        with pytest.raises(ContractError):
            gradient_check(lambda x: ops.scale(x, 2.0), [np.array([1.0, 2.0])])


class TestDeterminism:
    def test_forward_is_bit_identical(self, rng):
        x = rng.uniform(-1, 1, size=(2, 6, 6))
        k = rng.uniform(-1, 1, size=(3, 2, 3, 3))
        first = ops.swish(ops.conv2d(Tensor(x), Tensor(k), stride=2, padding='same'))
        second = ops.swish(ops.conv2d(Tensor(x), Tensor(k), stride=2, padding='same'))
        np.testing.assert_array_equal(first.data, second.data)
