"""Differentiable operators over `Tensor`.

Binary operators follow numpy broadcasting; their backward passes sum the gradient back
down to each operand's shape.
"""
from typing import Literal, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import ContractError, DimensionError
from .tensor import Function, Tensor, as_tensor

Padding = Literal['valid', 'same']


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def broadcast_shape(a: np.ndarray, b: np.ndarray, name: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{name}: cannot broadcast {list(a.shape)} with {list(b.shape)}") from None


def padding_amounts(size: int, kernel: int, stride: int, padding: Padding) -> tuple[int, int]:
    """Zero padding before/after one spatial axis.

    "same" pads symmetrically and puts the odd pixel after (bottom/right).
    """
    if padding == 'valid':
        return 0, 0
    if padding == 'same':
        out = -(-size // stride)
        total = max((out - 1) * stride + kernel - size, 0)
        return total // 2, total - total // 2
    raise ContractError(f"Unknown padding {padding!r}, expected 'valid' or 'same'")


def output_extent(size: int, kernel: int, stride: int, padding: Padding) -> int:
    before, after = padding_amounts(size, kernel, stride, padding)
    return (size + before + after - kernel) // stride + 1


def _check_stride(stride: int):
    if int(stride) != stride or stride < 1:
        raise ContractError(f"stride must be an integer >= 1, got {stride}")


def _pad_windows(x: np.ndarray, kh: int, kw: int, stride: int, padding: Padding):
    pt, pb = padding_amounts(x.shape[1], kh, stride, padding)
    pl, pr = padding_amounts(x.shape[2], kw, stride, padding)
    if kh > x.shape[1] + pt + pb or kw > x.shape[2] + pl + pr:
        raise DimensionError(
            f"kernel {kh}x{kw} is larger than the padded input {x.shape[1] + pt + pb}x{x.shape[2] + pl + pr}")
    padded = np.pad(x, ((0, 0), (pt, pb), (pl, pr)))
    windows = sliding_window_view(padded, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    return padded.shape, (pt, pl), windows


def _scatter_windows(grad_windows, padded_shape, offset, out_hw, stride, in_hw):
    # Adds each kernel tap's contribution back onto the padded input, then crops the padding
    kh, kw = grad_windows.shape[-2:]
    oh, ow = out_hw
    padded = np.zeros(padded_shape)
    for i in range(kh):
        for j in range(kw):
            padded[:, i:i + stride * (oh - 1) + 1:stride, j:j + stride * (ow - 1) + 1:stride] += grad_windows[..., i, j]
    return padded[:, offset[0]:offset[0] + in_hw[0], offset[1]:offset[1] + in_hw[1]]


class Conv2d(Function):
    name = "conv2d"

    def __init__(self, stride: int = 1, padding: Padding = 'valid'):
        self.stride = stride
        self.padding = padding

    def forward(self, x, kernel):
        if x.ndim != 3 or kernel.ndim != 4:
            raise DimensionError(f"conv2d expects [C,H,W] and [O,C,kH,kW], got {list(x.shape)} and {list(kernel.shape)}")
        if x.shape[0] != kernel.shape[1]:
            raise DimensionError(f"conv2d: input has {x.shape[0]} channels, kernel expects {kernel.shape[1]}")
        _check_stride(self.stride)

        self.padded_shape, self.offset, self.windows = _pad_windows(x, *kernel.shape[2:], self.stride, self.padding)
        self.kernel = kernel
        self.in_hw = x.shape[1:]
        # windows: [C, H', W', kH, kW]
        return np.tensordot(kernel, self.windows, axes=([1, 2, 3], [0, 3, 4]))

    def backward(self, grad):
        grad_kernel = np.tensordot(grad, self.windows, axes=([1, 2], [1, 2]))
        # [O,C,kH,kW] x [O,H',W'] -> [C,kH,kW,H',W'] -> [C,H',W',kH,kW]
        grad_windows = np.tensordot(self.kernel, grad, axes=([0], [0])).transpose(0, 3, 4, 1, 2)
        grad_x = _scatter_windows(grad_windows, self.padded_shape, self.offset, grad.shape[1:], self.stride, self.in_hw)
        return grad_x, grad_kernel


class DepthwiseConv2d(Function):
    name = "depthwise_conv2d"

    def __init__(self, stride: int = 1, padding: Padding = 'valid'):
        self.stride = stride
        self.padding = padding

    def forward(self, x, kernel):
        if x.ndim != 3 or kernel.ndim != 3:
            raise DimensionError(
                f"depthwise_conv2d expects [C,H,W] and [C,kH,kW], got {list(x.shape)} and {list(kernel.shape)}")
        if x.shape[0] != kernel.shape[0]:
            raise DimensionError(f"depthwise_conv2d: input has {x.shape[0]} channels, kernel has {kernel.shape[0]}")
        _check_stride(self.stride)

        self.padded_shape, self.offset, self.windows = _pad_windows(x, *kernel.shape[1:], self.stride, self.padding)
        self.kernel = kernel
        self.in_hw = x.shape[1:]
        return np.einsum('chwij,cij->chw', self.windows, kernel)

    def backward(self, grad):
        grad_kernel = np.einsum('chw,chwij->cij', grad, self.windows)
        grad_windows = grad[:, :, :, None, None] * self.kernel[:, None, None, :, :]
        grad_x = _scatter_windows(grad_windows, self.padded_shape, self.offset, grad.shape[1:], self.stride, self.in_hw)
        return grad_x, grad_kernel


class MatMul(Function):
    name = "matmul"

    def forward(self, a, b):
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul: cannot multiply {list(a.shape)} by {list(b.shape)}")
        self.a, self.b = a, b
        return a @ b

    def backward(self, grad):
        return grad @ self.b.T, self.a.T @ grad


class Add(Function):
    name = "add"

    def forward(self, a, b):
        broadcast_shape(a, b, self.name)
        self.shapes = a.shape, b.shape
        return a + b

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(grad, self.shapes[1])


class Sub(Function):
    name = "sub"

    def forward(self, a, b):
        broadcast_shape(a, b, self.name)
        self.shapes = a.shape, b.shape
        return a - b

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    name = "mul"

    def forward(self, a, b):
        broadcast_shape(a, b, self.name)
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return unbroadcast(grad * self.b, self.a.shape), unbroadcast(grad * self.a, self.b.shape)


class Scale(Function):
    name = "scale"

    def __init__(self, factor: float = 1.0):
        self.factor = float(factor)

    def forward(self, x):
        return x * self.factor

    def backward(self, grad):
        return (grad * self.factor,)


class Sigmoid(Function):
    name = "sigmoid"

    def forward(self, x):
        self.out = expit(x)
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


class Tanh(Function):
    name = "tanh"

    def forward(self, x):
        self.out = np.tanh(x)
        return self.out

    def backward(self, grad):
        return (grad * (1.0 - self.out * self.out),)


class Swish(Function):
    name = "swish"

    def forward(self, x):
        self.x = x
        self.gate = expit(x)
        return x * self.gate

    def backward(self, grad):
        return (grad * self.gate * (1.0 + self.x * (1.0 - self.gate)),)


class Relu(Function):
    name = "relu"

    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, 0.0)

    def backward(self, grad):
        return (grad * self.mask,)


class Log(Function):
    name = "log"

    def forward(self, x):
        self.x = x
        with np.errstate(divide='ignore', invalid='ignore'):
            return np.log(x)

    def backward(self, grad):
        return (grad / self.x,)


class Clip(Function):
    name = "clip"

    def __init__(self, low: float = -np.inf, high: float = np.inf):
        self.low, self.high = low, high

    def forward(self, x):
        self.mask = (x >= self.low) & (x <= self.high)
        return np.clip(x, self.low, self.high)

    def backward(self, grad):
        return (grad * self.mask,)


class Reshape(Function):
    name = "reshape"

    def __init__(self, shape: Sequence[int] = ()):
        self.shape = tuple(shape)

    def forward(self, x):
        self.in_shape = x.shape
        try:
            return x.reshape(self.shape)
        except ValueError:
            raise DimensionError(f"reshape: cannot view {list(x.shape)} as {list(self.shape)}") from None

    def backward(self, grad):
        return (grad.reshape(self.in_shape),)


class Concat(Function):
    name = "concat"

    def __init__(self, axis: int = 0):
        self.axis = axis

    def forward(self, *arrays):
        self.sizes = [a.shape[self.axis] for a in arrays]
        try:
            return np.concatenate(arrays, axis=self.axis)
        except ValueError:
            raise DimensionError(f"concat: incompatible shapes {[list(a.shape) for a in arrays]}") from None

    def backward(self, grad):
        return np.split(grad, np.cumsum(self.sizes)[:-1], axis=self.axis)


class Stack(Function):
    name = "stack"

    def __init__(self, axis: int = 0):
        self.axis = axis

    def forward(self, *arrays):
        if len({a.shape for a in arrays}) > 1:
            raise DimensionError(f"stack: heterogeneous shapes {[list(a.shape) for a in arrays]}")
        return np.stack(arrays, axis=self.axis)

    def backward(self, grad):
        return [np.take(grad, i, axis=self.axis) for i in range(grad.shape[self.axis])]


class Index(Function):
    name = "index"

    def __init__(self, index: int = 0):
        self.index = index

    def forward(self, x):
        self.in_shape = x.shape
        return x[self.index]

    def backward(self, grad):
        full = np.zeros(self.in_shape)
        full[self.index] = grad
        return (full,)


class Flip(Function):
    name = "flip"

    def __init__(self, axis: int = 0):
        self.axis = axis

    def forward(self, x):
        return np.flip(x, axis=self.axis)

    def backward(self, grad):
        return (np.flip(grad, axis=self.axis),)


class Sum(Function):
    name = "sum"

    def __init__(self, axis: int | None = None):
        self.axis = axis

    def forward(self, x):
        self.in_shape = x.shape
        return np.sum(x, axis=self.axis)

    def backward(self, grad):
        if self.axis is not None:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.in_shape).copy(),)


class Mean(Function):
    name = "mean"

    def __init__(self, axis: int | None = None):
        self.axis = axis

    def forward(self, x):
        self.in_shape = x.shape
        self.count = x.size if self.axis is None else x.shape[self.axis]
        return np.mean(x, axis=self.axis)

    def backward(self, grad):
        if self.axis is not None:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad / self.count, self.in_shape).copy(),)


class GlobalAvgPool(Function):
    name = "global_avg_pool"

    def forward(self, x):
        if x.ndim != 3:
            raise DimensionError(f"global_avg_pool expects [C,H,W], got {list(x.shape)}")
        self.in_shape = x.shape
        return x.mean(axis=(1, 2))

    def backward(self, grad):
        count = self.in_shape[1] * self.in_shape[2]
        return (np.broadcast_to((grad / count)[:, None, None], self.in_shape).copy(),)


def conv2d(input: Tensor, kernel: Tensor, stride: int = 1, padding: Padding = 'valid') -> Tensor:
    return Conv2d.apply(as_tensor(input), as_tensor(kernel), stride=stride, padding=padding)


def depthwise_conv2d(input: Tensor, kernel: Tensor, stride: int = 1, padding: Padding = 'valid') -> Tensor:
    return DepthwiseConv2d.apply(as_tensor(input), as_tensor(kernel), stride=stride, padding=padding)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return MatMul.apply(as_tensor(a), as_tensor(b))


def add(a: Tensor, b: Tensor) -> Tensor:
    return Add.apply(as_tensor(a), as_tensor(b))


def sub(a: Tensor, b: Tensor) -> Tensor:
    return Sub.apply(as_tensor(a), as_tensor(b))


def mul(a: Tensor, b: Tensor) -> Tensor:
    return Mul.apply(as_tensor(a), as_tensor(b))


def scale(x: Tensor, factor: float) -> Tensor:
    return Scale.apply(as_tensor(x), factor=factor)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(as_tensor(x))


def tanh(x: Tensor) -> Tensor:
    return Tanh.apply(as_tensor(x))


def swish(x: Tensor) -> Tensor:
    return Swish.apply(as_tensor(x))


def relu(x: Tensor) -> Tensor:
    return Relu.apply(as_tensor(x))


def log(x: Tensor) -> Tensor:
    return Log.apply(as_tensor(x))


def clip(x: Tensor, low: float, high: float) -> Tensor:
    return Clip.apply(as_tensor(x), low=low, high=high)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(as_tensor(x), shape=shape)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return Concat.apply(*(as_tensor(t) for t in tensors), axis=axis)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise DimensionError("stack: nothing to stack")
    return Stack.apply(*(as_tensor(t) for t in tensors), axis=axis)


def index(x: Tensor, i: int) -> Tensor:
    return Index.apply(as_tensor(x), index=i)


def flip(x: Tensor, axis: int = 0) -> Tensor:
    return Flip.apply(as_tensor(x), axis=axis)


def sum(x: Tensor, axis: int | None = None) -> Tensor:
    return Sum.apply(as_tensor(x), axis=axis)


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    return Mean.apply(as_tensor(x), axis=axis)


def global_avg_pool(input: Tensor) -> Tensor:
    return GlobalAvgPool.apply(as_tensor(input))


unary = {
    "sigmoid": sigmoid,
    "tanh": tanh,
    "swish": swish,
    "relu": relu,
}

binary = {
    "add": add,
    "sub": sub,
    "mul": mul,
}


def elementwise(input: Tensor, fn: str, other: Tensor | None = None) -> Tensor:
    if fn in unary:
        return unary[fn](input)
    if fn in binary:
        if other is None:
            raise ContractError(f"elementwise {fn!r} needs a second operand")
        return binary[fn](input, other)
    raise ContractError(f"Unknown elementwise function {fn!r}")
