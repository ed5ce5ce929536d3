import logging
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

logger = logging.getLogger(__name__)

_active_tape: ContextVar["Tape | None"] = ContextVar("valdnet_active_tape", default=None)


def check_finite(array: np.ndarray, where: str):
    if not np.all(np.isfinite(array)):
        raise NumericError(f"{where}: produced a non-finite value")


class Tensor:
    """Dense n-dimensional array of 64-bit floats.

    The data buffer is read-only once the tensor exists. Only `grad` changes after creation,
    and only through `backward` or `zero_grad`.
    """
    data: np.ndarray
    requires_grad: bool
    grad: np.ndarray | None
    name: str | None

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        array = np.array(data, dtype=np.float64)
        if array.ndim > 0 and 0 in array.shape:
            raise DimensionError(f"Tensor extents must be positive, got {array.shape}")
        check_finite(array, "Tensor")
        self._set_data(array)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @classmethod
    def wrap(cls, array: np.ndarray, requires_grad: bool = False) -> "Tensor":
        """Adopt an array produced by an operator without copying it"""
        tensor = cls.__new__(cls)
        tensor._set_data(np.asarray(array, dtype=np.float64))
        tensor.requires_grad = requires_grad
        tensor.grad = None
        tensor.name = None
        return tensor

    def _set_data(self, array: np.ndarray):
        if array.flags.writeable and array.base is None:
            array.flags.writeable = False
        elif array.flags.writeable:
            array = array.copy()
            array.flags.writeable = False
        self.data = array

    @staticmethod
    def zeros(shape: Sequence[int], requires_grad: bool = False) -> "Tensor":
        return Tensor(np.zeros(shape), requires_grad=requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor.wrap(self.data)

    def __repr__(self):
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={list(self.shape)}, requires_grad={self.requires_grad}{label})"


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class Function:
    """A differentiable operation.

    Subclasses implement `forward` on raw arrays, keeping whatever activations their
    `backward` needs on `self`, and `backward`, which maps the output gradient to one
    gradient per input (or None where an input needs none).
    """
    name = "function"

    def forward(self, *arrays: np.ndarray) -> np.ndarray:
        raise NotImplementedError()

    def backward(self, grad: np.ndarray) -> Sequence[np.ndarray | None]:
        raise NotImplementedError()

    @classmethod
    def apply(cls, *tensors: Tensor, **kwargs) -> Tensor:
        fn = cls(**kwargs)
        out_data = fn.forward(*(t.data for t in tensors))
        check_finite(out_data, cls.name)
        requires_grad = any(t.requires_grad for t in tensors)
        out = Tensor.wrap(out_data, requires_grad=requires_grad)

        tape = _active_tape.get()
        if tape is not None and requires_grad:
            tape.record(fn, tensors, out)
        return out


@dataclass
class TapeNode:
    function: Function
    inputs: tuple[Tensor, ...]
    output: Tensor


class Tape:
    """Ordered record of the operations run while the tape is active.

    Nodes are appended as operators execute, so the list is topologically sorted by
    construction.
    """
    nodes: list[TapeNode]
    consumed: bool

    def __init__(self):
        self.nodes = []
        self.consumed = False
        self._token = None

    def __enter__(self):
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc):
        _active_tape.reset(self._token)
        self._token = None
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, function: Function, inputs: tuple[Tensor, ...], output: Tensor):
        if self.consumed:
            raise ContractError("Cannot record onto a consumed tape")
        self.nodes.append(TapeNode(function, inputs, output))


def backward(tape: Tape, loss: Tensor):
    """Propagate d(loss)/d(x) into the grad buffer of every leaf tensor that requires gradients.

    Gradients accumulate into existing buffers. The tape is consumed.

    Args:
        tape (Tape): Tape the loss was computed on
        loss (Tensor): Single-element tensor

    Raises:
        ContractError: If the loss isn't scalar, isn't on the tape, or the tape was already used
        NumericError: If a gradient becomes non-finite
    """
    if loss.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if tape.consumed:
        raise ContractError("Tape has already been consumed by a previous backward()")

    produced = {id(node.output) for node in tape.nodes}
    if id(loss) not in produced:
        raise ContractError("Loss was not computed on this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}

    for node in reversed(tape.nodes):
        out_grad = grads.pop(id(node.output), None)
        if out_grad is None:
            continue

        input_grads = node.function.backward(out_grad)
        for tensor, grad in zip(node.inputs, input_grads):
            if grad is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + grad
            else:
                grads[key] = grad
            if key not in produced:
                leaves[key] = tensor

    for key, tensor in leaves.items():
        grad = grads[key]
        check_finite(grad, f"gradient of {tensor.name or 'tensor'}")
        tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad

    logger.debug("backward: %d nodes, %d leaves", len(tape.nodes), len(leaves))
    tape.nodes.clear()
    tape.consumed = True


def zero_grad(tensors: Iterable[Tensor]):
    for tensor in tensors:
        tensor.grad = None


def gradient_check(
    op_graph: Callable[..., Tensor],
    inputs: Sequence,
    eps: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
) -> float:
    """Compare tape gradients against central finite differences.

    Args:
        op_graph (Callable[..., Tensor]): Builds a scalar from the given tensors
        inputs (Sequence): Arrays or tensors the graph is differentiated against
        eps (float, optional): Finite-difference step. Defaults to 1e-5.
        max_entries (int | None, optional): Check at most this many entries per input, drawn with `seed`.
            Defaults to checking every entry.
        seed (int, optional): Seed for entry sampling. Defaults to 0.

    Returns:
        float: Max over checked entries of |analytic - numeric| / max(1e-8, |analytic| + |numeric|)
    """
    arrays = [np.array(as_tensor(x).data, dtype=np.float64) for x in inputs]
    for array in arrays:
        check_finite(array, "gradient_check input")

    params = [Tensor(array, requires_grad=True) for array in arrays]
    with Tape() as tape:
        out = op_graph(*params)
    if out.size != 1:
        raise ContractError(f"gradient_check needs a scalar graph, got shape {out.shape}")
    if any(node.output is out for node in tape.nodes):
        backward(tape, out)

    def evaluate(k: int, perturbed: np.ndarray) -> float:
        args = [Tensor.wrap(perturbed) if j == k else Tensor.wrap(array) for j, array in enumerate(arrays)]
        try:
            return op_graph(*args).item()
        except NumericError as e:
            raise NumericError(f"gradient_check: non-finite intermediate ({e})") from e

    rng = np.random.default_rng(seed)
    worst = 0.0
    for k, (array, param) in enumerate(zip(arrays, params)):
        analytic = param.grad if param.grad is not None else np.zeros_like(array)
        indices = np.arange(array.size)
        if max_entries is not None and array.size > max_entries:
            indices = np.sort(rng.choice(array.size, size=max_entries, replace=False))

        for index in indices:
            plus = array.copy()
            plus.flat[index] += eps
            minus = array.copy()
            minus.flat[index] -= eps
            numeric = (evaluate(k, plus) - evaluate(k, minus)) / (2 * eps)
            exact = float(analytic.flat[index])
            error = abs(exact - numeric) / max(1e-8, abs(exact) + abs(numeric))
            worst = max(worst, error)

    return worst
