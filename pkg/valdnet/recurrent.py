"""LSTM and GRU cells, sequence runners and the bidirectional wrapper.

Per gate g a cell reads `<prefix>.<g>.W` [hidden, input], `<prefix>.<g>.U` [hidden, hidden]
and `<prefix>.<g>.b` [hidden]. LSTM gates are f, i, o, c; GRU gates are z, r, h.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import ops
from .errors import ContractError, DimensionError
from .tensor import Tensor
from .types.shared import CellType
from .weights import WeightStore, fan_in_uniform

logger = logging.getLogger(__name__)


@dataclass
class RecurrentState:
    h: Tensor
    c: Tensor | None = None

    @classmethod
    def zeros(cls, hidden: int, with_cell: bool) -> "RecurrentState":
        return cls(h=Tensor(np.zeros(hidden)), c=Tensor(np.zeros(hidden)) if with_cell else None)


def _column(x: Tensor) -> Tensor:
    return ops.reshape(x, (x.shape[0], 1))


def _pre_activation(x: Tensor, h: Tensor, w: WeightStore, gate: str, recurrent_input: Tensor | None = None) -> Tensor:
    # W_g x + U_g h + b_g, with an optional replacement for the recurrent operand
    hidden = w[f"{gate}.b"].shape[0]
    wx = ops.matmul(w[f"{gate}.W"], _column(x))
    uh = ops.matmul(w[f"{gate}.U"], _column(h if recurrent_input is None else recurrent_input))
    return ops.add(ops.reshape(ops.add(wx, uh), (hidden,)), w[f"{gate}.b"])


class _Prefixed:
    """View of a weight store under a name prefix"""

    def __init__(self, store: WeightStore, prefix: str):
        self.store = store
        self.prefix = prefix

    def __getitem__(self, name: str) -> Tensor:
        return self.store[f"{self.prefix}.{name}"]


def _check_step(x: Tensor, state: RecurrentState, w: _Prefixed, gate: str):
    W = w[f"{gate}.W"]
    if x.shape != (W.shape[1],):
        raise DimensionError(f"{w.prefix}: input of shape {list(x.shape)} doesn't match W {list(W.shape)}")
    if state.h.shape != (W.shape[0],):
        raise DimensionError(f"{w.prefix}: hidden state of shape {list(state.h.shape)} doesn't match W {list(W.shape)}")


def lstm_step(x: Tensor, state: RecurrentState, weights: WeightStore, prefix: str) -> RecurrentState:
    w = _Prefixed(weights, prefix)
    _check_step(x, state, w, "f")
    if state.c is None or state.c.shape != state.h.shape:
        raise DimensionError(f"{prefix}: LSTM state needs a cell vector shaped like h")

    f = ops.sigmoid(_pre_activation(x, state.h, w, "f"))
    i = ops.sigmoid(_pre_activation(x, state.h, w, "i"))
    o = ops.sigmoid(_pre_activation(x, state.h, w, "o"))
    candidate = ops.tanh(_pre_activation(x, state.h, w, "c"))

    c = ops.add(ops.mul(f, state.c), ops.mul(i, candidate))
    h = ops.mul(o, ops.tanh(c))
    return RecurrentState(h=h, c=c)


def gru_step(x: Tensor, state: RecurrentState, weights: WeightStore, prefix: str) -> RecurrentState:
    w = _Prefixed(weights, prefix)
    _check_step(x, state, w, "z")

    z = ops.sigmoid(_pre_activation(x, state.h, w, "z"))
    r = ops.sigmoid(_pre_activation(x, state.h, w, "r"))
    candidate = ops.tanh(_pre_activation(x, state.h, w, "h", recurrent_input=ops.mul(r, state.h)))

    h = ops.add(ops.mul(ops.sub(1.0, z), state.h), ops.mul(z, candidate))
    return RecurrentState(h=h)


@dataclass
class CellSpec:
    step: Callable[[Tensor, RecurrentState, WeightStore, str], RecurrentState]
    gates: tuple[str, ...]
    has_cell_state: bool


CELLS: dict[str, CellSpec] = {
    "lstm": CellSpec(lstm_step, ("f", "i", "o", "c"), True),
    "gru": CellSpec(gru_step, ("z", "r", "h"), False),
}


def cell_spec(cell: CellType) -> CellSpec:
    try:
        return CELLS[cell]
    except KeyError:
        raise ContractError(f"Unknown recurrent cell {cell!r}, expected one of {sorted(CELLS)}") from None


def init_recurrent_weights(
    cell: CellType,
    input_size: int,
    hidden: int,
    prefix: str,
    rng: np.random.Generator,
) -> WeightStore:
    store = WeightStore()
    for gate in cell_spec(cell).gates:
        store[f"{prefix}.{gate}.W"] = Tensor(fan_in_uniform(rng, (hidden, input_size), input_size))
        store[f"{prefix}.{gate}.U"] = Tensor(fan_in_uniform(rng, (hidden, hidden), hidden))
        store[f"{prefix}.{gate}.b"] = Tensor(np.zeros(hidden))
    return store


def _rows(xs: Tensor | Sequence[Tensor]) -> list[Tensor]:
    if isinstance(xs, Tensor):
        if xs.ndim != 2:
            raise DimensionError(f"Sequence must be [T, input], got {list(xs.shape)}")
        return [ops.index(xs, t) for t in range(xs.shape[0])]
    if not len(xs):
        raise DimensionError("Sequence must hold at least one step")
    return list(xs)


def run_sequence(xs: Tensor | Sequence[Tensor], weights: WeightStore, cell: CellType, prefix: str) -> Tensor:
    """Run a cell over the sequence from a zero state; row t of the result is h_t"""
    spec = cell_spec(cell)
    rows = _rows(xs)
    state = RecurrentState.zeros(weights[f"{prefix}.{spec.gates[0]}.b"].shape[0], spec.has_cell_state)

    outputs = []
    for x in rows:
        state = spec.step(x, state, weights, prefix)
        outputs.append(state.h)
    return ops.stack(outputs)


def bidirectional(
    xs: Tensor,
    weights: WeightStore,
    cell: CellType,
    fwd_prefix: str = "rnn.fwd",
    bwd_prefix: str = "rnn.bwd",
) -> Tensor:
    """Row t is [forward h_t, backward h at position T-1-t of the reversed pass]"""
    if xs.ndim != 2:
        raise DimensionError(f"Sequence must be [T, input], got {list(xs.shape)}")
    forward = run_sequence(xs, weights, cell, fwd_prefix)
    backward = run_sequence(ops.flip(xs, axis=0), weights, cell, bwd_prefix)
    return ops.concat([forward, ops.flip(backward, axis=0)], axis=1)
