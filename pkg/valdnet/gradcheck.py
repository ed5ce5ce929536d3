"""Finite-difference verification of every differentiable operator and of the graphs built from them.

Single operators must agree to 1e-6, backbone and recurrent graphs to 1e-4 and the end-to-end
micro model to 1e-3 (relative error, see `tensor.gradient_check`).
"""
import logging
from dataclasses import dataclass, replace
from typing import Callable, Literal

import numpy as np

from . import ops
from .backbone import init_backbone_weights, mbconv_forward, squeeze_excite, backbone_forward
from .config import BackboneConfig, ModelConfig
from .flow import FlowField, cost_volume, warp
from .model import bce_loss, init_model_weights, valdnet_forward
from .recurrent import bidirectional, init_recurrent_weights, run_sequence
from .tensor import Tensor, gradient_check
from .weights import WeightStore

logger = logging.getLogger(__name__)

Tier = Literal['op', 'composite', 'model']

TOLERANCES: dict[str, float] = {
    'op': 1e-6,
    'composite': 1e-4,
    'model': 1e-3,
}

Graph = Callable[..., Tensor]
Builder = Callable[[np.random.Generator], tuple[Graph, list[np.ndarray]]]


@dataclass
class GradCase:
    name: str
    tier: Tier
    build: Builder
    max_entries: int | None = None


@dataclass
class GradResult:
    name: str
    tier: Tier
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.error < self.tolerance


CASES: list[GradCase] = []


def case(name: str, tier: Tier, max_entries: int | None = None):
    def register(build: Builder) -> Builder:
        CASES.append(GradCase(name, tier, build, max_entries))
        return build
    return register


def _fixed_weights(rng: np.random.Generator, shape) -> Tensor:
    return Tensor(rng.uniform(0.5, 1.5, size=shape))


def _op(fn: Callable[..., Tensor], *shapes, low: float = -2.0, high: float = 2.0) -> Builder:
    """Graph sum(fn(*inputs) * w) over inputs drawn uniformly from [low, high]"""
    def build(rng):
        inputs = [rng.uniform(low, high, size=shape) for shape in shapes]
        probe = fn(*[Tensor(x) for x in inputs])
        w = _fixed_weights(rng, probe.shape)
        return (lambda *xs: ops.sum(ops.mul(fn(*xs), w))), inputs
    return build


def _store_graph(store: WeightStore, fn: Callable[[WeightStore], Tensor]) -> tuple[Graph, list[np.ndarray]]:
    names = store.names()

    def graph(*tensors: Tensor) -> Tensor:
        return fn(WeightStore(dict(zip(names, tensors))))
    return graph, [store[name].data for name in names]


def _perturbed(store: WeightStore, rng: np.random.Generator) -> WeightStore:
    """Move scales off 1 and biases off 0 so their gradients are exercised"""
    return WeightStore({name: Tensor(t.data + rng.uniform(-0.2, 0.2, size=t.shape)) for name, t in store.items()})


case("conv2d valid", 'op')(_op(lambda x, k: ops.conv2d(x, k), (2, 5, 5), (3, 2, 3, 3)))
case("conv2d same stride 2", 'op')(_op(lambda x, k: ops.conv2d(x, k, stride=2, padding='same'), (2, 6, 5), (3, 2, 3, 3)))
case("conv2d 1x1", 'op')(_op(lambda x, k: ops.conv2d(x, k), (3, 4, 4), (2, 3, 1, 1)))
case("depthwise valid", 'op')(_op(lambda x, k: ops.depthwise_conv2d(x, k), (2, 5, 5), (2, 3, 3)))
case("depthwise same stride 2", 'op')(
    _op(lambda x, k: ops.depthwise_conv2d(x, k, stride=2, padding='same'), (3, 5, 6), (3, 3, 3)))
case("matmul", 'op')(_op(ops.matmul, (3, 4), (4, 2)))
case("add broadcast", 'op')(_op(ops.add, (3, 4), (4,)))
case("sub broadcast", 'op')(_op(ops.sub, (2, 3, 1), (3, 4)))
case("mul broadcast", 'op')(_op(ops.mul, (3, 4), (3, 1)))
case("scale", 'op')(_op(lambda x: ops.scale(x, -1.7), (3, 4)))
case("sigmoid", 'op')(_op(ops.sigmoid, (3, 4), low=-4, high=4))
case("tanh", 'op')(_op(ops.tanh, (3, 4)))
case("swish", 'op')(_op(ops.swish, (3, 4), low=-4, high=4))
case("relu", 'op')(_op(ops.relu, (3, 4), low=0.1, high=2.0))
case("log", 'op')(_op(ops.log, (3, 4), low=0.5, high=3.0))
case("clip interior", 'op')(_op(lambda x: ops.clip(x, -5.0, 5.0), (3, 4)))
case("reshape", 'op')(_op(lambda x: ops.reshape(x, (2, 6)), (3, 4)))
case("concat", 'op')(_op(lambda a, b: ops.concat([a, b], axis=1), (3, 2), (3, 4)))
case("stack", 'op')(_op(lambda a, b: ops.stack([a, b], axis=0), (3, 4), (3, 4)))
case("index", 'op')(_op(lambda x: ops.index(x, 1), (3, 4)))
case("flip", 'op')(_op(lambda x: ops.flip(x, axis=1), (3, 4)))
case("sum axis", 'op')(_op(lambda x: ops.sum(x, axis=0), (3, 4)))
case("mean axis", 'op')(_op(lambda x: ops.mean(x, axis=1), (3, 4)))
case("global_avg_pool", 'op')(_op(ops.global_avg_pool, (3, 4, 5)))
case("cost_volume", 'op')(_op(lambda a, b: cost_volume(a, b, 1), (2, 4, 4), (2, 4, 4)))


@case("warp", 'op')
def _warp_case(rng):
    flow = FlowField(rng.uniform(-1.5, 1.5, size=(4, 5)), rng.uniform(-1.5, 1.5, size=(4, 5)))
    w = _fixed_weights(rng, (2, 4, 5))
    return (lambda image: ops.sum(ops.mul(warp(image, flow), w))), [rng.uniform(0, 1, size=(2, 4, 5))]


@case("bce", 'op')
def _bce_case(rng):
    return (lambda p: ops.add(bce_loss(p, 1), bce_loss(p, 0))), [np.array(rng.uniform(0.2, 0.8))]


@case("squeeze_excite", 'composite')
def _se_case(rng):
    store = WeightStore()
    store["se.reduce.W"] = Tensor(rng.uniform(-1, 1, size=(4, 2)))
    store["se.reduce.b"] = Tensor(rng.uniform(0.1, 0.3, size=2))
    store["se.expand.W"] = Tensor(rng.uniform(-1, 1, size=(2, 4)))
    store["se.expand.b"] = Tensor(rng.uniform(-0.2, 0.2, size=4))
    store["x"] = Tensor(rng.uniform(-1, 1, size=(4, 3, 3)))
    w = _fixed_weights(rng, (4, 3, 3))
    return _store_graph(store, lambda s: ops.sum(ops.mul(squeeze_excite(s["x"], s, "se"), w)))


def _tiny_backbone() -> BackboneConfig:
    return BackboneConfig(input_channels=2, input_size=8, stem_filters=4,
                          stages=[[1, 4, 1, 1], [2, 6, 2, 1]], se_reduction_ratio=2, feature_dim=4)


@case("mbconv with skip", 'composite', max_entries=6)
def _mbconv_case(rng):
    config = _tiny_backbone()
    store = _perturbed(init_backbone_weights(config, "b", rng), rng)
    block = WeightStore({name: t for name, t in store.items() if name.startswith("b.0.0.")})
    block["x"] = Tensor(rng.uniform(-1, 1, size=(4, 4, 4)))
    w = _fixed_weights(rng, (4, 4, 4))
    return _store_graph(block, lambda s: ops.sum(ops.mul(mbconv_forward(s["x"], s, "b.0.0", 1, 1), w)))


@case("backbone", 'composite')
def _backbone_case(rng):
    config = replace(_tiny_backbone(), input_size=16)
    store = _perturbed(init_backbone_weights(config, "flow", rng), rng)
    frame = rng.uniform(-1, 1, size=(2, 16, 16))
    w = _fixed_weights(rng, (config.feature_dim,))
    return _store_graph(store, lambda s: ops.sum(ops.mul(backbone_forward(Tensor(frame), config, s, "flow"), w)))


def _sequence_case(cell: str, both_directions: bool) -> Builder:
    def build(rng):
        store = WeightStore()
        store.update(init_recurrent_weights(cell, 3, 2, "rnn.fwd", rng))
        store.update(init_recurrent_weights(cell, 3, 2, "rnn.bwd", rng))
        store = _perturbed(store, rng)
        store["xs"] = Tensor(rng.uniform(-1, 1, size=(4, 3)))
        width = 4 if both_directions else 2
        w = _fixed_weights(rng, (4, width))

        def graph(s: WeightStore) -> Tensor:
            out = bidirectional(s["xs"], s, cell) if both_directions else run_sequence(s["xs"], s, cell, "rnn.fwd")
            return ops.sum(ops.mul(out, w))
        return _store_graph(store, graph)
    return build


for _cell in ("lstm", "gru"):
    case(f"{_cell} sequence", 'composite')(_sequence_case(_cell, False))
    case(f"{_cell} bidirectional", 'composite')(_sequence_case(_cell, True))


def micro_check_config(cell: str = 'gru') -> ModelConfig:
    return ModelConfig.micro(frames=2, rnn_cell=cell)


def _model_case(cell: str) -> Builder:
    def build(rng):
        config = micro_check_config(cell)
        store = _perturbed(init_model_weights(config, rng), rng)
        frames = [Tensor(rng.uniform(0, 1, size=(3, 16, 16))) for _ in range(config.frames)]
        flows = [Tensor(rng.uniform(-1, 1, size=(2, 16, 16))) for _ in range(config.frames)]
        return _store_graph(store, lambda s: bce_loss(valdnet_forward(frames, flows, config, s), 1))
    return build


case("valdnet micro gru", 'model', max_entries=2)(_model_case('gru'))
case("valdnet micro lstm", 'model', max_entries=2)(_model_case('lstm'))


def run_suite(seed: int = 0, tiers: tuple[Tier, ...] | None = None) -> list[GradResult]:
    results = []
    for index, grad_case in enumerate(CASES):
        if tiers is not None and grad_case.tier not in tiers:
            continue
        rng = np.random.default_rng([seed, index])
        graph, inputs = grad_case.build(rng)
        error = gradient_check(graph, inputs, max_entries=grad_case.max_entries, seed=seed)
        result = GradResult(grad_case.name, grad_case.tier, error, TOLERANCES[grad_case.tier])
        logger.log(logging.INFO if result.passed else logging.ERROR, "%-28s %-9s %.3e (< %.0e) %s",
                   result.name, result.tier, result.error, result.tolerance, "ok" if result.passed else "FAILED")
        results.append(result)
    return results
