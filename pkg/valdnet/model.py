"""ValdNet assembly: per-stream backbones, sum fusion, bidirectional RNN, temporal mean and the
fully connected sigmoid head.

Head weights are `head.<i>.W` [in, out] and `head.<i>.b` [out]; the recurrent layer reads
`rnn.fwd.*` and `rnn.bwd.*`.
"""
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import ops
from .backbone import init_backbone_weights, time_distributed
from .config import ModelConfig
from .errors import ContractError, DimensionError
from .loader import SampleTensors
from .recurrent import bidirectional, init_recurrent_weights
from .tensor import Tensor, as_tensor
from .weights import WeightStore, fan_in_uniform

logger = logging.getLogger(__name__)

PROBABILITY_FLOOR = 1e-7


def init_model_weights(config: ModelConfig, rng: np.random.Generator) -> WeightStore:
    """Every tensor the configured model reads, initialized in a fixed order from `rng`"""
    store = WeightStore()
    if 'rgb' in config.streams:
        store.update(init_backbone_weights(config.rgb, 'rgb', rng))
    if 'flow' in config.streams:
        store.update(init_backbone_weights(config.flow, 'flow', rng))

    for prefix in ("rnn.fwd", "rnn.bwd"):
        store.update(init_recurrent_weights(config.rnn_cell, config.feature_dim, config.rnn_hidden, prefix, rng))

    width = 2 * config.rnn_hidden
    for i, size in enumerate(config.fc_sizes):
        store[f"head.{i}.W"] = Tensor(fan_in_uniform(rng, (width, size), width))
        store[f"head.{i}.b"] = Tensor(np.zeros(size))
        width = size
    return store


def required_weight_names(config: ModelConfig) -> list[str]:
    return init_model_weights(config, np.random.default_rng(0)).names()


def fuse_sum(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"fuse_sum: stream features differ in shape, {list(a.shape)} vs {list(b.shape)}")
    return ops.add(a, b)


def _check_stream(name: str, inputs: Sequence[Tensor], expected: int):
    if len(inputs) != expected:
        raise DimensionError(f"valdnet_forward: {name} stream has {len(inputs)} inputs, the model samples {expected}")


def valdnet_forward(
    frames: Sequence[Tensor],
    flows: Sequence[Tensor],
    config: ModelConfig,
    weights: WeightStore,
) -> Tensor:
    """Probability that the clip is violent.

    Args:
        frames (Sequence[Tensor]): T frames of [3,S,S], ignored when the rgb stream is off
        flows (Sequence[Tensor]): T normalized flows of [2,S,S], ignored when the flow stream is off
        config (ModelConfig): Architecture
        weights (WeightStore): Named tensors, see `init_model_weights`

    Returns:
        Tensor: Scalar in (0, 1)
    """
    features = None
    if 'rgb' in config.streams:
        _check_stream("rgb", frames, config.frames)
        features = time_distributed(frames, config.rgb, weights, 'rgb')
    if 'flow' in config.streams:
        _check_stream("flow", flows, config.frames)
        motion = time_distributed(flows, config.flow, weights, 'flow')
        features = motion if features is None else fuse_sum(features, motion)

    sequence = bidirectional(features, weights, config.rnn_cell)
    x = ops.reshape(ops.mean(sequence, axis=0), (1, 2 * config.rnn_hidden))

    last = len(config.fc_sizes) - 1
    for i in range(len(config.fc_sizes)):
        x = ops.add(ops.matmul(x, weights[f"head.{i}.W"]), weights[f"head.{i}.b"])
        if i != last:
            x = ops.swish(x)
    return ops.reshape(ops.sigmoid(x), ())


def bce_loss(probability: Tensor | float, label: int) -> Tensor:
    """-(y ln p + (1 - y) ln(1 - p)) with p clamped to [1e-7, 1 - 1e-7]"""
    if label not in (0, 1):
        raise ContractError(f"bce_loss expects a 0/1 label, got {label!r}")
    p = ops.clip(as_tensor(probability), PROBABILITY_FLOOR, 1 - PROBABILITY_FLOOR)
    if label == 1:
        return ops.scale(ops.log(p), -1.0)
    return ops.scale(ops.log(ops.sub(1.0, p)), -1.0)


def variant_name(config: ModelConfig) -> str:
    return f"ValdNet{config.flow_offset} ({config.rnn_cell.upper()})"


def predicted_label(probability: float, threshold: float = 0.5) -> int:
    return int(probability >= threshold)


@dataclass
class Prediction:
    id: str
    probability: float
    label: int


def predict(sample: SampleTensors, weights: WeightStore, config: ModelConfig, threshold: float = 0.5) -> Prediction:
    probability = valdnet_forward(sample.frames, sample.flows, config, weights).item()
    logger.debug("Sample %s: p=%.6f", sample.id, probability)
    return Prediction(id=sample.id, probability=probability, label=predicted_label(probability, threshold))
