"""Scaled-down EfficientNet-style feature extractor.

Weight names under a stream prefix (`rgb` or `flow`):

    <prefix>.stem.{kernel,scale,bias}
    <prefix>.<stage>.<block>.expand.{kernel,scale,bias}      (only when expansion_ratio > 1)
    <prefix>.<stage>.<block>.depthwise.{kernel,scale,bias}
    <prefix>.<stage>.<block>.se.reduce.{W,b}
    <prefix>.<stage>.<block>.se.expand.{W,b}
    <prefix>.<stage>.<block>.project.{kernel,scale,bias}
    <prefix>.top.{kernel,scale,bias}
"""
import logging
from typing import Iterator, Sequence

import numpy as np

from . import ops
from .config import BackboneConfig
from .errors import DimensionError
from .tensor import Tensor
from .weights import WeightStore, fan_in_uniform

logger = logging.getLogger(__name__)

STEM_KERNEL = 3
STEM_STRIDE = 2


def squeezed_channels(expanded: int, reduction: int) -> int:
    return max(1, expanded // reduction)


def iter_blocks(config: BackboneConfig) -> Iterator[tuple[str, int, int, int, int]]:
    """Yield (name, in_channels, out_channels, expansion, stride) for every MBConv block in order"""
    channels = config.stem_filters
    for stage_index, (expansion, out_channels, stride, repeats) in enumerate(config.stages):
        for block_index in range(repeats):
            yield (
                f"{stage_index}.{block_index}",
                channels,
                out_channels,
                expansion,
                stride if block_index == 0 else 1,
            )
            channels = out_channels


def output_spatial_size(config: BackboneConfig) -> int:
    size = ops.output_extent(config.input_size, STEM_KERNEL, STEM_STRIDE, 'same')
    for _, _, _, _, stride in iter_blocks(config):
        size = ops.output_extent(size, config.kernel_size, stride, 'same')
    return size


def _init_affine(store: WeightStore, name: str, channels: int):
    store[f"{name}.scale"] = Tensor(np.ones(channels))
    store[f"{name}.bias"] = Tensor(np.zeros(channels))


def init_backbone_weights(config: BackboneConfig, prefix: str, rng: np.random.Generator) -> WeightStore:
    """Create every backbone tensor with fan-in scaled uniform init; scales start at 1 and biases at 0"""
    store = WeightStore()
    k = config.kernel_size

    store[f"{prefix}.stem.kernel"] = Tensor(fan_in_uniform(
        rng, (config.stem_filters, config.input_channels, STEM_KERNEL, STEM_KERNEL),
        config.input_channels * STEM_KERNEL * STEM_KERNEL))
    _init_affine(store, f"{prefix}.stem", config.stem_filters)

    channels = config.stem_filters
    for name, in_channels, out_channels, expansion, _ in iter_blocks(config):
        block = f"{prefix}.{name}"
        expanded = in_channels * expansion
        if expansion != 1:
            store[f"{block}.expand.kernel"] = Tensor(
                fan_in_uniform(rng, (expanded, in_channels, 1, 1), in_channels))
            _init_affine(store, f"{block}.expand", expanded)

        store[f"{block}.depthwise.kernel"] = Tensor(fan_in_uniform(rng, (expanded, k, k), k * k))
        _init_affine(store, f"{block}.depthwise", expanded)

        squeezed = squeezed_channels(expanded, config.se_reduction_ratio)
        store[f"{block}.se.reduce.W"] = Tensor(fan_in_uniform(rng, (expanded, squeezed), expanded))
        store[f"{block}.se.reduce.b"] = Tensor(np.zeros(squeezed))
        store[f"{block}.se.expand.W"] = Tensor(fan_in_uniform(rng, (squeezed, expanded), squeezed))
        store[f"{block}.se.expand.b"] = Tensor(np.zeros(expanded))

        store[f"{block}.project.kernel"] = Tensor(
            fan_in_uniform(rng, (out_channels, expanded, 1, 1), expanded))
        _init_affine(store, f"{block}.project", out_channels)
        channels = out_channels

    store[f"{prefix}.top.kernel"] = Tensor(fan_in_uniform(rng, (config.feature_dim, channels, 1, 1), channels))
    _init_affine(store, f"{prefix}.top", config.feature_dim)
    return store


def _affine(x: Tensor, weights: WeightStore, name: str) -> Tensor:
    channels = x.shape[0]
    x = ops.mul(x, ops.reshape(weights[f"{name}.scale"], (channels, 1, 1)))
    return ops.add(x, ops.reshape(weights[f"{name}.bias"], (channels, 1, 1)))


def conv_unit(x: Tensor, weights: WeightStore, name: str, stride: int = 1, activate: bool = True) -> Tensor:
    x = ops.conv2d(x, weights[f"{name}.kernel"], stride=stride, padding='same')
    x = _affine(x, weights, name)
    return ops.swish(x) if activate else x


def depthwise_unit(x: Tensor, weights: WeightStore, name: str, stride: int = 1) -> Tensor:
    x = ops.depthwise_conv2d(x, weights[f"{name}.kernel"], stride=stride, padding='same')
    return ops.swish(_affine(x, weights, name))


def squeeze_excite(features: Tensor, weights: WeightStore, prefix: str) -> Tensor:
    """Gate every channel by sigmoid(FC2(relu(FC1(global_avg_pool(features)))))

    Args:
        features (Tensor): [C, H, W] feature map
        weights (WeightStore): Holds `<prefix>.reduce.{W,b}` (C -> C/r) and `<prefix>.expand.{W,b}` (C/r -> C)
        prefix (str): Name prefix of the block's squeeze-excitation tensors

    Returns:
        Tensor: [C, H, W] features scaled per channel by a gate in (0, 1)
    """
    channels = features.shape[0]
    reduce_w = weights[f"{prefix}.reduce.W"]
    if features.ndim != 3 or reduce_w.shape[0] != channels:
        raise DimensionError(
            f"squeeze_excite: features {list(features.shape)} don't match reduction weights {list(reduce_w.shape)}")

    pooled = ops.reshape(ops.global_avg_pool(features), (1, channels))
    hidden = ops.relu(ops.add(ops.matmul(pooled, reduce_w), weights[f"{prefix}.reduce.b"]))
    gate = ops.sigmoid(ops.add(ops.matmul(hidden, weights[f"{prefix}.expand.W"]), weights[f"{prefix}.expand.b"]))
    return ops.mul(features, ops.reshape(gate, (channels, 1, 1)))


def mbconv_forward(input: Tensor, weights: WeightStore, prefix: str, expansion: int, stride: int) -> Tensor:
    """Inverted bottleneck: 1x1 expand, depthwise, squeeze-excite, linear 1x1 project.

    The input is added back when the block keeps both stride 1 and the channel count.
    """
    x = input
    if expansion != 1:
        x = conv_unit(x, weights, f"{prefix}.expand")
    x = depthwise_unit(x, weights, f"{prefix}.depthwise", stride=stride)
    x = squeeze_excite(x, weights, f"{prefix}.se")
    x = conv_unit(x, weights, f"{prefix}.project", activate=False)

    if stride == 1 and x.shape[0] == input.shape[0]:
        x = ops.add(x, input)
    return x


def backbone_forward(frame: Tensor, config: BackboneConfig, weights: WeightStore, prefix: str) -> Tensor:
    expected = (config.input_channels, config.input_size, config.input_size)
    if frame.shape != expected:
        raise DimensionError(f"{prefix} backbone expects a {list(expected)} frame, got {list(frame.shape)}")

    x = conv_unit(frame, weights, f"{prefix}.stem", stride=STEM_STRIDE)
    for name, _, _, expansion, stride in iter_blocks(config):
        x = mbconv_forward(x, weights, f"{prefix}.{name}", expansion, stride)
    x = conv_unit(x, weights, f"{prefix}.top")
    return ops.global_avg_pool(x)


def time_distributed(frames: Sequence[Tensor], config: BackboneConfig, weights: WeightStore, prefix: str) -> Tensor:
    """Run the same backbone on every frame independently; row t holds frame t's features"""
    if not len(frames):
        raise DimensionError("time_distributed needs at least one frame")
    shapes = {tuple(frame.shape) for frame in frames}
    if len(shapes) > 1:
        raise DimensionError(f"time_distributed: heterogeneous frame shapes {sorted(shapes)}")

    return ops.stack([backbone_forward(frame, config, weights, prefix) for frame in frames])
