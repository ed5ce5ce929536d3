import csv
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import ops
from .config import ModelConfig, TrainConfig, config_to_dict
from .data import Manifest, samples_in_split
from .errors import DataError, DimensionError
from .loader import FlowSource, SampleTensors, flow_source_for, load_samples
from .model import bce_loss, init_model_weights, predicted_label, required_weight_names, valdnet_forward, variant_name
from .tensor import Tape, backward
from .types.metrics import METRICS_HEADER, MetricsRowBuilder, MetricsRowDict
from .types.shared import CELL_TYPES, Split
from .weights import WeightStore

logger = logging.getLogger(__name__)

WEIGHTS_FILE = "weights.vldw"
METRICS_FILE = "metrics.csv"
CONFIG_FILE = "config.json"
VARIANTS_FILE = "variants.csv"
VARIANTS_HEADER = ['variant', 'cell', 'offset', 'eval_acc', 'eval_loss']
FLOW_OFFSETS = (1, 2, 3)


def rmsprop_step(
    param: np.ndarray,
    grad: np.ndarray,
    accumulator: np.ndarray,
    lr: float = 0.001,
    rho: float = 0.9,
    eps: float = 1e-7,
) -> tuple[np.ndarray, np.ndarray]:
    """One RMSprop update; returns the new parameter and accumulator"""
    if not (param.shape == grad.shape == accumulator.shape):
        raise DimensionError(f"rmsprop_step: shapes differ, param {list(param.shape)}, "
                             f"grad {list(grad.shape)}, accumulator {list(accumulator.shape)}")
    accumulator = rho * accumulator + (1 - rho) * grad ** 2
    return param - lr * grad / (np.sqrt(accumulator) + eps), accumulator


class RMSprop:
    """Keeps one squared-gradient accumulator per named parameter"""
    accumulators: dict[str, np.ndarray]

    def __init__(self, learning_rate: float = 0.001, rho: float = 0.9, epsilon: float = 1e-7):
        self.learning_rate = learning_rate
        self.rho = rho
        self.epsilon = epsilon
        self.accumulators = {}

    def step(self, weights: WeightStore) -> WeightStore:
        """Fresh trainable store with every parameter that received a gradient moved one step"""
        updated = WeightStore()
        for name, tensor in weights.items():
            if tensor.grad is None:
                updated[name] = tensor
                continue
            accumulator = self.accumulators.get(name, np.zeros_like(tensor.data))
            value, self.accumulators[name] = rmsprop_step(
                tensor.data, tensor.grad, accumulator, self.learning_rate, self.rho, self.epsilon)
            updated[name] = value
        return updated.trainable()


@dataclass
class Evaluation:
    loss: float
    accuracy: float
    probabilities: list[float] = field(default_factory=list)


def evaluate_tensors(
    samples: Sequence[SampleTensors],
    weights: WeightStore,
    config: ModelConfig,
    threshold: float = 0.5,
) -> Evaluation:
    if not samples:
        raise DataError("Cannot evaluate an empty split")
    losses, correct, probabilities = [], 0, []
    for sample in samples:
        p = valdnet_forward(sample.frames, sample.flows, config, weights)
        losses.append(bce_loss(p, sample.label).item())
        probabilities.append(p.item())
        correct += predicted_label(p.item(), threshold) == sample.label
    return Evaluation(loss=float(np.mean(losses)), accuracy=correct / len(samples), probabilities=probabilities)


def _split_tensors(
    manifest: Manifest,
    split: Split,
    config: ModelConfig,
    source: FlowSource,
    workers: int | None,
) -> list[SampleTensors]:
    samples = samples_in_split(manifest, split)
    if not samples:
        raise DataError(f"Manifest {manifest.name!r} has no {split} samples")
    return load_samples(samples, config, source, workers)


def evaluate(
    manifest: Manifest,
    weights: WeightStore,
    config: ModelConfig,
    threshold: float = 0.5,
    split: Split = 'eval',
    workers: int | None = None,
) -> Evaluation:
    """Loss and accuracy of the weights on one split of the manifest; p >= threshold counts as violent"""
    weights.require(required_weight_names(config))
    source = flow_source_for(manifest, config.flow_offset)
    return evaluate_tensors(_split_tensors(manifest, split, config, source, workers), weights, config, threshold)


@dataclass
class TrainResult:
    weights: WeightStore
    metrics: list[MetricsRowDict]


def write_metrics(path: str | Path, rows: Sequence[MetricsRowDict]):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for row in rows:
            writer.writerow([row["epoch"]] + [f"{row[key]:.6f}" for key in METRICS_HEADER[1:]])


def train(
    manifest: Manifest,
    model_config: ModelConfig,
    train_config: TrainConfig,
    out_dir: str | Path | None = None,
    workers: int | None = None,
) -> TrainResult:
    """Train ValdNet on the manifest's train split, evaluating on its eval split after every epoch.

    Evaluation uses the weights at single precision, which is exactly what the weight file holds.
    With `out_dir`, the final weights, the metrics CSV and the resolved config are written there.

    Args:
        manifest (Manifest): Samples with split assignment
        model_config (ModelConfig): Architecture
        train_config (TrainConfig): Optimizer, schedule and seed
        out_dir (str | Path | None, optional): Directory for weights.vldw, metrics.csv and config.json
        workers (int | None, optional): Data-loading threads. Defaults to VALDNET_THREADS or the CPU count.

    Returns:
        TrainResult: Final single-precision weights and one metrics row per epoch
    """
    rng = np.random.default_rng(train_config.seed)
    weights = init_model_weights(model_config, rng).trainable()

    source = flow_source_for(manifest, model_config.flow_offset)
    train_data = _split_tensors(manifest, 'train', model_config, source, workers)
    eval_data = _split_tensors(manifest, 'eval', model_config, source, workers)
    logger.info("Training %s on %d samples, evaluating on %d", variant_name(model_config),
                len(train_data), len(eval_data))

    optimizer = RMSprop(train_config.learning_rate, train_config.rho, train_config.epsilon)
    metrics: list[MetricsRowDict] = []
    for epoch in range(1, train_config.epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(len(train_data))
        losses, correct = [], 0

        for start in range(0, len(order), train_config.batch_size):
            batch = [train_data[i] for i in order[start:start + train_config.batch_size]]
            with Tape() as tape:
                batch_losses = []
                for sample in batch:
                    p = valdnet_forward(sample.frames, sample.flows, model_config, weights)
                    batch_losses.append(bce_loss(p, sample.label))
                    correct += predicted_label(p.item(), train_config.threshold) == sample.label
                loss = ops.mean(ops.stack(batch_losses))
            backward(tape, loss)
            weights = optimizer.step(weights)
            losses.extend(item.item() for item in batch_losses)
            logger.debug("epoch %d batch %d: loss %.6f", epoch, start // train_config.batch_size, loss.item())

        evaluation = evaluate_tensors(eval_data, weights.quantized(), model_config, train_config.threshold)
        seconds = time.perf_counter() - started if train_config.record_wall_time else 0.0
        row = MetricsRowBuilder(epoch) \
            .add_train(float(np.mean(losses)), correct / len(train_data)) \
            .add_eval(evaluation.loss, evaluation.accuracy) \
            .build(seconds)
        metrics.append(row)
        logger.info("epoch %d/%d: train loss %.4f acc %.3f, eval loss %.4f acc %.3f",
                    epoch, train_config.epochs, row["train_loss"], row["train_acc"],
                    row["eval_loss"], row["eval_acc"])

    result = TrainResult(weights=weights.quantized(), metrics=metrics)
    if out_dir is not None:
        save_training(result, model_config, train_config, out_dir)
    return result


def save_training(result: TrainResult, model_config: ModelConfig, train_config: TrainConfig, out_dir: str | Path):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result.weights.save(out_dir / WEIGHTS_FILE)
    write_metrics(out_dir / METRICS_FILE, result.metrics)
    (out_dir / CONFIG_FILE).write_text(json.dumps(config_to_dict(model_config, train_config), indent=4))


@dataclass
class VariantResult:
    name: str
    cell: str
    offset: int
    eval_accuracy: float
    eval_loss: float


def variant_slug(config: ModelConfig) -> str:
    return f"valdnet{config.flow_offset}_{config.rnn_cell}"


def run_variants(
    manifest: Manifest,
    model_config: ModelConfig,
    train_config: TrainConfig,
    out_dir: str | Path,
    workers: int | None = None,
) -> list[VariantResult]:
    """Train every flow offset with every cell; each variant gets its own subdirectory and
    the final eval scores go to `variants.csv`
    """
    out_dir = Path(out_dir)
    results = []
    for offset in FLOW_OFFSETS:
        for cell in CELL_TYPES:
            config = replace(model_config, flow_offset=offset, rnn_cell=cell)
            result = train(manifest, config, train_config, out_dir / variant_slug(config), workers)
            final = result.metrics[-1]
            results.append(VariantResult(variant_name(config), cell, offset, final["eval_acc"], final["eval_loss"]))

    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / VARIANTS_FILE, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(VARIANTS_HEADER)
        for r in results:
            writer.writerow([r.name, r.cell, r.offset, f"{r.eval_accuracy:.6f}", f"{r.eval_loss:.6f}"])
    logger.info("Wrote %s", out_dir / VARIANTS_FILE)
    return results
