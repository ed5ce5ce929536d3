"""Baseline probes that check what carries the label in a dataset: single-frame appearance or motion."""
import logging

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from .data import Manifest, VideoSample, flow_pair_indices, samples_in_split, uniform_sample_indices
from .errors import DataError
from .loader import EstimatedFlowSource, FrameCache, ordered_map

logger = logging.getLogger(__name__)


def _split_pair(manifest: Manifest) -> tuple[list[VideoSample], list[VideoSample]]:
    train, held_out = samples_in_split(manifest, 'train'), samples_in_split(manifest, 'eval')
    if not train or not held_out:
        raise DataError(f"Manifest {manifest.name!r} needs both train and eval samples for a probe")
    return train, held_out


def _labels(samples: list[VideoSample]) -> np.ndarray:
    return np.array([sample.label for sample in samples], dtype=np.float64)


def _fit_logistic(features: np.ndarray, labels: np.ndarray, l2: float) -> np.ndarray:
    design = np.hstack([features, np.ones((len(features), 1))])

    def objective(w: np.ndarray):
        p = np.clip(expit(design @ w), 1e-12, 1 - 1e-12)
        loss = -np.mean(labels * np.log(p) + (1 - labels) * np.log(1 - p)) + 0.5 * l2 * w[:-1] @ w[:-1]
        grad = design.T @ (p - labels) / len(labels)
        grad[:-1] += l2 * w[:-1]
        return loss, grad

    result = minimize(objective, np.zeros(design.shape[1]), jac=True, method='L-BFGS-B')
    return result.x


def pixel_probe_accuracy(manifest: Manifest, size: int = 16, seed: int = 0, l2: float = 1e-3) -> float:
    """Eval accuracy of logistic regression on the pixels of one random frame per clip"""
    train, held_out = _split_pair(manifest)
    rng = np.random.default_rng(seed)

    def pixels(samples: list[VideoSample]) -> np.ndarray:
        choices = [int(rng.integers(len(sample.frames))) for sample in samples]
        frames = ordered_map(lambda pair: FrameCache(pair[0], size)[pair[1]].data.ravel(), zip(samples, choices))
        return np.stack(frames)

    weights = _fit_logistic(pixels(train), _labels(train), l2)
    design = np.hstack([pixels(held_out), np.ones((len(held_out), 1))])
    predictions = (expit(design @ weights) >= 0.5).astype(np.float64)
    accuracy = float(np.mean(predictions == _labels(held_out)))
    logger.info("Pixel probe accuracy: %.3f", accuracy)
    return accuracy


def mean_flow_magnitude(sample: VideoSample, size: int, offset: int, frames: int = 12) -> float:
    cache = FrameCache(sample, size)
    source = EstimatedFlowSource()
    magnitudes = []
    for t in uniform_sample_indices(len(cache), frames):
        index, partner = flow_pair_indices(t, offset, len(cache))
        magnitudes.append(float(np.mean(source.get_flow(cache, index, partner).magnitude())))
    return float(np.mean(magnitudes))


def best_threshold(values: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """Threshold (and its accuracy) that best separates labels by `value >= threshold -> 1`"""
    ordered = np.sort(np.unique(values))
    candidates = np.concatenate([[ordered[0]], (ordered[1:] + ordered[:-1]) / 2, [ordered[-1] + 1.0]])
    accuracies = [np.mean((values >= c) == (labels == 1)) for c in candidates]
    best = int(np.argmax(accuracies))
    return float(candidates[best]), float(accuracies[best])


def flow_threshold_accuracy(manifest: Manifest, size: int = 16, offset: int = 1) -> float:
    """Eval accuracy of a scalar threshold on mean flow magnitude fitted on the train split"""
    train, held_out = _split_pair(manifest)

    def magnitudes(samples: list[VideoSample]) -> np.ndarray:
        return np.array(ordered_map(lambda sample: mean_flow_magnitude(sample, size, offset), samples))

    threshold, train_accuracy = best_threshold(magnitudes(train), _labels(train))
    accuracy = float(np.mean((magnitudes(held_out) >= threshold) == (_labels(held_out) == 1)))
    logger.info("Flow threshold %.4f: train accuracy %.3f, eval accuracy %.3f", threshold, train_accuracy, accuracy)
    return accuracy
