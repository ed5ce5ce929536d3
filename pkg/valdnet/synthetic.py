"""Synthetic two-class motion dataset.

Every clip shows one bright Gaussian blob on a flat background. Class 0 drifts slowly with a
constant velocity; class 1 follows the same kind of drift plus a large random jolt every frame.
Clip i of class 0 and clip i of class 1 share appearance, size, starting point and drift, so
a single frame says nothing about the label while the motion between frames does.
"""
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from .data import LABELS, Manifest, VideoSample, save_manifest, save_ppm
from .errors import ContractError, DataError
from .tensor import Tensor

logger = logging.getLogger(__name__)

# 80% of each class trains
TRAIN_NUMERATOR, TRAIN_DENOMINATOR = 4, 5
MIN_PER_CLASS = 5

BACKGROUND_RANGE = (0.1, 0.3)
BLOB_COLOR_RANGE = (0.6, 1.0)
# blob sigma as a fraction of the frame size
SIGMA_RANGE = (1 / 16, 1 / 10)
# drift speed in px/frame at 64x64, scaled with the frame size
SPEED_RANGE = (0.25, 0.75)
# per-frame jitter bound of class 1 as a fraction of the frame size
JITTER_RANGE = (0.10, 0.15)


def _reflect(position: np.ndarray, low: float, high: float) -> np.ndarray:
    span = high - low
    if span <= 0:
        return np.full_like(position, (low + high) / 2)
    folded = np.mod(position - low, 2 * span)
    return low + span - np.abs(folded - span)


def _render(size: int, centre: np.ndarray, sigma: float, background: float, color: np.ndarray) -> np.ndarray:
    rows, cols = np.mgrid[0:size, 0:size]
    blob = np.exp(-((cols - centre[0]) ** 2 + (rows - centre[1]) ** 2) / (2 * sigma ** 2))
    return background + (color[:, None, None] - background) * blob[None]


def _trajectory(rng: np.random.Generator, label: int, frames: int, size: int, margin: float) -> np.ndarray:
    low, high = margin, size - 1 - margin
    start = rng.uniform(low, high, size=2)
    angle = rng.uniform(0, 2 * np.pi)
    speed = rng.uniform(*SPEED_RANGE) * size / 64
    steps = np.arange(frames)[:, None]
    path = start + steps * speed * np.array([np.cos(angle), np.sin(angle)])

    if label == 1:
        bound = rng.uniform(*JITTER_RANGE) * size
        path = path + rng.uniform(-bound, bound, size=(frames, 2))
    return _reflect(path, low, high)


def render_clip(seed: int, label: int, index: int, frames: int = 24, size: int = 64) -> list[Tensor]:
    """Frames of one synthetic clip as [3,size,size] tensors quantized to 8 bits"""
    if label not in LABELS:
        raise ContractError(f"Synthetic label must be 0 or 1, got {label}")
    # Clip `index` of either class shares every draw up to the jitter
    rng = np.random.default_rng([seed, index])

    background = rng.uniform(*BACKGROUND_RANGE)
    color = rng.uniform(*BLOB_COLOR_RANGE, size=3)
    sigma = rng.uniform(*SIGMA_RANGE) * size
    path = _trajectory(rng, label, frames, size, margin=min(3 * sigma, (size - 1) / 2))

    clip = []
    for centre in path:
        image = _render(size, centre, sigma, background, color)
        clip.append(Tensor(np.rint(image * 255.0) / 255.0))
    return clip


def generate_synthetic(
    root: str | Path,
    seed: int,
    per_class: int,
    frames: int = 24,
    size: int = 64,
) -> Manifest:
    """Write `per_class` clips of each class under `root` plus an unsplit `manifest.json`

    Args:
        root (str | Path): Output directory; frames go to `frames/<id>/<nnn>.ppm`
        seed (int): Generation seed, the same seed gives byte-identical files
        per_class (int): Clips per label
        frames (int, optional): Frames per clip. Defaults to 24.
        size (int, optional): Frame width and height. Defaults to 64.

    Returns:
        Manifest: Samples interleaved by class, without split assignment
    """
    if per_class < 1:
        raise ContractError(f"per_class must be >= 1, got {per_class}")
    if frames < 1 or size < 1:
        raise ContractError(f"Synthetic clips need frames >= 1 and size >= 1, got {frames} and {size}")

    root = Path(root)
    manifest = Manifest(name=f"synthetic-{seed}", frame_size=size)
    for index in range(per_class):
        for label in LABELS:
            sample_id = f"c{label}_{index:04d}"
            folder = root / "frames" / sample_id
            folder.mkdir(parents=True, exist_ok=True)

            paths = []
            for t, image in enumerate(render_clip(seed, label, index, frames, size)):
                path = folder / f"{t:03d}.ppm"
                save_ppm(path, image)
                paths.append(path)
            manifest.samples.append(VideoSample(id=sample_id, label=label, frames=paths))

    logger.info("Generated %d synthetic clips (%d frames at %dx%d) in %s",
                len(manifest.samples), frames, size, size, root)
    save_manifest(manifest, root / "manifest.json")
    return manifest


def split_dataset(manifest: Manifest, seed: int) -> Manifest:
    """Stratified split: floor(80%) of each class goes to train, the rest to eval"""
    rng = np.random.default_rng(seed)
    splits: dict[str, str] = {}
    for label in LABELS:
        members = [sample.id for sample in manifest.samples if sample.label == label]
        if len(members) < MIN_PER_CLASS:
            raise DataError(f"Class {label} has {len(members)} samples, a split needs at least {MIN_PER_CLASS}")
        train_count = len(members) * TRAIN_NUMERATOR // TRAIN_DENOMINATOR
        for rank, position in enumerate(rng.permutation(len(members))):
            splits[members[position]] = 'train' if rank < train_count else 'eval'

    samples = [replace(sample, split=splits[sample.id]) for sample in manifest.samples]
    return replace(manifest, samples=samples)
