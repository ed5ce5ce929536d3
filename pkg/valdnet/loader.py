"""Turn manifest samples into network-ready tensors.

Frames are decoded, resized to the network input size and sampled uniformly; the flow stream
is read from precomputed `.flo` files or estimated on the fly, depending on the flow source.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence, TypeVar

from .config import ModelConfig
from .data import Manifest, VideoSample, flow_pair_indices, read_ppm, resize_frame, uniform_sample_indices
from .errors import DataError
from .flow import FlowField, estimate_flow, load_flo, normalize_for_network, save_flo
from .tensor import Tensor
from .utility import data_workers

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


@dataclass
class SampleTensors:
    id: str
    label: int
    frames: list[Tensor]
    flows: list[Tensor]


class FrameCache:
    """Decoded and resized frames of one sample, read at most once each"""

    def __init__(self, sample: VideoSample, size: int):
        self.sample = sample
        self.size = size
        self.frames: dict[int, Tensor] = {}

    def __len__(self):
        return len(self.sample.frames)

    def __getitem__(self, index: int) -> Tensor:
        if index not in self.frames:
            self.frames[index] = resize_frame(read_ppm(self.sample.frames[index]), self.size)
        return self.frames[index]


class FlowSource:
    """Where the flow of frame t against its partner comes from"""

    def get_flow(self, frames: FrameCache, index: int, partner: int) -> FlowField:
        raise NotImplementedError()


class EstimatedFlowSource(FlowSource):
    def __init__(self, alpha: float = 15.0, iterations: int = 100):
        self.alpha = alpha
        self.iterations = iterations

    def get_flow(self, frames, index, partner):
        if index == partner:
            first = frames[index]
            return FlowField.zeros(first.shape[1], first.shape[2])
        return estimate_flow(frames[index], frames[partner], alpha=self.alpha, iterations=self.iterations)


class FileFlowSource(FlowSource):
    """Precomputed flow; `flows[i]` of a sample is frame i against its offset partner"""

    def get_flow(self, frames, index, partner):
        sample = frames.sample
        if not sample.flows:
            raise DataError(f"Sample {sample.id!r} lists no precomputed flow")
        field = load_flo(sample.flows[index])
        if (field.height, field.width) != (frames.size, frames.size):
            raise DataError(f"{sample.flows[index]} is {field.width}x{field.height}, "
                            f"the network expects {frames.size}x{frames.size}")
        return field


def flow_source_for(manifest: Manifest, offset: int, alpha: float = 15.0, iterations: int = 100) -> FlowSource:
    """Use the manifest's `.flo` files when they were made at this offset, else estimate"""
    has_files = bool(manifest.samples) and all(sample.flows for sample in manifest.samples)
    if has_files and manifest.flow_offset == offset:
        return FileFlowSource()
    if has_files:
        logger.warning("Manifest flow was computed at offset %s, recomputing at offset %d",
                       manifest.flow_offset, offset)
    return EstimatedFlowSource(alpha=alpha, iterations=iterations)


def load_sample(sample: VideoSample, config: ModelConfig, source: FlowSource) -> SampleTensors:
    frames = FrameCache(sample, config.input_size)
    indices = uniform_sample_indices(len(frames), config.frames)

    rgb = [frames[t] for t in indices] if 'rgb' in config.streams else []
    flows = []
    if 'flow' in config.streams:
        for t in indices:
            index, partner = flow_pair_indices(t, config.flow_offset, len(frames))
            flows.append(normalize_for_network(source.get_flow(frames, index, partner)))

    logger.debug("Loaded sample %s (%d frames, indices %s)", sample.id, len(frames), indices)
    return SampleTensors(id=sample.id, label=sample.label, frames=rgb, flows=flows)


def ordered_map(fn: Callable[[T], R], items: Iterable[T], workers: int | None = None) -> list[R]:
    """Map over a thread pool; results come back in input order"""
    items = list(items)
    workers = workers or data_workers()
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def load_samples(
    samples: Sequence[VideoSample],
    config: ModelConfig,
    source: FlowSource,
    workers: int | None = None,
) -> list[SampleTensors]:
    return ordered_map(lambda sample: load_sample(sample, config, source), samples, workers)


def precompute_flows(
    manifest: Manifest,
    root: str | Path,
    offset: int,
    size: int,
    alpha: float = 15.0,
    iterations: int = 100,
    workers: int | None = None,
) -> Manifest:
    """Estimate the flow of every frame against its offset partner and write `flows/<id>/<nnn>.flo`

    Returns:
        Manifest: Copy of the manifest pointing at the new files, with `flow_offset` set
    """
    root = Path(root)
    source = EstimatedFlowSource(alpha=alpha, iterations=iterations)

    def compute(sample: VideoSample) -> VideoSample:
        frames = FrameCache(sample, size)
        folder = root / "flows" / sample.id
        folder.mkdir(parents=True, exist_ok=True)
        paths = []
        for t in range(len(frames)):
            index, partner = flow_pair_indices(t, offset, len(frames))
            path = folder / f"{t:03d}.flo"
            save_flo(path, source.get_flow(frames, index, partner))
            paths.append(path)
        return replace(sample, flows=paths)

    samples = ordered_map(compute, manifest.samples, workers)
    logger.info("Wrote flow at offset %d for %d samples under %s", offset, len(samples), root / "flows")
    return replace(manifest, samples=samples, flow_offset=offset)
