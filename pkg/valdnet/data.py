import json
import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO

import numpy as np
from scipy.ndimage import zoom

from .errors import ContractError, DataError, DimensionError, FormatError
from .tensor import Tensor
from .types.manifest import ManifestBuilder, ManifestDict, SampleBuilder
from .types.shared import SPLITS, Split

logger = logging.getLogger(__name__)

LABELS = (0, 1)

_PPM_HEADER = re.compile(rb"(P6)(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)\s")


def uniform_sample_indices(total_frames: int, count: int = 12) -> list[int]:
    """K frame indices spread evenly over [0, N-1], rounding half up.

    Videos shorter than K frames repeat indices, so the result always has K entries.
    """
    if count < 2:
        raise ContractError(f"Need at least 2 sampled frames, got {count}")
    if total_frames < 1:
        raise ContractError(f"Video has no frames (total_frames={total_frames})")

    span, steps = total_frames - 1, count - 1
    # floor(i * span / steps + 1/2) in integer arithmetic
    return [(2 * i * span + steps) // (2 * steps) for i in range(count)]


def flow_pair_indices(sampled_index: int, offset: int, total_frames: int) -> tuple[int, int]:
    if not 0 <= sampled_index < total_frames:
        raise ContractError(f"Frame index {sampled_index} is outside a {total_frames}-frame video")
    if offset < 1:
        raise ContractError(f"Flow offset must be >= 1, got {offset}")
    return sampled_index, min(sampled_index + offset, total_frames - 1)


def load_ppm(payload: bytes) -> Tensor:
    """Decode a binary P6 image (maxval 255) into a [3,H,W] tensor in [0,1]"""
    if not payload.startswith(b"P6"):
        raise FormatError(f"Not a binary PPM (magic {payload[:2]!r})")
    header = _PPM_HEADER.match(payload)
    if header is None:
        raise FormatError("PPM header is truncated or malformed")

    width, height, maxval = (int(group) for group in header.groups()[1:])
    if maxval != 255:
        raise FormatError(f"Only 8-bit PPM is supported, maxval is {maxval}")
    if width == 0 or height == 0:
        raise FormatError(f"PPM declares a {width}x{height} image")

    start, size = header.end(), 3 * width * height
    pixels = payload[start:start + size]
    if len(pixels) < size:
        raise FormatError(f"PPM pixel data truncated: {len(pixels)} of {size} bytes")
    if len(payload) > start + size:
        raise FormatError(f"PPM has {len(payload) - start - size} trailing bytes")

    rgb = np.frombuffer(pixels, dtype=np.uint8).reshape(height, width, 3)
    return Tensor(rgb.transpose(2, 0, 1) / 255.0)


def write_ppm(image: Tensor) -> bytes:
    array = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float64)
    if array.ndim != 3 or array.shape[0] != 3:
        raise DimensionError(f"write_ppm expects a [3,H,W] image, got {list(array.shape)}")
    _, height, width = array.shape
    pixels = np.clip(np.rint(array * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    return f"P6\n{width} {height}\n255\n".encode("ascii") + pixels.tobytes()


def read_ppm(path: str | Path) -> Tensor:
    try:
        return load_ppm(Path(path).read_bytes())
    except FormatError as e:
        raise FormatError(f"{path}: {e}") from e


def save_ppm(path: str | Path, image: Tensor):
    Path(path).write_bytes(write_ppm(image))


def resize_frame(image: Tensor, size: int) -> Tensor:
    """Bilinear resize of a [C,H,W] frame to [C,size,size]"""
    if image.ndim != 3:
        raise DimensionError(f"resize_frame expects [C,H,W], got {list(image.shape)}")
    _, height, width = image.shape
    if (height, width) == (size, size):
        return image
    resized = zoom(image.data, (1, size / height, size / width), order=1)
    return Tensor(resized)


@dataclass
class VideoSample:
    id: str
    label: int
    frames: list[Path]
    flows: list[Path] | None = None
    split: Split | None = None

    def __post_init__(self):
        if not self.frames:
            raise DataError(f"Sample {self.id!r} has no frames")
        if self.label not in LABELS:
            raise DataError(f"Sample {self.id!r} has label {self.label!r}, expected 0 or 1")
        if self.split is not None and self.split not in SPLITS:
            raise DataError(f"Sample {self.id!r} has split {self.split!r}, expected one of {SPLITS}")
        if self.flows is not None and len(self.flows) != len(self.frames):
            raise DataError(f"Sample {self.id!r} lists {len(self.flows)} flows for {len(self.frames)} frames")


@dataclass
class Manifest:
    name: str
    frame_size: int
    samples: list[VideoSample] = field(default_factory=list)
    flow_offset: int | None = None

    def labels(self) -> list[int]:
        return [sample.label for sample in self.samples]


def samples_in_split(manifest: Manifest, split: Split) -> list[VideoSample]:
    return [sample for sample in manifest.samples if sample.split == split]


def _relative(path: Path, root: Path) -> str:
    return Path(os.path.relpath(path, root)).as_posix()


class ManifestFile():
    """JSON manifest; frame and flow paths are stored relative to the manifest's directory"""

    @classmethod
    def serialize(cls, manifest: Manifest, root: str | Path) -> str:
        root = Path(root)
        data = ManifestBuilder(manifest.name, manifest.frame_size)
        for sample in manifest.samples:
            builder = SampleBuilder(sample.id, sample.label)
            for frame in sample.frames:
                builder.add_frame(_relative(frame, root))
            for flow in sample.flows or []:
                builder.add_flow(_relative(flow, root))
            data.add_sample(builder.build(split=sample.split))

        return json.dumps(data.build(flow_offset=manifest.flow_offset), indent=4)

    @classmethod
    def deserialize(cls, file: IO[str] | str, root: str | Path) -> Manifest:
        root = Path(root)
        try:
            data: ManifestDict = json.loads(file) if isinstance(file, str) else json.load(file)
        except json.JSONDecodeError as e:
            raise FormatError(f"Manifest is not valid JSON: {e}") from e

        try:
            samples = [
                VideoSample(
                    id=str(sample["id"]),
                    label=sample["label"],
                    frames=[root / frame for frame in sample["frames"]],
                    flows=[root / flow for flow in sample["flows"]] if "flows" in sample else None,
                    split=sample.get("split"),
                )
                for sample in data["samples"]
            ]
            return Manifest(
                name=data["name"],
                frame_size=int(data["frame_size"]),
                samples=samples,
                flow_offset=data.get("flow_offset"),
            )
        except (KeyError, TypeError) as e:
            raise FormatError(f"Manifest is missing or mistypes a field: {e}") from e
        except DataError as e:
            raise FormatError(f"Manifest holds an invalid sample: {e}") from e


def load_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    with open(path) as f:
        manifest = ManifestFile.deserialize(f, path.parent)
    logger.debug("Loaded manifest %r with %d samples", manifest.name, len(manifest.samples))
    return manifest


def save_manifest(manifest: Manifest, path: str | Path):
    path = Path(path)
    path.write_text(ManifestFile.serialize(manifest, path.parent))
    logger.info("Wrote manifest %s (%d samples)", path, len(manifest.samples))
