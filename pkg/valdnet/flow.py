"""Optical flow: a Horn–Schunck estimator, bilinear warping, the correlation cost volume and
Middlebury `.flo` interchange for flow computed elsewhere.
"""
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import convolve

from .errors import ContractError, DimensionError, FormatError, NumericError
from .tensor import Function, Tensor, as_tensor

logger = logging.getLogger(__name__)

FLO_MAGIC = 202021.25
FLO_HEADER = struct.Struct("<fii")

# Max |displacement| in pixels kept when flow is handed to the network
NETWORK_FLOW_RANGE = 8.0

LUMINANCE = np.array([0.299, 0.587, 0.114])

NEIGHBOUR_AVERAGE = np.array([
    [1 / 12, 1 / 6, 1 / 12],
    [1 / 6, 0.0, 1 / 6],
    [1 / 12, 1 / 6, 1 / 12],
])


@dataclass
class FlowField:
    """Per-pixel displacement (u along x, v along y) in pixels"""
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.u.ndim != 2 or self.u.shape != self.v.shape or 0 in self.u.shape:
            raise DimensionError(f"Flow components must be equal non-empty [H,W] grids, "
                                 f"got u {list(self.u.shape)} and v {list(self.v.shape)}")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v))):
            raise NumericError("Flow field holds a non-finite displacement")

    @classmethod
    def zeros(cls, height: int, width: int) -> "FlowField":
        return cls(np.zeros((height, width)), np.zeros((height, width)))

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)

    def as_array(self) -> np.ndarray:
        return np.stack([self.u, self.v])


def _image_array(image) -> np.ndarray:
    return np.asarray(image.data if isinstance(image, Tensor) else image, dtype=np.float64)


def to_grayscale(rgb) -> np.ndarray:
    """Luminance of a [3,H,W] frame; a [H,W] input is returned as is"""
    array = _image_array(rgb)
    if array.ndim == 2:
        return array
    if array.ndim != 3 or array.shape[0] != 3:
        raise DimensionError(f"Expected a [3,H,W] frame, got {list(array.shape)}")
    return np.tensordot(LUMINANCE, array, axes=1)


def estimate_flow(frame_a, frame_b, alpha: float = 15.0, iterations: int = 100) -> FlowField:
    """Horn–Schunck flow from frame_a to frame_b.

    Frames are grayscale [H,W] (or [3,H,W], converted by luminance) with values in [0,1].
    Intensities are taken in 8-bit units internally, so `alpha` weighs smoothness against
    brightness constancy on the 0..255 scale.

    Args:
        frame_a: Frame at time t
        frame_b: Frame at time t+k
        alpha (float, optional): Smoothness weight. Defaults to 15.
        iterations (int, optional): Jacobi sweeps starting from zero flow. Defaults to 100.

    Returns:
        FlowField: Displacement of every pixel of frame_a
    """
    if iterations < 0:
        raise ContractError(f"estimate_flow: iterations must be >= 0, got {iterations}")
    if alpha <= 0:
        raise ContractError(f"estimate_flow: alpha must be positive, got {alpha}")

    a = to_grayscale(frame_a) * 255.0
    b = to_grayscale(frame_b) * 255.0
    if a.shape != b.shape:
        raise DimensionError(f"estimate_flow: frame shapes differ, {list(a.shape)} vs {list(b.shape)}")

    u = np.zeros_like(a)
    v = np.zeros_like(a)
    if iterations == 0:
        return FlowField(u, v)

    def gradient(image: np.ndarray, axis: int) -> np.ndarray:
        if image.shape[axis] < 2:
            return np.zeros_like(image)
        return np.gradient(image, axis=axis)

    ix = (gradient(a, 1) + gradient(b, 1)) / 2
    iy = (gradient(a, 0) + gradient(b, 0)) / 2
    it = b - a
    denominator = alpha ** 2 + ix ** 2 + iy ** 2

    for _ in range(iterations):
        u_avg = convolve(u, NEIGHBOUR_AVERAGE, mode='nearest')
        v_avg = convolve(v, NEIGHBOUR_AVERAGE, mode='nearest')
        shared = (ix * u_avg + iy * v_avg + it) / denominator
        u = u_avg - ix * shared
        v = v_avg - iy * shared

    logger.debug("Horn-Schunck on %dx%d, %d iterations, mean |flow| %.4f",
                 a.shape[1], a.shape[0], iterations, float(np.mean(np.hypot(u, v))))
    return FlowField(u, v)


class Warp(Function):
    """Bilinear sample of the image at p + flow(p), coordinates clamped to the border"""
    name = "warp"

    def __init__(self, flow: FlowField):
        self.flow = flow

    def forward(self, image):
        if image.ndim != 3 or image.shape[1:] != (self.flow.height, self.flow.width):
            raise DimensionError(f"warp: image {list(image.shape)} doesn't match flow "
                                 f"{[self.flow.height, self.flow.width]}")
        height, width = image.shape[1:]
        rows, cols = np.meshgrid(np.arange(height), np.arange(width), indexing='ij')
        x = np.clip(cols + self.flow.u, 0, width - 1)
        y = np.clip(rows + self.flow.v, 0, height - 1)

        x0 = np.floor(x).astype(np.intp)
        y0 = np.floor(y).astype(np.intp)
        x1 = np.minimum(x0 + 1, width - 1)
        y1 = np.minimum(y0 + 1, height - 1)
        wx = x - x0
        wy = y - y0

        self.in_shape = image.shape
        self.taps = [
            (y0, x0, (1 - wy) * (1 - wx)),
            (y0, x1, (1 - wy) * wx),
            (y1, x0, wy * (1 - wx)),
            (y1, x1, wy * wx),
        ]
        out = image[:, y0, x0] * self.taps[0][2]
        for ty, tx, weight in self.taps[1:]:
            out = out + image[:, ty, tx] * weight
        return out

    def backward(self, grad):
        grad_image = np.zeros(self.in_shape)
        for ty, tx, weight in self.taps:
            for c in range(self.in_shape[0]):
                np.add.at(grad_image[c], (ty, tx), grad[c] * weight)
        return (grad_image,)


class CostVolume(Function):
    """Normalized correlation of feat_a against feat_b displaced by every (dx, dy) in [-d, d]^2.

    Channels are ordered with dy as the outer and dx as the inner loop; positions whose partner
    falls outside the grid hold zero.
    """
    name = "cost_volume"

    def __init__(self, max_displacement: int = 1):
        if max_displacement < 0:
            raise ContractError(f"cost_volume: max displacement must be >= 0, got {max_displacement}")
        self.d = max_displacement

    def displacements(self) -> list[tuple[int, int]]:
        return [(dx, dy) for dy in range(-self.d, self.d + 1) for dx in range(-self.d, self.d + 1)]

    def _window(self, dx: int, dy: int, height: int, width: int):
        return (slice(None), slice(self.d + dy, self.d + dy + height), slice(self.d + dx, self.d + dx + width))

    def forward(self, a, b):
        if a.ndim != 3 or a.shape != b.shape:
            raise DimensionError(f"cost_volume: feature shapes differ or aren't [C,H,W], "
                                 f"{list(a.shape)} vs {list(b.shape)}")
        channels, height, width = a.shape
        d = self.d
        padded = np.pad(b, ((0, 0), (d, d), (d, d)))
        self.a, self.padded_shape = a, padded.shape
        self.shifted = []

        out = np.empty(((2 * d + 1) ** 2, height, width))
        for k, (dx, dy) in enumerate(self.displacements()):
            shifted = padded[self._window(dx, dy, height, width)]
            self.shifted.append(shifted)
            out[k] = (a * shifted).sum(axis=0) / channels
        return out

    def backward(self, grad):
        channels, height, width = self.a.shape
        grad_a = np.zeros(self.a.shape)
        grad_padded = np.zeros(self.padded_shape)
        for k, (dx, dy) in enumerate(self.displacements()):
            g = grad[k] / channels
            grad_a += g * self.shifted[k]
            grad_padded[self._window(dx, dy, height, width)] += g * self.a
        d = self.d
        return grad_a, grad_padded[:, d:d + height, d:d + width]


def warp(image: Tensor, flow: FlowField) -> Tensor:
    return Warp.apply(as_tensor(image), flow=flow)


def cost_volume(feat_a: Tensor, feat_b: Tensor, max_displacement: int = 1) -> Tensor:
    return CostVolume.apply(as_tensor(feat_a), as_tensor(feat_b), max_displacement=max_displacement)


def write_flo(field: FlowField) -> bytes:
    interleaved = np.stack([field.u, field.v], axis=-1).astype("<f4")
    return FLO_HEADER.pack(FLO_MAGIC, field.width, field.height) + interleaved.tobytes()


def read_flo(payload: bytes) -> FlowField:
    if len(payload) < FLO_HEADER.size:
        raise FormatError(f".flo payload truncated: {len(payload)} bytes is shorter than the header")
    magic, width, height = FLO_HEADER.unpack_from(payload)
    if magic != FLO_MAGIC:
        raise FormatError(f"Not a .flo file (magic {magic!r}, expected {FLO_MAGIC})")
    if width <= 0 or height <= 0:
        raise FormatError(f".flo declares a {width}x{height} field")

    expected = FLO_HEADER.size + 8 * width * height
    if len(payload) < expected:
        raise FormatError(f".flo payload truncated: {len(payload)} of {expected} bytes")
    if len(payload) > expected:
        raise FormatError(f".flo payload has {len(payload) - expected} trailing bytes")

    data = np.frombuffer(payload, dtype="<f4", offset=FLO_HEADER.size).astype(np.float64)
    data = data.reshape(height, width, 2)
    try:
        return FlowField(data[..., 0].copy(), data[..., 1].copy())
    except NumericError as e:
        raise FormatError(".flo payload holds a non-finite value") from e


def save_flo(path: str | Path, field: FlowField):
    Path(path).write_bytes(write_flo(field))


def load_flo(path: str | Path) -> FlowField:
    return read_flo(Path(path).read_bytes())


def normalize_for_network(field: FlowField) -> Tensor:
    """[2,H,W] tensor of the flow clamped to +-8 px and scaled into [-1, 1]"""
    clamped = np.clip(field.as_array(), -NETWORK_FLOW_RANGE, NETWORK_FLOW_RANGE)
    return Tensor(clamped / NETWORK_FLOW_RANGE)


def _check_comparable(field: FlowField, reference: FlowField):
    if field.u.shape != reference.u.shape:
        raise DimensionError(f"Flow fields differ in size: {[field.height, field.width]} vs "
                             f"{[reference.height, reference.width]}")


def endpoint_error(field: FlowField, reference: FlowField) -> float:
    """Mean Euclidean distance between displacement vectors"""
    _check_comparable(field, reference)
    return float(np.mean(np.hypot(field.u - reference.u, field.v - reference.v)))


def angular_error(field: FlowField, reference: FlowField) -> float:
    """Mean angle in degrees between the space-time vectors (u, v, 1)"""
    _check_comparable(field, reference)
    dot = field.u * reference.u + field.v * reference.v + 1.0
    norms = np.sqrt((field.u ** 2 + field.v ** 2 + 1.0) * (reference.u ** 2 + reference.v ** 2 + 1.0))
    return float(np.degrees(np.mean(np.arccos(np.clip(dot / norms, -1.0, 1.0)))))
