import logging
import struct
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import FormatError, MissingWeightsError, NumericError
from .tensor import Tensor

logger = logging.getLogger(__name__)

MAGIC = b"VLDW"
VERSION = 1


def fan_in_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class WeightStore:
    """Ordered mapping of parameter names to tensors"""
    tensors: dict[str, Tensor]

    def __init__(self, tensors: dict[str, Tensor] | None = None):
        self.tensors = dict(tensors or {})

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self.tensors[name]
        except KeyError:
            raise MissingWeightsError(f"Weight store has no tensor named {name!r}") from None

    def __setitem__(self, name: str, value):
        tensor = value if isinstance(value, Tensor) else Tensor(value)
        tensor.name = name
        self.tensors[name] = tensor

    def __contains__(self, name: str):
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self):
        return len(self.tensors)

    def names(self) -> list[str]:
        return list(self.tensors)

    def items(self):
        return self.tensors.items()

    def parameters(self) -> list[Tensor]:
        return list(self.tensors.values())

    def require(self, names: Iterable[str]):
        missing = [name for name in names if name not in self.tensors]
        if missing:
            raise MissingWeightsError(f"Weight store is missing {len(missing)} tensor(s), e.g. {missing[:3]}")

    def update(self, other: "WeightStore"):
        for name, tensor in other.items():
            self[name] = tensor

    def trainable(self) -> "WeightStore":
        """Fresh leaf tensors that record gradients"""
        return WeightStore({name: Tensor(t.data, requires_grad=True, name=name) for name, t in self.items()})

    def frozen(self) -> "WeightStore":
        return WeightStore({name: Tensor.wrap(t.data) for name, t in self.items()})

    def quantized(self) -> "WeightStore":
        """The store as it reads back from a weight file (single precision, widened)"""
        return WeightStore({
            name: Tensor(t.data.astype(np.float32).astype(np.float64), name=name) for name, t in self.items()
        })

    def to_bytes(self) -> bytes:
        chunks = [MAGIC, struct.pack("<II", VERSION, len(self.tensors))]
        for name, tensor in self.tensors.items():
            encoded = name.encode("utf-8")
            chunks.append(struct.pack("<I", len(encoded)))
            chunks.append(encoded)
            chunks.append(struct.pack(f"<I{tensor.ndim}I", tensor.ndim, *tensor.shape))
            chunks.append(tensor.data.astype("<f4").tobytes())
        return b"".join(chunks)

    @classmethod
    def from_bytes(cls, payload: bytes) -> "WeightStore":
        view = memoryview(payload)
        offset = 0

        def take(size: int, what: str) -> memoryview:
            nonlocal offset
            if offset + size > len(view):
                raise FormatError(f"VLDW payload truncated while reading {what}")
            chunk = view[offset:offset + size]
            offset += size
            return chunk

        if bytes(take(4, "magic")) != MAGIC:
            raise FormatError("Not a VLDW weight file (bad magic)")
        version, count = struct.unpack("<II", take(8, "header"))
        if version != VERSION:
            raise FormatError(f"Unsupported VLDW version {version}")

        store = cls()
        for _ in range(count):
            (name_length,) = struct.unpack("<I", take(4, "name length"))
            try:
                name = bytes(take(name_length, "name")).decode("utf-8")
            except UnicodeDecodeError as e:
                raise FormatError(f"VLDW tensor name is not valid UTF-8: {e}") from e
            (rank,) = struct.unpack("<I", take(4, "rank"))
            extents = struct.unpack(f"<{rank}I", take(4 * rank, "extents"))
            if 0 in extents:
                raise FormatError(f"VLDW tensor {name!r} has a zero extent")
            count_values = int(np.prod(extents, dtype=np.int64))
            data = np.frombuffer(take(4 * count_values, f"data of {name}"), dtype="<f4")
            try:
                store[name] = Tensor(data.astype(np.float64).reshape(extents))
            except NumericError as e:
                raise FormatError(f"VLDW tensor {name!r} holds a non-finite value") from e

        if offset != len(view):
            raise FormatError(f"VLDW payload has {len(view) - offset} trailing bytes")
        return store

    def save(self, path: str | Path):
        Path(path).write_bytes(self.to_bytes())
        logger.info("Wrote %d tensors to %s", len(self), path)

    @classmethod
    def load(cls, path: str | Path) -> "WeightStore":
        return cls.from_bytes(Path(path).read_bytes())
