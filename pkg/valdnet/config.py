import json
import logging
from dataclasses import MISSING, asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .types.config import BackboneConfigDict, ConfigFileDict, ModelConfigDict, TrainConfigDict
from .types.shared import CELL_TYPES, STREAMS, CellType, Stage, StreamName

logger = logging.getLogger(__name__)


def Setting(default, description: str):
    if isinstance(default, (list, dict)):
        return field(default_factory=lambda: json.loads(json.dumps(default)), metadata={"description": description})
    return field(default=default, metadata={"description": description})


def Nested(factory, description: str):
    return field(default_factory=factory, metadata={"description": description})


def describe(config_type) -> dict[str, str]:
    """Field name to description, for documentation and `--help` output"""
    return {f.name: f.metadata.get("description", "") for f in fields(config_type)}


def _require_positive(owner: str, **values):
    for name, value in values.items():
        if not isinstance(value, (int, float)) or isinstance(value, bool) or value <= 0:
            raise ConfigError(f"{owner}.{name} must be positive, got {value!r}")


def _require_positive_int(owner: str, **values):
    for name, value in values.items():
        if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
            raise ConfigError(f"{owner}.{name} must be a positive integer, got {value!r}")


@dataclass
class BackboneConfig:
    input_channels: int = Setting(3, "Channels per frame: 3 for the RGB stream, 2 for the (u, v) flow stream")
    input_size: int = Setting(64, "Square frame size the backbone accepts")
    stem_filters: int = Setting(8, "Filters of the 3x3 stride-2 stem convolution")
    stages: list[Stage] = Setting(
        [[1, 8, 1, 1], [4, 16, 2, 2], [4, 32, 2, 2]],
        "MBConv stages as (expansion_ratio, out_channels, stride, repeats); only the first block of a stage strides")
    se_reduction_ratio: int = Setting(4, "Squeeze-excitation bottleneck divisor of the expanded channels")
    feature_dim: int = Setting(32, "Width of the final 1x1 projection, i.e. the per-frame feature size")
    kernel_size: int = Setting(3, "Depthwise kernel size of every MBConv block")

    def __post_init__(self):
        _require_positive_int("backbone", input_channels=self.input_channels, input_size=self.input_size,
                              stem_filters=self.stem_filters, se_reduction_ratio=self.se_reduction_ratio,
                              feature_dim=self.feature_dim, kernel_size=self.kernel_size)
        if not self.stages:
            raise ConfigError("backbone.stages must declare at least one stage")

        stages = []
        for stage in self.stages:
            if len(stage) != 4:
                raise ConfigError(f"backbone stage {stage!r} must be (expansion_ratio, out_channels, stride, repeats)")
            if any(not isinstance(v, int) or isinstance(v, bool) for v in stage):
                raise ConfigError(f"backbone stage {stage!r} must hold integers")
            expansion, out_channels, stride, repeats = stage
            if expansion < 1:
                raise ConfigError(f"backbone expansion_ratio must be >= 1, got {expansion}")
            if stride not in (1, 2):
                raise ConfigError(f"backbone stride must be 1 or 2, got {stride}")
            _require_positive_int("backbone stage", out_channels=out_channels, repeats=repeats)
            stages.append((expansion, out_channels, stride, repeats))
        self.stages = stages


def rgb_backbone() -> BackboneConfig:
    return BackboneConfig(input_channels=3)


def flow_backbone() -> BackboneConfig:
    return BackboneConfig(input_channels=2)


@dataclass
class ModelConfig:
    rgb: BackboneConfig = Nested(rgb_backbone, "Backbone applied to every sampled RGB frame")
    flow: BackboneConfig = Nested(flow_backbone, "Backbone applied to every optical-flow field")
    rnn_cell: CellType = Setting('gru', "Recurrent cell of the bidirectional layer: 'lstm' or 'gru'")
    rnn_hidden: int = Setting(16, "Hidden units per direction")
    flow_offset: int = Setting(1, "Flow for sampled frame t is computed against frame t + offset (ValdNet1/2/3)")
    fc_sizes: list[int] = Setting([32, 16, 1], "Widths of the fully connected head; the last one is the sigmoid output")
    frames: int = Setting(12, "Frames sampled uniformly from every video")
    input_size: int = Setting(64, "Frames are resized to this square size before both streams")
    streams: list[StreamName] = Setting(['rgb', 'flow'], "Streams summed before the recurrent layer")

    def __post_init__(self):
        if isinstance(self.rgb, dict):
            self.rgb = backbone_from_dict({"input_channels": 3, **self.rgb}, "model.rgb")
        if isinstance(self.flow, dict):
            self.flow = backbone_from_dict({"input_channels": 2, **self.flow}, "model.flow")

        _require_positive_int("model", rnn_hidden=self.rnn_hidden, frames=self.frames, input_size=self.input_size)
        if self.rnn_cell not in CELL_TYPES:
            raise ConfigError(f"model.rnn_cell must be one of {CELL_TYPES}, got {self.rnn_cell!r}")
        if self.flow_offset not in (1, 2, 3):
            raise ConfigError(f"model.flow_offset must be 1, 2 or 3, got {self.flow_offset!r}")
        if not self.fc_sizes or self.fc_sizes[-1] != 1:
            raise ConfigError(f"model.fc_sizes must end with a single output unit, got {self.fc_sizes!r}")
        _require_positive_int("model", **{f"fc_sizes[{i}]": size for i, size in enumerate(self.fc_sizes)})
        if not self.streams or any(s not in STREAMS for s in self.streams) or len(set(self.streams)) != len(self.streams):
            raise ConfigError(f"model.streams must be a non-empty subset of {STREAMS}, got {self.streams!r}")
        if self.rgb.input_channels != 3:
            raise ConfigError("model.rgb.input_channels must be 3")
        if self.flow.input_channels != 2:
            raise ConfigError("model.flow.input_channels must be 2")
        if 'rgb' in self.streams and 'flow' in self.streams and self.rgb.feature_dim != self.flow.feature_dim:
            raise ConfigError("model.rgb.feature_dim and model.flow.feature_dim must match to be summed")

        self.rgb = replace(self.rgb, input_size=self.input_size)
        self.flow = replace(self.flow, input_size=self.input_size)

    @property
    def feature_dim(self) -> int:
        return self.rgb.feature_dim if 'rgb' in self.streams else self.flow.feature_dim

    @classmethod
    def micro(cls, **overrides) -> "ModelConfig":
        """Desk-scale preset: 16x16 frames, two small stages"""
        stages = [[1, 4, 1, 1], [2, 8, 2, 1]]
        settings = dict(
            rgb=BackboneConfig(input_channels=3, input_size=16, stem_filters=4, stages=stages, feature_dim=8),
            flow=BackboneConfig(input_channels=2, input_size=16, stem_filters=4, stages=stages, feature_dim=8),
            rnn_hidden=8,
            fc_sizes=[16, 8, 1],
            input_size=16,
        )
        settings.update(overrides)
        return cls(**settings)


@dataclass
class TrainConfig:
    optimizer: str = Setting('rmsprop', "Optimizer; only 'rmsprop' is provided")
    learning_rate: float = Setting(0.001, "RMSprop step size")
    batch_size: int = Setting(4, "Samples per optimizer step")
    epochs: int = Setting(50, "Passes over the training split")
    rho: float = Setting(0.9, "RMSprop decay of the squared-gradient accumulator")
    epsilon: float = Setting(1e-7, "RMSprop denominator offset")
    seed: int = Setting(0, "Seed for weight init and epoch shuffling")
    threshold: float = Setting(0.5, "Probability at or above which a sample is predicted violent")
    record_wall_time: bool = Setting(True, "Write epoch wall time to the metrics; when off the column is 0")

    def __post_init__(self):
        if self.optimizer != 'rmsprop':
            raise ConfigError(f"train.optimizer must be 'rmsprop', got {self.optimizer!r}")
        _require_positive_int("train", batch_size=self.batch_size, epochs=self.epochs)
        _require_positive("train", learning_rate=self.learning_rate, rho=self.rho, epsilon=self.epsilon)
        if not 0.0 < self.rho < 1.0:
            raise ConfigError(f"train.rho must lie in (0, 1), got {self.rho}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError(f"train.seed must be a non-negative integer, got {self.seed!r}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError(f"train.threshold must lie in [0, 1], got {self.threshold}")


def _from_dict(config_type, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object, got {type(data).__name__}")
    known = {f.name for f in fields(config_type)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"Unknown key(s) in {where}: {', '.join(unknown)}")
    try:
        return config_type(**data)
    except TypeError as e:
        raise ConfigError(f"{where}: {e}") from e


def backbone_from_dict(data: BackboneConfigDict, where: str = "backbone") -> BackboneConfig:
    return _from_dict(BackboneConfig, data, where)


def model_from_dict(data: ModelConfigDict) -> ModelConfig:
    return _from_dict(ModelConfig, data, "model")


def train_from_dict(data: TrainConfigDict) -> TrainConfig:
    return _from_dict(TrainConfig, data, "train")


def config_to_dict(model: ModelConfig, train: TrainConfig | None = None) -> ConfigFileDict:
    data: ConfigFileDict = {"model": asdict(model)}
    for backbone in ("rgb", "flow"):
        data["model"][backbone]["stages"] = [list(stage) for stage in data["model"][backbone]["stages"]]
    if train is not None:
        data["train"] = asdict(train)
    return data


def defaults_dict(micro: bool = False) -> ConfigFileDict:
    return config_to_dict(ModelConfig.micro() if micro else ModelConfig(), TrainConfig())


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _default_for(config_type, name: str):
    for f in fields(config_type):
        if f.name == name:
            if f.default is not MISSING:
                return f.default
            return f.default_factory()
    return MISSING


def apply_override(data: dict, assignment: str):
    """Apply one `dotted.key=value` assignment in place.

    Raises:
        ConfigError: If the assignment is malformed or names an unknown key
    """
    key, sep, raw = assignment.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"Override {assignment!r} must look like key=value")

    path = key.strip().split(".")
    if path[0] not in ("model", "train"):
        raise ConfigError(f"Unknown config section {path[0]!r}; overrides start with 'model.' or 'train.'")

    schema = {"model": ModelConfig, "train": TrainConfig}[path[0]]
    node = data.setdefault(path[0], {})
    for depth, part in enumerate(path[1:-1], start=1):
        if schema is ModelConfig and part in ("rgb", "flow"):
            schema = BackboneConfig
        else:
            raise ConfigError(f"Unknown config key {'.'.join(path[:depth + 1])!r}")
        node = node.setdefault(part, {})

    leaf = path[-1]
    if len(path) < 2 or _default_for(schema, leaf) is MISSING:
        raise ConfigError(f"Unknown config key {key.strip()!r}")
    node[leaf] = _parse_value(raw.strip())


def _merge(base: dict, update: dict) -> dict:
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _merge(base[key], value)
        else:
            base[key] = value
    return base


def load_config(
    path: str | Path | None = None,
    overrides: list[str] | None = None,
) -> tuple[ModelConfig, TrainConfig]:
    """Build the model and train configs from defaults, an optional JSON file, then `key=value` overrides.

    Args:
        path (str | Path | None, optional): JSON file with optional "model" and "train" sections
        overrides (list[str] | None, optional): Dotted `key=value` assignments applied last

    Returns:
        tuple[ModelConfig, TrainConfig]: Validated configs
    """
    data: dict = {"model": {}, "train": {}}
    if path is not None:
        try:
            loaded = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path} is not valid JSON: {e}") from e
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path} must hold a JSON object")
        unknown = sorted(set(loaded) - {"model", "train"})
        if unknown:
            raise ConfigError(f"Unknown section(s) in {path}: {', '.join(unknown)}")
        _merge(data, loaded)
        logger.debug("Loaded config file %s", path)

    for assignment in overrides or []:
        apply_override(data, assignment)

    return model_from_dict(data["model"]), train_from_dict(data["train"])
