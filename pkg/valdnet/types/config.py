from typing import TypedDict

from .shared import CellType, StreamName


class BackboneConfigDict(TypedDict, total=False):
    input_channels: int
    input_size: int
    stem_filters: int
    stages: list[list[int]]
    se_reduction_ratio: int
    feature_dim: int
    kernel_size: int


class ModelConfigDict(TypedDict, total=False):
    rgb: BackboneConfigDict
    flow: BackboneConfigDict
    rnn_cell: CellType
    rnn_hidden: int
    flow_offset: int
    fc_sizes: list[int]
    frames: int
    input_size: int
    streams: list[StreamName]


class TrainConfigDict(TypedDict, total=False):
    optimizer: str
    learning_rate: float
    batch_size: int
    epochs: int
    rho: float
    epsilon: float
    seed: int
    threshold: float
    record_wall_time: bool


class ConfigFileDict(TypedDict, total=False):
    model: ModelConfigDict
    train: TrainConfigDict
