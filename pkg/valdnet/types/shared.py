from typing import Literal, Union

Split = Union[Literal['train'], Literal['eval']]
CellType = Union[Literal['lstm'], Literal['gru']]
StreamName = Union[Literal['rgb'], Literal['flow']]

# (expansion_ratio, out_channels, stride, repeats)
Stage = tuple[int, int, int, int]

SPLITS = ('train', 'eval')
CELL_TYPES = ('lstm', 'gru')
STREAMS = ('rgb', 'flow')
