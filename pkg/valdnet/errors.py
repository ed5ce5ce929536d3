class ValdNetError(Exception):
    """Base class for every error raised by valdnet"""


class DimensionError(ValdNetError, ValueError):
    """Shapes or extents don't line up"""


class NumericError(ValdNetError, ArithmeticError):
    """A NaN or Inf showed up where only finite values are allowed"""


class ContractError(ValdNetError, RuntimeError):
    """An API was called outside its preconditions"""


class FormatError(ValdNetError, ValueError):
    """A file or byte payload doesn't follow its format"""


class DataError(ValdNetError):
    """The dataset can't be used as requested"""


class MissingWeightsError(DataError, KeyError):
    """A named tensor is absent from the weight store"""

    def __str__(self):
        # KeyError quotes its argument, which reads badly in logs
        return str(self.args[0]) if self.args else ""


class ConfigError(ValdNetError, ValueError):
    """Invalid configuration key or value"""


class LockError(ValdNetError):
    """Another invocation holds the output directory"""
