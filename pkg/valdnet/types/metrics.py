from typing import TypedDict

from ..errors import ContractError

METRICS_HEADER = ['epoch', 'train_loss', 'train_acc', 'eval_loss', 'eval_acc', 'seconds']


class MetricsRowDict(TypedDict):
    epoch: int
    train_loss: float
    train_acc: float
    eval_loss: float
    eval_acc: float
    seconds: float


class MetricsRowBuilder:
    shared: MetricsRowDict

    def __init__(self, epoch: int):
        self.shared = {
            "epoch": epoch,
            "train_loss": 0.0,
            "train_acc": 0.0,
            "eval_loss": 0.0,
            "eval_acc": 0.0,
            "seconds": 0.0,
        }

    @staticmethod
    def _check(loss: float, accuracy: float):
        if not loss >= 0.0:
            raise ContractError(f"Loss must be non-negative, got {loss}")
        if not 0.0 <= accuracy <= 1.0:
            raise ContractError(f"Accuracy must lie in [0, 1], got {accuracy}")

    def add_train(self, loss: float, accuracy: float):
        self._check(loss, accuracy)
        self.shared["train_loss"] = float(loss)
        self.shared["train_acc"] = float(accuracy)
        return self

    def add_eval(self, loss: float, accuracy: float):
        self._check(loss, accuracy)
        self.shared["eval_loss"] = float(loss)
        self.shared["eval_acc"] = float(accuracy)
        return self

    def build(self, seconds: float = 0.0) -> MetricsRowDict:
        self.shared["seconds"] = float(seconds)
        return self.shared
