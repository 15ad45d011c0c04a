from latentcbf.barrier.analytic import HalfSpace, Sphere
from latentcbf.barrier.bank import BarrierBank
from latentcbf.barrier.net import DESK_HIDDEN, FULL_HIDDEN, MLPBarrier
from latentcbf.barrier.loss import (
    loss_safe,
    loss_unsafe,
    safe_hinge,
    total_loss,
    unsafe_hinge,
)
from latentcbf.barrier.train import TrainConfig, TrainingError, TrainResult, classify, train
from latentcbf.barrier.io import BankFormatError, load_bank, save_bank


def evaluate(barrier, h) -> float:
    """Value of a single-head barrier at state h."""
    if barrier.n_heads != 1:
        raise ValueError("evaluate expects a single-head barrier; use bank.values for banks")
    return float(barrier.value_and_jacobian(h)[0][0])


def input_gradient(barrier, h):
    """Exact gradient of a single-head barrier with respect to its input."""
    if barrier.n_heads != 1:
        raise ValueError("input_gradient expects a single-head barrier")
    return barrier.value_and_jacobian(h)[1][0]


__all__ = [
    "BankFormatError", "BarrierBank", "DESK_HIDDEN", "FULL_HIDDEN", "HalfSpace", "MLPBarrier",
    "Sphere", "TrainConfig", "TrainResult", "TrainingError", "classify", "evaluate",
    "input_gradient", "load_bank", "loss_safe", "loss_unsafe", "safe_hinge", "save_bank",
    "total_loss", "train", "unsafe_hinge",
]
