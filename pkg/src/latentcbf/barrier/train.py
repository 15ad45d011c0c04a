"""Minibatch training of barrier banks on labeled latent states."""
from __future__ import annotations

import enum
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from latentcbf.barrier.bank import BarrierBank
from latentcbf.barrier.loss import safe_hinge, unsafe_hinge
from latentcbf.core import DataContractError

log = logging.getLogger(__name__)


class Optimizer(str, enum.Enum):
    ADAM = "adam"
    SGD = "sgd"


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lambda_unsafe: float = 1.0
    epsilon_margin: float = 0.1
    learning_rate: float = 1e-2
    batch_size: int = 512
    epochs: int = 200
    seed: int = 0
    optimizer: Optimizer = Optimizer.ADAM
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "optimizer", Optimizer(self.optimizer))
        for name in ("lambda_unsafe", "epsilon_margin", "learning_rate"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if int(self.batch_size) < 1 or int(self.epochs) < 1:
            raise ValueError("batch_size and epochs must be positive integers")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["optimizer"] = self.optimizer.value
        return d


@dataclass
class TrainResult:
    bank: BarrierBank
    history: list[float]
    initial_loss: float
    config: TrainConfig = field(repr=False, default=None)


class _Adam:
    def __init__(self, params, lr, beta1, beta2, eps):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        out = []
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            out.append(p - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps))
        return out


class _SGD:
    def __init__(self, params, lr):
        self.lr = lr

    def step(self, params, grads):
        return [p - self.lr * g for p, g in zip(params, grads)]


def _dataset_arrays(dataset):
    X = np.asarray(dataset.states, dtype=np.float64)
    y = np.asarray(dataset.labels, dtype=np.int8)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DataContractError("dataset states and labels disagree in length")
    return X, y


def _objective(bank, X, y, config, want_grads: bool):
    """Total loss on (X, y); optionally the per-component parameter gradients."""
    safe = y > 0
    comps = bank.components
    values, caches = [], []
    for comp in comps:
        if want_grads and comp.kind == "mlp":
            v, cache = comp.forward(X, keep=True)
        else:
            v, cache = comp.values(X), None
        values.append(v)
        caches.append(cache)
    V = np.concatenate(values, axis=1)
    ls, gs = safe_hinge(V[safe])
    lu, gu = unsafe_hinge(V[~safe], config.epsilon_margin)
    loss = ls + config.lambda_unsafe * lu
    if not want_grads:
        return loss, None
    seed = np.zeros_like(V)
    seed[safe] = gs
    seed[~safe] = config.lambda_unsafe * gu
    grads, start = [], 0
    for comp, cache in zip(comps, caches):
        stop = start + comp.n_heads
        if cache is not None:
            g, _ = comp.backward(cache, seed[:, start:stop], want_params=True, want_input=None)
            grads.append(g)
        else:
            grads.append(None)
        start = stop
    return loss, grads


def dataset_loss(bank, dataset, config: TrainConfig) -> float:
    X, y = _dataset_arrays(dataset)
    return _objective(bank, X, y, config, want_grads=False)[0]


def train(bank: BarrierBank, dataset, config: TrainConfig | None = None) -> TrainResult:
    """Fit the trainable (MLP) heads of `bank` to `dataset`.

    The input bank is left untouched; a trained copy is returned together with
    the full-training-set loss after every epoch.
    """
    config = config or TrainConfig()
    X, y = _dataset_arrays(dataset)
    if X.shape[1] != bank.input_dim:
        raise DataContractError(f"dataset dimension {X.shape[1]} != bank input dimension {bank.input_dim}")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise DataContractError("training needs both safe and unsafe examples")

    comps = [c.copy() if c.kind == "mlp" else c for c in bank.components]
    bank = BarrierBank(comps, bank.category_names)
    trainable = [c for c in comps if c.kind == "mlp"]
    if not trainable:
        raise ValueError("bank has no trainable heads")

    def make_opt(params):
        if config.optimizer is Optimizer.ADAM:
            return _Adam(params, config.learning_rate, config.beta1, config.beta2, config.adam_eps)
        return _SGD(params, config.learning_rate)

    opts = [make_opt(c.parameters()) for c in trainable]
    rng = np.random.default_rng(config.seed)
    n = X.shape[0]
    initial = _objective(bank, X, y, config, want_grads=False)[0]
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = _objective(bank, X[idx], y[idx], config, want_grads=True)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch starting {start}")
            grads = [g for g in grads if g is not None]
            for comp, opt, g in zip(trainable, opts, grads):
                comp.set_parameters(opt.step(comp.parameters(), g))
        epoch_loss = _objective(bank, X, y, config, want_grads=False)[0]
        if not np.isfinite(epoch_loss):
            raise TrainingError(f"non-finite loss after epoch {epoch}")
        history.append(epoch_loss)
        log.debug("epoch %d loss %.6g", epoch, epoch_loss)
    return TrainResult(bank=bank, history=history, initial_loss=initial, config=config)


def classify(bank, X, delta: float = 0.0) -> np.ndarray:
    """+1 where every head is >= delta (predicted safe), else -1."""
    V = bank.values(np.atleast_2d(np.asarray(X, dtype=np.float64)))
    return np.where(V.min(axis=1) >= delta, 1, -1).astype(np.int8)
