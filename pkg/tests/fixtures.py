"""Shared test fixtures: a four-category synthetic constraint problem."""
from __future__ import annotations

import numpy as np

from latentcbf.barrier import BarrierBank, MLPBarrier, TrainConfig, train
from latentcbf.dataio import SafetyDataset

CATEGORY_DIM = 4
CATEGORY_LIMIT = 1.0


def category_dataset(k: int, n: int = 1500, seed: int = 0, gap: float = 0.1) -> SafetyDataset:
    """Category k is violated when x_k exceeds the limit; a small band around
    the boundary is left out so labels are unambiguous."""
    rng = np.random.default_rng([seed, k])
    X = rng.uniform(-2.0, 3.0, size=(3 * n, CATEGORY_DIM))
    X = X[np.abs(X[:, k] - CATEGORY_LIMIT) > gap][:n]
    labels = np.where(X[:, k] <= CATEGORY_LIMIT, 1, -1)
    return SafetyDataset(X, labels, [f"cat{k}-{i}" for i in range(len(X))])


def train_category_banks(epochs: int = 60, seed: int = 0) -> list[BarrierBank]:
    banks = []
    for k in range(CATEGORY_DIM):
        bank = BarrierBank([MLPBarrier(CATEGORY_DIM, (32, 16), 1, seed=seed + k)], [f"category{k}"])
        cfg = TrainConfig(epochs=epochs, seed=seed + k, batch_size=256, learning_rate=1e-2)
        banks.append(train(bank, category_dataset(k, seed=seed), cfg).bank)
    return banks


def approach_sequences(n_per_pattern: int = 25, steps: int = 12, seed: int = 0) -> dict[str, np.ndarray]:
    """Straight-line sequences from inside the safe box towards a face, an
    edge, a 3-way corner or the 4-way corner, ending well past the limits."""
    rng = np.random.default_rng(seed)
    patterns = [(0,), (1,), (2,), (3,), (0, 1), (2, 3), (0, 2), (0, 1, 2), (1, 2, 3), (0, 1, 2, 3)]
    out = {}
    for p, active in enumerate(patterns):
        for i in range(n_per_pattern):
            start = rng.uniform(-0.5, 0.3, CATEGORY_DIM)
            end = rng.uniform(-0.5, 0.3, CATEGORY_DIM)
            end[list(active)] = rng.uniform(1.8, 2.5, len(active))
            s = np.linspace(0.0, 1.0, steps + 1)[:, None]
            out[f"pattern{p}-{i}"] = start + s * (end - start)
    return out
