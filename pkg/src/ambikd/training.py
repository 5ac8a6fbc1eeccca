"""Hyperparameters and loop plumbing shared by the pipeline and the baselines."""
from dataclasses import dataclass

import numpy as np

from .nn import AdamW, ConstantLR, LinearDecay


@dataclass
class TrainConfig:
    """Optimizer and loop settings shared by every method for a fair comparison."""
    epochs: int = 5
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def validate(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("need epochs >= 0, batch_size >= 1, lr > 0")
        return self


def num_batches(n, batch_size):
    return (n + batch_size - 1) // batch_size


def minibatches(n, batch_size, rng):
    """Shuffled index batches covering ``range(n)`` once."""
    order = rng.permutation(n)
    for s in range(0, n, batch_size):
        yield order[s:s + batch_size]


def make_optimizer(params, cfg, total_steps=None, lr=None):
    """AdamW with linear decay over ``total_steps``, or a constant LR when ``total_steps`` is None."""
    lr = cfg.lr if lr is None else lr
    schedule = ConstantLR(lr) if total_steps is None else LinearDecay(lr, total_steps)
    return AdamW(params, schedule, weight_decay=cfg.weight_decay,
                 beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)


def phase_rng(seed, phase):
    """Independent, reproducible shuffling stream per training phase."""
    return np.random.default_rng([seed, 1000 + phase])


class Freeze:
    """Context manager: make exactly ``groups`` trainable, restore flags on exit."""

    def __init__(self, params, trainable_groups):
        self.params = params
        self.groups = trainable_groups
        self._saved = None

    def __enter__(self):
        self._saved = {n: self.params.is_trainable(n) for n in self.params}
        self.params.only_trainable(self.groups)
        return self.params

    def __exit__(self, *exc):
        for n, flag in self._saved.items():
            self.params[n].requires_grad = flag
        return False
