"""Reference methods: ordinary training, label smoothing, MC dropout,
temperature scaling and label distribution learning.

Baselines train the backbone and the main classifier only; the intermediate
probes stay at their initial values.
"""
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .metrics import kl_divergence
from .nn import softmax
from .training import Freeze, make_optimizer, minibatches, num_batches, phase_rng

PHASE_BASELINE = 10
METHODS = ("ORD", "LS", "MC", "TS", "LDL")


@dataclass
class BaselineConfig:
    alpha: float = 0.1
    mc_passes: int = 10
    temperature_grid: list = field(default_factory=lambda: [0.25 * i for i in range(1, 17)])

    def validate(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if self.mc_passes < 1:
            raise ValueError("mc_passes must be >= 1")
        if not self.temperature_grid or min(self.temperature_grid) <= 0:
            raise ValueError("temperature_grid must be non-empty with all T > 0")
        return self


def train_on_targets(model, tokens, targets, train_cfg, on_epoch=None):
    """Cross-entropy of the main classifier against fixed target rows."""
    L = model.config.num_layers
    targets = np.asarray(targets, dtype=model.dtype)
    bs = train_cfg.batch_size
    opt = make_optimizer(model.params, train_cfg,
                         total_steps=train_cfg.epochs * num_batches(len(tokens), bs))
    rng = phase_rng(train_cfg.seed, PHASE_BASELINE)
    history = []
    with Freeze(model.params, model.main_network_groups()):
        for _ in range(train_cfg.epochs):
            losses = []
            for idx in minibatches(len(tokens), bs, rng):
                out = model.forward(tokens[idx], train=True, layers=[L])
                loss = ag.cross_entropy_logits(out[L], targets[idx])
                model.params.zero_grad()
                loss.backward()
                opt.step()
                opt.schedule.advance()
                losses.append(float(loss.data))
            history.append(float(np.mean(losses)))
            if on_epoch is not None:
                on_epoch(len(history), history[-1])
    model.params.zero_grad()
    return history


def smooth_labels(labels, num_classes, alpha):
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must be in [0, 1)")
    return (1.0 - alpha) * np.eye(num_classes)[np.asarray(labels)] + alpha / num_classes


def train_ord(model, train, train_cfg):
    return train_on_targets(model, train.tokens, train.onehot(model.config.num_classes), train_cfg)


def train_ls(model, train, train_cfg, alpha=0.1):
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    return train_on_targets(model, train.tokens,
                            smooth_labels(train.labels, model.config.num_classes, alpha), train_cfg)


def train_ldl(model, train, train_cfg):
    if train.dists is None:
        raise ValueError("label distribution learning needs gold distributions on the training split")
    return train_on_targets(model, train.tokens, train.dists, train_cfg)


def predict_mc(model, tokens, k, seed=0, batch_size=256):
    """Average of ``k`` dropout-active main-classifier distributions.

    Dropout masks come from a private generator seeded with ``seed`` so
    predictions are reproducible and the model's own RNG is left alone.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    saved = model.rng
    model.rng = np.random.default_rng([seed, 7])
    try:
        acc = None
        for _ in range(k):
            p = softmax(model.predict_logits(tokens, dropout_active=True, batch_size=batch_size))
            acc = p if acc is None else acc + p
    finally:
        model.rng = saved
    return acc / k


def apply_temperature(logits, T):
    if T <= 0:
        raise ValueError("temperature must be positive")
    return softmax(np.asarray(logits, dtype=np.float64) / T)


def fit_temperature_logits(logits, gold, grid):
    """Grid search for the T minimizing mean KL(gold || softmax(logits / T)).

    Returns ``(T*, kl_at_T*)``; the first grid point wins ties.
    """
    if gold is None:
        raise ValueError("temperature fitting needs gold distributions")
    if not len(grid):
        raise ValueError("empty temperature grid")
    best_t, best_kl = None, np.inf
    for T in grid:
        kl = float(kl_divergence(gold, apply_temperature(logits, T)).mean())
        if kl < best_kl:
            best_t, best_kl = float(T), kl
    return best_t, best_kl


def fit_temperature(model, validation, grid):
    if validation.dists is None:
        raise ValueError(f"split '{validation.name}' has no gold distributions")
    return fit_temperature_logits(model.predict_logits(validation.tokens), validation.dists, grid)
