"""Three-phase self-distillation for learning ambiguity distributions.

1. Warm-up: train the backbone and every probe jointly until the selected
   source layer repeats, then score each training sample's level of
   ambiguity (LA) and keep the lowest-scoring fraction.
2. Reset to the initial weights and run two-step distillation per batch:
   the main network learns from labels plus the source probe's distribution,
   then the source probe alone learns from labels plus the main distribution.
3. Re-calibrate: one epoch on the ambiguous subset towards half label, half
   uniform.
"""
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .metrics import entropy
from .training import Freeze, make_optimizer, minibatches, num_batches, phase_rng

log = logging.getLogger(__name__)

PHASE_WARMUP, PHASE_LAD, PHASE_RC = 1, 2, 3


@dataclass
class WarmupConfig:
    max_warmup_epochs: int = 5
    ambiguous_fraction: float = 0.10
    freeze_backbone: bool = False
    batch_size: int = None
    lr: float = None

    def validate(self):
        if not 0.0 < self.ambiguous_fraction < 1.0:
            raise ValueError("ambiguous_fraction must be in (0, 1)")
        if self.max_warmup_epochs < 1:
            raise ValueError("max_warmup_epochs must be >= 1")
        return self


@dataclass
class DistillConfig:
    lam: float = 0.6
    recalibration_epochs: int = 1
    # None: mean learning rate of the last LAD epoch, held constant for the epoch
    recalibration_lr: float = None
    recalibrate: bool = True

    def validate(self):
        if not 0.0 < self.lam < 1.0:
            raise ValueError("lam must be in (0, 1)")
        if self.recalibration_epochs != 1:
            raise ValueError("re-calibration runs exactly one epoch")
        return self


@dataclass
class EntropyProfile:
    """``entropies[e][i]``: mean validation entropy of probe i+1 after epoch e+1."""
    entropies: list = field(default_factory=list)
    selections: list = field(default_factory=list)

    def to_csv(self):
        L = len(self.entropies[0]) if self.entropies else 0
        head = "layer," + ",".join(f"epoch{e + 1}" for e in range(len(self.entropies)))
        rows = [head]
        for i in range(L):
            rows.append(f"{i + 1}," + ",".join(f"{ep[i]:.6f}" for ep in self.entropies))
        rows.append("selected," + ",".join(str(s) for s in self.selections))
        return "\n".join(rows) + "\n"


@dataclass
class SourceSelection:
    source_idx: int
    epochs: int
    stabilized: bool


@dataclass
class AmbiguityRecord:
    ids: np.ndarray
    la: np.ndarray
    ambiguous_ids: np.ndarray

    def is_ambiguous(self):
        return np.isin(self.ids, self.ambiguous_ids)


@dataclass
class WarmupResult:
    selection: SourceSelection
    profile: EntropyProfile
    ambiguity: AmbiguityRecord
    warnings: list = field(default_factory=list)


def select_source_layer(entropies):
    """1-based layer just before the largest drop ``e[i] - e[i+1]``; ties go to the lowest i."""
    e = np.asarray(entropies, dtype=np.float64)
    if e.ndim != 1 or len(e) < 2:
        raise ValueError("need per-layer entropies for at least 2 layers")
    return int(np.argmax(e[:-1] - e[1:])) + 1


def layer_entropies(model, split, batch_size=256):
    """Mean entropy of each probe's distribution over ``split``."""
    probs = model.all_layer_probs(split.tokens, batch_size)
    return entropy(probs).mean(axis=1)


def compute_la(confidences, source_idx):
    """Mean ground-truth confidence over layers ``source_idx..L`` (1-based).

    ``confidences`` is (L,) for one sample or (L, N) for many.
    """
    conf = np.asarray(confidences, dtype=np.float64)
    L = conf.shape[0]
    if not 1 <= source_idx <= L:
        raise ValueError(f"source_idx {source_idx} outside 1..{L}")
    return conf[source_idx - 1:].mean(axis=0)


def ambiguous_count(n, m):
    # round half up; Python's round() would send 0.5 to the even neighbour
    return int(math.floor(m * n + 0.5))


def extract_ambiguous(scores, m):
    """Ids of the ``round(m * N)`` lowest scores; ties broken by ascending id.

    ``scores`` is a mapping id -> LA, or an ``(ids, values)`` pair of arrays.
    """
    if isinstance(scores, dict):
        ids = np.fromiter(scores.keys(), dtype=np.int64, count=len(scores))
        vals = np.fromiter(scores.values(), dtype=np.float64, count=len(scores))
    else:
        ids, vals = (np.asarray(a) for a in scores)
    if len(ids) == 0:
        raise ValueError("no scores given")
    k = ambiguous_count(len(ids), m)
    if k == 0:
        raise ValueError(f"ambiguous fraction {m} of {len(ids)} samples rounds to 0")
    order = np.lexsort((ids, vals))
    return np.sort(ids[order[:k]])


def _onehot(labels, C, dtype):
    return np.eye(C, dtype=dtype)[labels]


def warmup_train(model, train, validation, cfg, train_cfg):
    """Joint probe training until the source-layer choice repeats; then LA scoring."""
    cfg.validate()
    L, C = model.config.num_layers, model.config.num_classes
    bs = cfg.batch_size or train_cfg.batch_size
    lr = cfg.lr or train_cfg.lr
    steps = cfg.max_warmup_epochs * num_batches(len(train), bs)
    opt = make_optimizer(model.params, train_cfg, total_steps=steps, lr=lr)
    rng = phase_rng(train_cfg.seed, PHASE_WARMUP)
    y_all = _onehot(train.labels, C, model.dtype)
    groups = [model.probe_group(i) for i in range(1, L + 1)]
    if not cfg.freeze_backbone:
        groups += model.backbone_groups()

    profile = EntropyProfile()
    notes = []
    stabilized = False
    with Freeze(model.params, groups):
        for epoch in range(1, cfg.max_warmup_epochs + 1):
            for idx in minibatches(len(train), bs, rng):
                out = model.forward(train.tokens[idx], train=True)
                loss = sum((ag.cross_entropy_logits(out[i], y_all[idx]) for i in range(1, L + 1)), 0.0)
                model.params.zero_grad()
                loss.backward()
                opt.step()
                opt.schedule.advance()
            ent = layer_entropies(model, validation)
            sel = select_source_layer(ent)
            profile.entropies.append([float(x) for x in ent])
            profile.selections.append(sel)
            log.info("warm-up epoch %d: entropies %s -> source layer %d",
                     epoch, np.round(ent, 4).tolist(), sel)
            if epoch >= 2 and profile.selections[-2] == sel:
                stabilized = True
                break
    model.params.zero_grad()
    if not stabilized:
        msg = (f"source layer did not stabilize within {cfg.max_warmup_epochs} warm-up epochs; "
               f"using last selection {profile.selections[-1]}")
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    selection = SourceSelection(profile.selections[-1], len(profile.selections), stabilized)
    ambiguity = score_ambiguity(model, train, selection.source_idx, cfg.ambiguous_fraction)
    return WarmupResult(selection, profile, ambiguity, notes)


def score_ambiguity(model, train, source_idx, m):
    probs = model.all_layer_probs(train.tokens)
    conf = probs[:, np.arange(len(train)), train.labels]
    la = compute_la(conf, source_idx)
    amb = extract_ambiguous((train.ids, la), m)
    return AmbiguityRecord(train.ids.copy(), la, amb)


def reset_to_initial(model):
    if getattr(model, "init_snapshot", None) is None:
        raise RuntimeError("model has no initialization snapshot to reset to")
    model.reset_to_init()
    model.params.zero_grad()
    return model


def _distill_loss(student_logits, teacher_logits, y, lam):
    teacher = ag.softmax(teacher_logits.detach())
    return (lam * ag.cross_entropy_logits(student_logits, y)
            + (1.0 - lam) * ag.cross_entropy_logits(student_logits, teacher))


def distill_batch(model, opt, tokens, y, lam, source_idx, on_step=None):
    """Step 1 (main network) then step 2 (source probe only) on one batch.

    ``y`` is the one-hot label matrix. Returns ``(loss_main, loss_src)``.
    ``on_step(name)`` is invoked after each parameter update.
    """
    L = model.config.num_layers
    if not 1 <= source_idx < L:
        raise ValueError(f"source_idx must be a lower layer in 1..{L - 1}, got {source_idx}")
    layers = [source_idx, L]

    with Freeze(model.params, model.main_network_groups()):
        out = model.forward(tokens, train=True, layers=layers)
        loss_main = _distill_loss(out[L], out[source_idx], y, lam)
        model.params.zero_grad()
        loss_main.backward()
        opt.step()
    if on_step is not None:
        on_step("step1")

    with Freeze(model.params, [model.probe_group(source_idx)]):
        out = model.forward(tokens, train=True, layers=layers)
        loss_src = _distill_loss(out[source_idx], out[L], y, lam)
        model.params.zero_grad()
        loss_src.backward()
        opt.step()
    model.params.zero_grad()
    if on_step is not None:
        on_step("step2")
    return float(loss_main.data), float(loss_src.data)


@dataclass
class LADResult:
    epoch_loss_main: list = field(default_factory=list)
    epoch_loss_src: list = field(default_factory=list)
    step1_updates: int = 0
    step2_updates: int = 0
    optimizer: object = None


def train_lad(model, train, cfg, train_cfg, source_idx, on_step=None):
    """Two-step distillation for ``train_cfg.epochs`` epochs with linear LR decay."""
    cfg.validate()
    C = model.config.num_classes
    bs = train_cfg.batch_size
    opt = make_optimizer(model.params, train_cfg,
                         total_steps=train_cfg.epochs * num_batches(len(train), bs))
    rng = phase_rng(train_cfg.seed, PHASE_LAD)
    y_all = _onehot(train.labels, C, model.dtype)
    res = LADResult(optimizer=opt)
    for epoch in range(1, train_cfg.epochs + 1):
        lm, ls = [], []
        for idx in minibatches(len(train), bs, rng):
            a, b = distill_batch(model, opt, train.tokens[idx], y_all[idx], cfg.lam, source_idx, on_step)
            opt.schedule.advance()
            res.step1_updates += 1
            res.step2_updates += 1
            lm.append(a)
            ls.append(b)
        res.epoch_loss_main.append(float(np.mean(lm)) if lm else float("nan"))
        res.epoch_loss_src.append(float(np.mean(ls)) if ls else float("nan"))
        if lm:
            log.info("LAD epoch %d: loss_main %.4f loss_src %.4f", epoch,
                     res.epoch_loss_main[-1], res.epoch_loss_src[-1])
    return res


def recalibration_target(labels, C, dtype=np.float64):
    return 0.5 * _onehot(labels, C, dtype) + 0.5 / C


def recalibrate(model, subset, train_cfg, lr, optimizer=None, on_step=None):
    """One epoch over ``subset`` towards 0.5 * one-hot + 0.5 * uniform, main network only."""
    if len(subset) == 0:
        raise ValueError("re-calibration needs a non-empty ambiguous subset")
    C = model.config.num_classes
    L = model.config.num_layers
    if optimizer is None:
        optimizer = make_optimizer(model.params, train_cfg, lr=lr)
    rng = phase_rng(train_cfg.seed, PHASE_RC)
    target = recalibration_target(subset.labels, C, model.dtype)
    losses = []
    with Freeze(model.params, model.main_network_groups()):
        for idx in minibatches(len(subset), train_cfg.batch_size, rng):
            out = model.forward(subset.tokens[idx], train=True, layers=[L])
            loss = ag.cross_entropy_logits(out[L], target[idx])
            model.params.zero_grad()
            loss.backward()
            optimizer.step(lr=lr)
            losses.append(float(loss.data))
            if on_step is not None:
                on_step("recalibrate")
    model.params.zero_grad()
    return losses
