"""Distribution distances and evaluation reports.

Natural logarithms throughout. ``KL`` always means KL(gold || prediction).
"""
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .autograd import LOG_FLOOR
from .nn import softmax

LOG_BASE = "e"
JSD_MAX = math.sqrt(math.log(2.0))


def _pair(p, q):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    return p, q


def kl_divergence(p, q):
    """sum_i p_i ln(p_i / q_i); zero-mass p terms drop out, q floored at 1e-12.

    Accepts single vectors or (N, C) stacks (returns one value per row).
    """
    p, q = _pair(p, q)
    q = np.maximum(q, LOG_FLOOR)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0) / q), 0.0)
    return terms.sum(axis=-1)


def jsd(p, q):
    """Jensen-Shannon distance: sqrt(KL(p||m)/2 + KL(q||m)/2), m = (p + q)/2."""
    p, q = _pair(p, q)
    m = 0.5 * (p + q)
    val = 0.5 * kl_divergence(p, m) + 0.5 * kl_divergence(q, m)
    return np.sqrt(np.maximum(val, 0.0))


def entropy(p):
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return terms.sum(axis=-1)


def accuracy(preds, labels):
    return float(np.mean(np.argmax(preds, axis=-1) == np.asarray(labels)))


def diff_metric(preds, gold_dists, gold_labels):
    """Mean |gold[gt] - pred[gt]| over mispredicted samples.

    Returns ``(value, n_mispredicted)``; value is 0.0 when nothing is mispredicted.
    """
    preds = np.asarray(preds, dtype=np.float64)
    gold_dists = np.asarray(gold_dists, dtype=np.float64)
    gold_labels = np.asarray(gold_labels)
    if len(preds) == 0:
        raise ValueError("diff_metric needs at least one sample")
    if not (len(preds) == len(gold_dists) == len(gold_labels)):
        raise ValueError("predictions, gold distributions and labels must align")
    wrong = np.argmax(preds, axis=1) != gold_labels
    if not wrong.any():
        return 0.0, 0
    rows = np.flatnonzero(wrong)
    gt = gold_labels[rows]
    gaps = np.abs(gold_dists[rows, gt] - preds[rows, gt])
    return float(gaps.mean()), int(len(rows))


def pearson(xs, ys):
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1 or len(xs) < 2:
        raise ValueError("pearson needs two equal-length vectors with at least 2 entries")
    dx, dy = xs - xs.mean(), ys - ys.mean()
    sx, sy = np.sqrt((dx * dx).sum()), np.sqrt((dy * dy).sum())
    if sx == 0 or sy == 0:
        raise ValueError("pearson undefined for zero-variance input")
    return float(np.clip((dx * dy).sum() / (sx * sy), -1.0, 1.0))


@dataclass(frozen=True)
class EvalMode:
    """How predictions are produced: ``deterministic``, ``mc`` (k passes) or ``temperature`` (T)."""
    kind: str = "deterministic"
    k: int = None
    temperature: float = None

    @classmethod
    def parse(cls, text):
        """``deterministic`` | ``mc:<k>`` | ``temperature:<T>``."""
        name, _, arg = text.partition(":")
        if name == "deterministic":
            return cls()
        if name == "mc":
            return cls("mc", k=int(arg or 10))
        if name == "temperature":
            return cls("temperature", temperature=float(arg))
        raise ValueError(f"unknown evaluation mode {text!r}")

    def __str__(self):
        if self.kind == "mc":
            return f"mc:{self.k}"
        if self.kind == "temperature":
            return f"temperature:{self.temperature:g}"
        return "deterministic"


@dataclass
class MetricsReport:
    method: str
    seed: int
    n: int
    jsd: float
    kl: float
    accuracy: float
    diff: float
    n_mispredicted: int
    mean_entropy: float
    mode: str = "deterministic"
    log_base: str = LOG_BASE
    eval_checksum: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def no_mispredictions(self):
        return self.n_mispredicted == 0

    def to_text(self):
        lines = []
        for k, v in asdict(self).items():
            if k == "extra":
                continue
            lines.append(f"{k}={_fmt(v)}")
        for k, v in sorted(self.extra.items()):
            lines.append(f"extra.{k}={_fmt(v)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        raw, extra = {}, {}
        for line in text.splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            if key.startswith("extra."):
                extra[key[len("extra."):]] = _parse(val)
            else:
                raw[key] = val
        ints = {"seed", "n", "n_mispredicted"}
        floats = {"jsd", "kl", "accuracy", "diff", "mean_entropy"}
        kw = {}
        for k, v in raw.items():
            kw[k] = int(v) if k in ints else float(v) if k in floats else v
        return cls(**kw, extra=extra)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(v):
    for conv in (int, float):
        try:
            return conv(v)
        except ValueError:
            pass
    return v


def report_from_predictions(preds, split, method, seed=0, mode="deterministic", eval_checksum="", extra=None):
    if split.dists is None:
        raise ValueError(f"split '{split.name}' has no gold distributions")
    preds = np.asarray(preds, dtype=np.float64)
    d, n_wrong = diff_metric(preds, split.dists, split.labels)
    return MetricsReport(
        method=method, seed=seed, n=len(split),
        jsd=float(jsd(split.dists, preds).mean()),
        kl=float(kl_divergence(split.dists, preds).mean()),
        accuracy=accuracy(preds, split.labels),
        diff=d, n_mispredicted=n_wrong,
        mean_entropy=float(entropy(preds).mean()),
        mode=str(mode), eval_checksum=eval_checksum, extra=dict(extra or {}),
    )


def predict(model, tokens, mode=EvalMode()):
    """Main-classifier distributions under ``mode``."""
    if isinstance(mode, str):
        mode = EvalMode.parse(mode)
    if mode.kind == "deterministic":
        return softmax(model.predict_logits(tokens))
    if mode.kind == "temperature":
        if not mode.temperature or mode.temperature <= 0:
            raise ValueError("temperature must be positive")
        return softmax(model.predict_logits(tokens) / mode.temperature)
    if mode.kind == "mc":
        from .baselines import predict_mc
        return predict_mc(model, tokens, mode.k)
    raise ValueError(f"unknown mode {mode.kind!r}")


def evaluate(model, split, mode=EvalMode(), method="model", seed=0, eval_checksum="", extra=None):
    """Metrics of ``model`` on ``split``; leaves parameters untouched."""
    if split.dists is None:
        raise ValueError(f"split '{split.name}' has no gold distributions")
    if isinstance(mode, str):
        mode = EvalMode.parse(mode)
    preds = predict(model, split.tokens, mode)
    return report_from_predictions(preds, split, method, seed, mode, eval_checksum, extra)
