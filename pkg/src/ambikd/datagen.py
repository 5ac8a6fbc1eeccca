"""Synthetic token-sequence corpora with known gold ambiguity distributions.

Every class owns a disjoint set of signature tokens; the rest of the
vocabulary is shared filler. A sample has ``n`` signal positions (the rest is
filler). For an unambiguous sample all signal tokens come from one class; for
an ambiguous one each signal token comes from class ``a`` with probability
``w ~ U(0.3, 0.7)`` and from class ``b`` otherwise.

Simulated annotators read the signal counts ``n_k`` and label with
probability ``pi_k ∝ (n_k + smoothing) ** concentration``, except that a
fraction ``annotator_noise`` (default 5%) of votes is cast uniformly at random. The gold
distribution is the empirical label histogram of ``annotators`` draws and the
gold label is its argmax (lowest index on ties).
"""
import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

SPLITS = ("train", "validation", "eval")
DIST_DECIMALS = 6


class DatasetFormatError(ValueError):
    pass


@dataclass
class CorpusConfig:
    num_classes: int = 3
    vocab_size: int = 500
    seq_len: int = 24
    train_size: int = 2000
    validation_size: int = 500
    eval_size: int = 500
    ambiguous_fraction: float = 0.3
    annotators: int = 100
    mixing_concentration: float = 1.0
    annotator_smoothing: float = 0.02
    annotator_noise: float = 0.05
    signature_tokens: int = 24
    min_signal: int = 6
    max_signal: int = 12
    mix_low: float = 0.3
    mix_high: float = 0.7
    seed: int = 0

    def validate(self):
        for name in ("train_size", "validation_size", "eval_size", "annotators", "seq_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if not 0.0 <= self.ambiguous_fraction <= 1.0:
            raise ValueError("ambiguous_fraction must be in [0, 1]")
        if self.num_classes * self.signature_tokens >= self.vocab_size:
            raise ValueError(f"vocab_size {self.vocab_size} too small for {self.num_classes} classes "
                             f"x {self.signature_tokens} signature tokens plus filler")
        if not 1 <= self.min_signal <= self.max_signal <= self.seq_len:
            raise ValueError("need 1 <= min_signal <= max_signal <= seq_len")
        if not 0.0 < self.mix_low <= self.mix_high < 1.0:
            raise ValueError("need 0 < mix_low <= mix_high < 1")
        if not 0.0 <= self.annotator_noise < 1.0:
            raise ValueError("annotator_noise must be in [0, 1)")
        if self.mixing_concentration <= 0 or self.annotator_smoothing <= 0:
            raise ValueError("mixing_concentration and annotator_smoothing must be positive")
        return self


@dataclass
class Split:
    """One dataset split. ``dists`` is None when gold distributions are absent.

    ``ambiguous`` marks generator-side ambiguous samples (not written to disk;
    None after a read).
    """
    name: str
    ids: np.ndarray
    tokens: np.ndarray
    labels: np.ndarray
    dists: np.ndarray = None
    ambiguous: np.ndarray = None

    def __len__(self):
        return len(self.ids)

    @property
    def num_classes(self):
        return self.dists.shape[1] if self.dists is not None else int(self.labels.max()) + 1

    def subset(self, mask_or_index):
        idx = np.asarray(mask_or_index)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return Split(self.name, self.ids[idx], self.tokens[idx], self.labels[idx],
                     None if self.dists is None else self.dists[idx],
                     None if self.ambiguous is None else self.ambiguous[idx])

    def onehot(self, num_classes=None):
        c = num_classes or self.num_classes
        return np.eye(c)[self.labels]


def _argmax_low(d):
    return np.argmax(d, axis=-1)


def _generate_split(name, n, first_id, cfg, signatures, filler, rng):
    C, T = cfg.num_classes, cfg.seq_len
    tokens = np.empty((n, T), dtype=np.int64)
    counts = np.zeros((n, C))
    ambiguous = rng.random(n) < cfg.ambiguous_fraction
    for s in range(n):
        n_sig = rng.integers(cfg.min_signal, cfg.max_signal + 1)
        pos = rng.permutation(T)
        sig_pos, fill_pos = pos[:n_sig], pos[n_sig:]
        if ambiguous[s]:
            a, b = rng.choice(C, size=2, replace=False)
            w = rng.uniform(cfg.mix_low, cfg.mix_high)
            cls = np.where(rng.random(n_sig) < w, a, b)
        else:
            cls = np.full(n_sig, rng.integers(C))
        tokens[s, sig_pos] = signatures[cls, rng.integers(cfg.signature_tokens, size=n_sig)]
        tokens[s, fill_pos] = filler[rng.integers(len(filler), size=len(fill_pos))]
        counts[s] = np.bincount(cls, minlength=C)
    pi = (counts + cfg.annotator_smoothing) ** cfg.mixing_concentration
    pi /= pi.sum(axis=1, keepdims=True)
    pi = (1.0 - cfg.annotator_noise) * pi + cfg.annotator_noise / C
    votes = np.stack([rng.multinomial(cfg.annotators, p) for p in pi])
    dists = votes / cfg.annotators
    return Split(name, np.arange(first_id, first_id + n, dtype=np.int64), tokens,
                 _argmax_low(dists).astype(np.int64), dists, ambiguous)


def generate_corpus(cfg):
    """Return ``{"train", "validation", "eval"}`` splits with disjoint ids."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(cfg.vocab_size)
    k = cfg.signature_tokens
    signatures = perm[:cfg.num_classes * k].reshape(cfg.num_classes, k)
    filler = np.sort(perm[cfg.num_classes * k:])
    sizes = {"train": cfg.train_size, "validation": cfg.validation_size, "eval": cfg.eval_size}
    out, next_id = {}, 0
    for name in SPLITS:
        out[name] = _generate_split(name, sizes[name], next_id, cfg, signatures, filler, rng)
        next_id += sizes[name]
    return out


def _fmt_dist(d):
    return "[" + ", ".join(f"{x:.{DIST_DECIMALS}f}" for x in d) + "]"


def write_dataset(split, path, include_dists=True):
    """One JSON object per line: ``id``, ``tokens``, ``label`` and optionally ``dist``."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for i in range(len(split)):
            line = (f'{{"id": {int(split.ids[i])}, "tokens": {json.dumps(split.tokens[i].tolist())}, '
                    f'"label": {int(split.labels[i])}')
            if include_dists and split.dists is not None:
                line += f', "dist": {_fmt_dist(split.dists[i])}'
            fh.write(line + "}\n")


def read_dataset(path, name=None, require_dists=False, simplex_tol=1e-4):
    path = Path(path)
    name = name or path.stem
    ids, tokens, labels, dists = [], [], [], []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetFormatError(f"{path}:{lineno}: malformed JSON ({e.msg})") from None
            for key in ("id", "tokens", "label"):
                if key not in rec:
                    raise DatasetFormatError(f"{path}:{lineno}: missing field '{key}'")
            d = rec.get("dist")
            if d is None:
                if require_dists:
                    raise DatasetFormatError(f"{path}:{lineno}: missing field 'dist' (gold distribution "
                                             f"required for split '{name}')")
            else:
                d = np.asarray(d, dtype=np.float64)
                if np.any(d < 0) or abs(d.sum() - 1.0) > simplex_tol:
                    raise DatasetFormatError(f"{path}:{lineno}: field 'dist' is not on the simplex "
                                             f"(sum={d.sum():.6f})")
            ids.append(int(rec["id"]))
            tokens.append(rec["tokens"])
            labels.append(int(rec["label"]))
            dists.append(d)
    if not ids:
        raise DatasetFormatError(f"{path}: no records")
    lengths = {len(t) for t in tokens}
    if len(lengths) != 1:
        raise DatasetFormatError(f"{path}: token sequences have differing lengths {sorted(lengths)}")
    have = [d is not None for d in dists]
    if any(have) and not all(have):
        missing = have.index(False) + 1
        raise DatasetFormatError(f"{path}: record {missing} missing field 'dist' while others have it")
    return Split(name, np.asarray(ids, dtype=np.int64), np.asarray(tokens, dtype=np.int64),
                 np.asarray(labels, dtype=np.int64), np.stack(dists) if all(have) else None)


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_corpus(splits, out_dir, cfg):
    """Write ``<split>.jsonl`` files plus ``manifest.json`` (config, seed, checksums)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    checksums = {}
    for name in SPLITS:
        p = out_dir / f"{name}.jsonl"
        write_dataset(splits[name], p)
        checksums[name] = file_sha256(p)
    manifest = {"config": asdict(cfg), "seed": cfg.seed, "checksums": checksums,
                "sizes": {n: len(splits[n]) for n in SPLITS}}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_corpus(data_dir):
    """Read all three splits; validation and eval must carry gold distributions."""
    data_dir = Path(data_dir)
    out = {}
    for name in SPLITS:
        p = data_dir / f"{name}.jsonl"
        if not p.exists():
            raise FileNotFoundError(f"missing split file {p}")
        out[name] = read_dataset(p, name=name, require_dists=name != "train")
    seen = set()
    for name in SPLITS:
        ids = set(out[name].ids.tolist())
        if ids & seen:
            raise DatasetFormatError(f"split '{name}' shares ids with another split")
        seen |= ids
    return out


def read_manifest(data_dir):
    p = Path(data_dir) / "manifest.json"
    return json.loads(p.read_text()) if p.exists() else None
