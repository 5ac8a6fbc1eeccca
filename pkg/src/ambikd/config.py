"""Declarative run configuration (YAML or JSON).

Top-level keys: ``seed``, ``output_dir``, ``corpus``, ``encoder``, ``train``,
``warmup``, ``distill``, ``baseline``. Every key is optional; unknown keys are
rejected with the offending dotted path in the message.
"""
import dataclasses
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .baselines import BaselineConfig
from .datagen import CorpusConfig
from .distill import DistillConfig, WarmupConfig
from .encoder import EncoderConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "runs"
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    encoder: EncoderConfig = field(default_factory=lambda: EncoderConfig(dtype="float32"))
    train: TrainConfig = field(default_factory=TrainConfig)
    warmup: WarmupConfig = field(default_factory=WarmupConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)

    def resolved(self, seed=None):
        """Copy with the run seed pushed into every seeded section.

        The corpus keeps its own seed so several training seeds can share one corpus.
        """
        seed = self.seed if seed is None else seed
        cfg = dataclasses.replace(
            self, seed=seed,
            encoder=dataclasses.replace(self.encoder, seed=seed),
            train=dataclasses.replace(self.train, seed=seed),
        )
        cfg.validate()
        return cfg

    def validate(self):
        for name in ("corpus", "encoder", "train", "warmup", "distill", "baseline"):
            try:
                getattr(self, name).validate()
            except ValueError as e:
                raise ConfigError(f"{name}: {e}") from None
        if self.encoder.num_classes != self.corpus.num_classes:
            raise ConfigError("encoder.num_classes must equal corpus.num_classes")
        if self.encoder.vocab_size < self.corpus.vocab_size:
            raise ConfigError("encoder.vocab_size must cover corpus.vocab_size")
        if self.encoder.max_seq_len < self.corpus.seq_len:
            raise ConfigError("encoder.max_seq_len must cover corpus.seq_len")
        return self

    def to_dict(self):
        return asdict(self)


_SECTIONS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _build(cls, data, path):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}: unknown field")
    kwargs = {}
    for k, v in data.items():
        default = getattr(cls(), k)
        if isinstance(default, bool) and not isinstance(v, bool):
            raise ConfigError(f"{path}.{k}: expected a boolean, got {v!r}")
        if isinstance(default, (int, float)) and not isinstance(default, bool) and v is not None:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"{path}.{k}: expected a number, got {v!r}")
            if isinstance(default, int) and not isinstance(v, int):
                raise ConfigError(f"{path}.{k}: expected an integer, got {v!r}")
        kwargs[k] = v
    return cls(**kwargs)


def config_from_dict(data):
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    unknown = sorted(set(data) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown top-level field")
    kwargs = {}
    for name, f in _SECTIONS.items():
        if name not in data:
            continue
        if name in ("seed", "output_dir"):
            kwargs[name] = data[name]
            continue
        section_cls = type(f.default_factory())
        section = _build(section_cls, data[name], name)
        if name == "encoder" and "dtype" not in (data[name] or {}):
            section.dtype = "float32"
        kwargs[name] = section
    if not isinstance(kwargs.get("seed", 0), int):
        raise ConfigError("seed: expected an integer")
    cfg = RunConfig(**kwargs)
    cfg.validate()
    return cfg


def load_config(path):
    """Parse a YAML/JSON config file. Returns ``(RunConfig, raw_text)``."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"{path}: cannot parse ({e})") from None
    return config_from_dict(data), text


def dump_config(cfg):
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
