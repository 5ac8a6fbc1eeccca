"""Self-distillation for learning ambiguity distributions on a from-scratch layered encoder."""
from .config import RunConfig, load_config
from .datagen import CorpusConfig, generate_corpus, load_corpus
from .encoder import EncoderConfig, LayeredModel, build_model
from .metrics import MetricsReport, evaluate, jsd, kl_divergence
from .pipeline import METHODS, run_method, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "RunConfig", "load_config", "CorpusConfig", "generate_corpus", "load_corpus",
    "EncoderConfig", "LayeredModel", "build_model", "MetricsReport", "evaluate",
    "jsd", "kl_divergence", "METHODS", "run_method", "run_pipeline",
]
