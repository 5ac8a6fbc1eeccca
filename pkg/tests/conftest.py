import numpy as np
import pytest

from ambikd.datagen import CorpusConfig, generate_corpus
from ambikd.encoder import EncoderConfig, build_model


def tiny_encoder(**kw):
    base = dict(vocab_size=60, max_seq_len=8, num_layers=3, hidden_dim=16, num_heads=2,
                ffn_dim=32, dropout=0.1, num_classes=3, seed=0, dtype="float64")
    base.update(kw)
    return EncoderConfig(**base)


def tiny_corpus_config(**kw):
    base = dict(vocab_size=60, seq_len=8, train_size=96, validation_size=40, eval_size=40,
                signature_tokens=6, min_signal=3, max_signal=6, seed=0)
    base.update(kw)
    return CorpusConfig(**base)


@pytest.fixture
def tiny_model():
    return build_model(tiny_encoder())


@pytest.fixture(scope="session")
def tiny_splits():
    return generate_corpus(tiny_corpus_config())


def random_simplex(rng, n, c, sparse=False):
    x = rng.gamma(0.5, size=(n, c))
    if sparse:
        x[rng.random((n, c)) < 0.3] = 0.0
        x[x.sum(axis=1) == 0, 0] = 1.0
    return x / x.sum(axis=1, keepdims=True)


# acceptance criteria register here; the summary hook prints one line each
ACCEPTANCE = {}


@pytest.fixture
def criterion():
    def record(number, title, ok, detail=""):
        ACCEPTANCE[number] = (title, bool(ok), detail)
        print(f"[criterion {number:2d}] {'PASS' if ok else 'FAIL'}  {title}: {detail}")
        assert ok, f"criterion {number} ({title}) failed: {detail}"
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{n:2d}. {'PASS' if ok else 'FAIL'}  {title}: {detail}")
