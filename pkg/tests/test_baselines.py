import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ambikd import autograd as ag
from ambikd.baselines import (apply_temperature, fit_temperature_logits, predict_mc, smooth_labels,
                              train_ldl, train_ls, train_ord)
from ambikd.datagen import Split
from ambikd.encoder import build_model
from ambikd.nn import softmax
from ambikd.training import TrainConfig
from conftest import tiny_encoder


def test_label_smoothing_examples():
    np.testing.assert_allclose(smooth_labels([0], 3, 0.1)[0], [0.9 + 0.1 / 3, 0.1 / 3, 0.1 / 3])
    np.testing.assert_allclose(smooth_labels([0], 3, 0.1)[0], [0.9333, 0.0333, 0.0333], atol=1e-4)
    np.testing.assert_array_equal(smooth_labels([2, 0], 3, 0.0), np.eye(3)[[2, 0]])


@given(st.floats(0, 0.99), st.integers(2, 10))
def test_smoothed_targets_on_simplex(alpha, c):
    t = smooth_labels(np.arange(c), c, alpha)
    np.testing.assert_allclose(t.sum(axis=1), 1.0, atol=1e-12)


def test_temperature_examples():
    np.testing.assert_allclose(apply_temperature([2.0, 0.0], 2.0), [0.7311, 0.2689], atol=1e-4)
    np.testing.assert_allclose(apply_temperature([2.0, 0.0], 1.0), softmax(np.array([2.0, 0.0])))
    np.testing.assert_allclose(apply_temperature([5.0, -3.0, 1.0], 1e6), np.full(3, 1 / 3), atol=1e-5)
    with pytest.raises(ValueError):
        apply_temperature([1.0, 0.0], 0.0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 20))
def test_temperature_preserves_argmax(seed, T):
    z = np.random.default_rng(seed).standard_normal((20, 4)) * 3
    assert np.array_equal(apply_temperature(z, T).argmax(1), z.argmax(1))


def test_fit_temperature_recovers_scaling():
    grid = [0.25 * i for i in range(1, 17)]
    rng = np.random.default_rng(0)
    z = rng.standard_normal((400, 3))
    gold = softmax(z)
    T, kl = fit_temperature_logits(z, gold, grid)
    assert T == 1.0 and kl == pytest.approx(0.0, abs=1e-12)
    T2, _ = fit_temperature_logits(2 * z, gold, grid)
    assert T2 == 2.0
    with pytest.raises(ValueError):
        fit_temperature_logits(z, None, grid)


def test_ord_first_batch_loss_is_onehot_ce(tiny_splits):
    """The first recorded ORD loss equals plain one-hot CE at initialization."""
    from ambikd.training import minibatches, phase_rng
    from ambikd.baselines import PHASE_BASELINE
    tr = tiny_splits["train"]
    m = build_model(tiny_encoder())
    idx = next(minibatches(len(tr), 8, phase_rng(0, PHASE_BASELINE)))
    rng_state = m.rng.bit_generator.state
    out = m.forward(tr.tokens[idx], train=True, layers=[3])
    expected = float(ag.cross_entropy_logits(out[3], np.eye(3)[tr.labels[idx]]).data)
    m.rng.bit_generator.state = rng_state

    losses = []
    import ambikd.baselines as B
    orig = B.ag.cross_entropy_logits

    def spy(logits, target, reduction="mean"):
        out = orig(logits, target, reduction)
        losses.append(float(out.data))
        return out
    B.ag.cross_entropy_logits = spy
    try:
        train_ord(m, tr, TrainConfig(epochs=1, batch_size=8))
    finally:
        B.ag.cross_entropy_logits = orig
    assert losses[0] == pytest.approx(expected, abs=1e-12)


def test_baselines_deterministic_and_leave_probes(tiny_splits):
    tr = tiny_splits["train"]
    tc = TrainConfig(epochs=1, batch_size=16)
    a, b = build_model(tiny_encoder()), build_model(tiny_encoder())
    probe_before = a.params.checksum("probe-1")
    train_ord(a, tr, tc)
    train_ord(b, tr, tc)
    assert a.params.checksum() == b.params.checksum()
    assert a.params.checksum("probe-1") == probe_before


def test_ldl_with_onehot_gold_equals_ord(tiny_splits):
    tr = tiny_splits["train"]
    onehot = Split(tr.name, tr.ids, tr.tokens, tr.labels, np.eye(3)[tr.labels])
    tc = TrainConfig(epochs=1, batch_size=16)
    a, b = build_model(tiny_encoder()), build_model(tiny_encoder())
    train_ord(a, tr, tc)
    train_ldl(b, onehot, tc)
    assert a.params.checksum() == b.params.checksum()
    with pytest.raises(ValueError):
        train_ldl(b, Split(tr.name, tr.ids, tr.tokens, tr.labels, None), tc)
    with pytest.raises(ValueError):
        train_ls(b, tr, tc, alpha=0.0)


def test_mc_dropout_properties(tiny_splits):
    m = build_model(tiny_encoder())
    tok = tiny_splits["eval"].tokens[:30]
    p = predict_mc(m, tok, 10, seed=0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
    assert np.array_equal(p, predict_mc(m, tok, 10, seed=0))
    with pytest.raises(ValueError):
        predict_mc(m, tok, 0)

    off = build_model(tiny_encoder(dropout=0.0))
    np.testing.assert_allclose(predict_mc(off, tok, 1), softmax(off.predict_logits(tok)), atol=1e-12)

    singles = np.stack([predict_mc(m, tok, 1, seed=s) for s in range(5)])
    assert singles.var(axis=0).max() > 0

    def spread(k, reps=12):
        return np.stack([predict_mc(m, tok, k, seed=100 + r) for r in range(reps)]).var(axis=0).mean()
    v1, v10, v100 = spread(1), spread(10), spread(100, reps=6)
    assert v1 > v10 > v100


def test_mc_leaves_model_rng_alone(tiny_splits):
    m = build_model(tiny_encoder())
    state = m.rng.bit_generator.state
    predict_mc(m, tiny_splits["eval"].tokens[:4], 3)
    assert m.rng.bit_generator.state == state
