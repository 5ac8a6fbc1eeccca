import numpy as np
import pytest

from ambikd import autograd as ag
from ambikd.encoder import build_model
from ambikd.nn import AdamW, ConstantLR, LinearDecay, ParameterSet, restore_weights, snapshot_weights
from conftest import tiny_encoder


def _scalar_param(value=1.0, ndim=0):
    P = ParameterSet()
    P.add("w", np.full((1,) * ndim, value, dtype=np.float64) if ndim else np.array(value), "g")
    return P


def test_adamw_single_step_oracle():
    P = _scalar_param(1.0)
    P["w"].grad = np.array(1.0)
    AdamW(P, ConstantLR(0.1), weight_decay=0.0).step()
    # hand computation: m = 0.1, v = 0.001, mhat = 1, vhat = 1
    m, v = 0.1 * 1.0, 0.001 * 1.0
    mhat, vhat = m / (1 - 0.9), v / (1 - 0.999)
    expected = 1.0 - 0.1 * mhat / (np.sqrt(vhat) + 1e-8)
    assert float(P["w"].data) == pytest.approx(expected, abs=1e-15)
    assert float(P["w"].data) == pytest.approx(0.9, abs=1e-8)


def test_adamw_zero_gradient_no_decay_is_noop():
    P = _scalar_param(0.7, ndim=2)
    P["w"].grad = np.zeros((1, 1))
    AdamW(P, ConstantLR(0.1), weight_decay=0.0).step()
    assert P["w"].data[0, 0] == 0.7


def test_adamw_decoupled_decay():
    P = _scalar_param(2.0, ndim=2)
    P["w"].grad = np.zeros((1, 1))
    AdamW(P, ConstantLR(0.1), weight_decay=0.1).step()
    assert P["w"].data[0, 0] == pytest.approx(0.99 * 2.0, abs=1e-15)


def test_adamw_errors():
    P = _scalar_param(1.0, ndim=2)
    opt = AdamW(P, ConstantLR(0.1))
    with pytest.raises(ValueError, match="missing gradient"):
        opt.step()
    P["w"].grad = np.zeros((2, 2))
    with pytest.raises(ValueError, match="shape"):
        opt.step()


def test_linear_decay_schedule():
    s = LinearDecay(1.0, 4)
    seen = []
    for _ in range(5):
        seen.append(s.current())
        s.advance()
    assert seen == [1.0, 0.75, 0.5, 0.25, 0.0]


def _train_steps(model, n, rng):
    opt = AdamW(model.params, ConstantLR(1e-2), weight_decay=0.1)
    for _ in range(n):
        tok = rng.integers(0, model.config.vocab_size, size=(4, 8))
        out = model.forward(tok, train=True)
        loss = sum((ag.cross_entropy_logits(out[i], np.eye(3)[[0, 1, 2, 0]]) for i in out), 0.0)
        model.params.zero_grad()
        loss.backward()
        opt.step()
    model.params.zero_grad()
    return opt


def test_snapshot_restore_bitwise_and_idempotent():
    m = build_model(tiny_encoder())
    tok = np.random.default_rng(9).integers(0, 60, size=(5, 8))
    before = m.predict_logits(tok)
    snap = m.snapshot()
    _train_steps(m, 3, np.random.default_rng(0))
    assert m.params.checksum() != snap_checksum(snap, m)
    m.restore(snap)
    for n, arr in snap.tensors.items():
        assert np.array_equal(m.params[n].data, arr)
    assert np.array_equal(m.predict_logits(tok), before)
    m.restore(snap)
    for n, arr in snap.tensors.items():
        assert np.array_equal(m.params[n].data, arr)


def snap_checksum(snap, model):
    P = ParameterSet()
    for n, arr in snap.tensors.items():
        P.add(n, arr.copy(), model.params.group_of(n))
    return P.checksum()


def test_restore_structural_mismatch():
    P = ParameterSet()
    P.add("a", np.zeros(3), "g")
    snap = snapshot_weights(P)
    Q = ParameterSet()
    Q.add("a", np.zeros(4), "g")
    with pytest.raises(ValueError):
        restore_weights(Q, snap)
    R = ParameterSet()
    R.add("b", np.zeros(3), "g")
    with pytest.raises(ValueError):
        restore_weights(R, snap)


def test_frozen_parameters_bitwise_unchanged():
    m = build_model(tiny_encoder())
    frozen = ["backbone-embed", "probe-1"]
    m.params.freeze(frozen)
    before = {g: m.params.checksum(g) for g in frozen}
    other = m.params.checksum("backbone-layer-1")
    _train_steps(m, 4, np.random.default_rng(1))
    for g in frozen:
        assert m.params.checksum(g) == before[g]
    assert m.params.checksum("backbone-layer-1") != other


def test_same_seed_same_parameters_after_training():
    a, b = build_model(tiny_encoder()), build_model(tiny_encoder())
    _train_steps(a, 3, np.random.default_rng(5))
    _train_steps(b, 3, np.random.default_rng(5))
    assert a.params.checksum() == b.params.checksum()
