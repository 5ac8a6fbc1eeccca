import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ambikd import autograd as ag
from ambikd.distill import (DistillConfig, WarmupConfig, ambiguous_count, compute_la, distill_batch,
                            extract_ambiguous, recalibrate, recalibration_target, reset_to_initial,
                            select_source_layer, train_lad, warmup_train)
from ambikd.encoder import build_model
from ambikd.training import TrainConfig, make_optimizer
from conftest import tiny_encoder


def brute_force_source(e):
    best, best_i = -math.inf, None
    for i in range(len(e) - 1):
        drop = e[i] - e[i + 1]
        if drop > best:
            best, best_i = drop, i + 1
    return best_i


def test_selection_examples():
    assert select_source_layer([1.05, 1.02, 0.98, 0.95, 0.40, 0.35]) == 4
    assert select_source_layer([1.0, 0.5, 0.5, 0.0, 0.0]) == 1
    with pytest.raises(ValueError):
        select_source_layer([1.0])


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=2, max_size=8))
def test_selection_matches_brute_force_with_ties(levels):
    e = [x / 4 for x in levels]
    assert select_source_layer(e) == brute_force_source(e)


def test_la_examples():
    assert compute_la([0.1, 0.2, 0.6, 0.9], 3) == pytest.approx(0.75)
    assert compute_la(np.ones(5), 2) == 1.0
    assert compute_la([0.9, 0.9, 0.9, 0.2, 0.3, 0.4], 4) == pytest.approx(0.3)
    with pytest.raises(ValueError):
        compute_la([0.5, 0.5], 3)
    with pytest.raises(ValueError):
        compute_la([0.5, 0.5], 0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=8), st.data())
def test_la_monotone(conf, data):
    L = len(conf)
    src = data.draw(st.integers(1, L))
    j = data.draw(st.integers(0, L - 1))
    bumped = list(conf)
    bumped[j] = min(1.0, bumped[j] + data.draw(st.floats(0, 1)))
    assert compute_la(bumped, src) >= compute_la(conf, src)


def test_extraction_examples():
    scores = {i: 0.5 + 0.01 * i for i in range(10)}
    scores[7] = 0.1
    assert extract_ambiguous(scores, 0.1).tolist() == [7]
    assert extract_ambiguous({i: 0.3 for i in (9, 4, 6, 1)}, 0.5).tolist() == [1, 4]
    with pytest.raises(ValueError):
        extract_ambiguous({1: 0.2, 2: 0.3}, 0.1)
    rng = np.random.default_rng(0)
    ids = rng.permutation(5000)[:2000]
    vals = rng.random(2000)
    out = extract_ambiguous((ids, vals), 0.1)
    assert len(out) == 200
    inside = np.isin(ids, out)
    assert vals[inside].max() <= vals[~inside].min()


@pytest.mark.parametrize("n,m,k", [(10, 0.25, 3), (10, 0.15, 2), (2000, 0.1, 200), (5, 0.5, 3), (7, 0.1, 1)])
def test_ambiguous_count_round_half_up(n, m, k):
    assert ambiguous_count(n, m) == k


def test_distill_loss_example():
    """λ=0.6 with the given main/source distributions gives 0.6627."""
    y = np.array([[1.0, 0.0, 0.0]])
    main = np.log([[0.7, 0.2, 0.1]])
    src = np.log([[0.5, 0.3, 0.2]])
    student = ag.Tensor(main, requires_grad=True)
    teacher = ag.softmax(ag.Tensor(src).detach())
    loss = 0.6 * ag.cross_entropy_logits(student, y) + 0.4 * ag.cross_entropy_logits(student, teacher)
    oracle = 0.6 * -math.log(0.7) + 0.4 * -(0.5 * math.log(0.7) + 0.3 * math.log(0.2) + 0.2 * math.log(0.1))
    assert float(loss.data) == pytest.approx(oracle, abs=1e-12)
    assert oracle == pytest.approx(0.6627, abs=1e-4)


def test_teacher_equal_to_label_collapses():
    y = np.array([[0.0, 1.0, 0.0]])
    z = ag.Tensor(np.array([[0.3, -0.2, 1.0]]))
    a = 0.6 * ag.cross_entropy_logits(z, y) + 0.4 * ag.cross_entropy_logits(z, y)
    assert float(a.data) == pytest.approx(float(ag.cross_entropy_logits(z, y).data), abs=1e-15)


def _small_batch(model, n=6, seed=0):
    rng = np.random.default_rng(seed)
    return rng.integers(0, model.config.vocab_size, size=(n, 8)), np.eye(3)[rng.integers(0, 3, n)]


def test_distill_batch_step_isolation():
    m = build_model(tiny_encoder())
    opt = make_optimizer(m.params, TrainConfig(lr=1e-2))
    tok, y = _small_batch(m)
    src = 1
    seen = [m.params.group_checksums()]
    distill_batch(m, opt, tok, y, 0.6, src, on_step=lambda _: seen.append(m.params.group_checksums()))
    start, after1, after2 = seen
    probe = m.probe_group(src)
    assert after1[probe] == start[probe]
    assert all(after1[g] != start[g] for g in m.main_network_groups())
    assert {g for g in after1 if after1[g] != after2[g]} == {probe}
    assert after2["probe-2"] == start["probe-2"]


def test_distill_batch_rejects_top_layer():
    m = build_model(tiny_encoder())
    tok, y = _small_batch(m)
    with pytest.raises(ValueError):
        distill_batch(m, make_optimizer(m.params, TrainConfig()), tok, y, 0.6, 3)


def test_train_lad_bookkeeping(tiny_splits):
    m = build_model(tiny_encoder())
    init = m.params.checksum()
    res = train_lad(m, tiny_splits["train"], DistillConfig(), TrainConfig(epochs=0), 1)
    assert m.params.checksum() == init and res.step1_updates == 0
    tc = TrainConfig(epochs=1, batch_size=10)
    res = train_lad(m, tiny_splits["train"], DistillConfig(), tc, 1)
    assert res.step1_updates == res.step2_updates == 10


def test_train_lad_reduces_main_loss(tiny_splits):
    m = build_model(tiny_encoder())
    res = train_lad(m, tiny_splits["train"], DistillConfig(), TrainConfig(epochs=4, batch_size=16, lr=3e-3), 1)
    assert res.epoch_loss_main[-1] < res.epoch_loss_main[0]


def test_warmup_and_reset(tiny_splits):
    tc = TrainConfig(epochs=2, batch_size=16, lr=3e-3)
    m = build_model(tiny_encoder())
    tok = tiny_splits["eval"].tokens[:5]
    init_logits = m.predict_logits(tok)
    init_sum = m.params.checksum()
    wr = warmup_train(m, tiny_splits["train"], tiny_splits["validation"], WarmupConfig(max_warmup_epochs=3), tc)
    sel = wr.selection
    assert 1 <= sel.source_idx <= 2
    assert sel.epochs == len(wr.profile.entropies) <= 3
    if sel.stabilized:
        assert wr.profile.selections[-1] == wr.profile.selections[-2]
    else:
        assert wr.warnings
    for ent, chosen in zip(wr.profile.entropies, wr.profile.selections):
        assert all(0 <= e <= math.log(3) + 1e-9 for e in ent)
        assert chosen == select_source_layer(ent)
    assert len(wr.ambiguity.ambiguous_ids) == ambiguous_count(96, 0.1)
    la_before = wr.ambiguity.la.copy()

    reset_to_initial(m)
    assert m.params.checksum() == init_sum
    assert np.array_equal(m.predict_logits(tok), init_logits)
    assert np.array_equal(wr.ambiguity.la, la_before)

    wr2 = warmup_train(m, tiny_splits["train"], tiny_splits["validation"], WarmupConfig(max_warmup_epochs=3), tc)
    assert wr2.profile.entropies == wr.profile.entropies


def test_reset_without_snapshot_errors():
    m = build_model(tiny_encoder())
    m.init_snapshot = None
    with pytest.raises(RuntimeError):
        reset_to_initial(m)


def test_recalibration_target_and_gradient_identity():
    t = recalibration_target(np.array([0, 2]), 3)
    np.testing.assert_allclose(t, [[2 / 3, 1 / 6, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
    z = ag.Tensor(np.log(t), requires_grad=True)
    ag.cross_entropy_logits(z, t, reduction="sum").backward()
    np.testing.assert_allclose(z.grad, 0.0, atol=1e-12)
    # the single soft-target loss equals the half-label, half-uniform mix of losses
    logits = ag.Tensor(np.array([[1.0, -0.5, 0.2]]))
    y = np.eye(3)[[1]]
    mixed = 0.5 * ag.cross_entropy_logits(logits, y) + 0.5 * ag.cross_entropy_logits(logits, np.full((1, 3), 1 / 3))
    assert float(ag.cross_entropy_logits(logits, recalibration_target(np.array([1]), 3)).data) == \
        pytest.approx(float(mixed.data), abs=1e-12)


def test_recalibrate_touches_main_network_only(tiny_splits):
    m = build_model(tiny_encoder())
    before = m.params.group_checksums()
    sub = tiny_splits["train"].subset(np.arange(20))
    losses = recalibrate(m, sub, TrainConfig(batch_size=8), lr=1e-3)
    assert len(losses) == 3
    after = m.params.group_checksums()
    changed = {g for g in before if before[g] != after[g]}
    assert changed == set(m.main_network_groups())
    with pytest.raises(ValueError):
        recalibrate(m, sub.subset(np.arange(0)), TrainConfig(), lr=1e-3)


def test_config_validation():
    with pytest.raises(ValueError):
        WarmupConfig(ambiguous_fraction=1.0).validate()
    with pytest.raises(ValueError):
        DistillConfig(lam=0.0).validate()
    with pytest.raises(ValueError):
        DistillConfig(recalibration_epochs=2).validate()
