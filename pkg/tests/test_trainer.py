import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xlnmt.corpus import BOS_ID, EOS_ID
from xlnmt.errors import CheckpointError, ConfigurationError, ContractError
from xlnmt.model import ModelConfig, Seq2Seq
from xlnmt.numerics import Tensor
from xlnmt.trainer import (
    CONTINUE, DECAY, STOP, STRICT, OptimizerState, TrainSchedule, adam_step, clip_by_global_norm,
    end_of_epoch, load_checkpoint, make_batches, save_checkpoint, train, train_epoch,
)


def test_first_adam_step_closed_form():
    params = {"w": Tensor(np.array([1.0]), requires_grad=True)}
    state = OptimizerState(params, lr=0.0002)
    adam_step(params, {"w": np.array([1.0])}, state)
    assert params["w"].data[0] == pytest.approx(1 - 0.0002 / (1 + 1e-8), abs=1e-15)
    assert state.step == 1


def test_adam_matches_reference_over_many_steps():
    rng = np.random.default_rng(0)
    theta = rng.standard_normal((3, 2))
    params = {"w": theta.copy()}
    state = OptimizerState(params, lr=0.01)
    m = v = np.zeros_like(theta)
    for t in range(1, 21):
        g = rng.standard_normal(theta.shape)
        adam_step(params, {"w": g}, state)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        theta = theta - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(params["w"], theta, rtol=0, atol=1e-14)


def test_zero_gradient_leaves_params_unchanged():
    params = {"w": np.array([[0.5, -2.0]])}
    state = OptimizerState(params)
    for _ in range(3):
        adam_step(params, {"w": np.zeros((1, 2))}, state)
    assert params["w"].tolist() == [[0.5, -2.0]]


def test_frozen_rows_have_no_state_and_never_move():
    table = np.arange(12.0).reshape(4, 3)
    mask = np.array([True, False, True, False])
    params = {"embed": table.copy()}
    state = OptimizerState(params, {"embed": mask}, lr=0.1)
    assert state.m["embed"].shape == (2, 3)
    adam_step(params, {"embed": np.ones((4, 3))}, state)
    assert np.array_equal(params["embed"][~mask], table[~mask])
    assert not np.array_equal(params["embed"][mask], table[mask])


def test_adam_shape_mismatch():
    params = {"w": np.zeros(3)}
    with pytest.raises(ContractError):
        adam_step(params, {"w": np.zeros(4)}, OptimizerState(params))


def test_clip_by_global_norm():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    clipped, norm = clip_by_global_norm(grads, 1.0)
    assert norm == 5.0
    assert clipped["a"][0] == pytest.approx(0.6) and grads["a"][0] == 3.0
    same, _ = clip_by_global_norm(grads, None)
    assert same is grads


def test_schedule_validation():
    with pytest.raises(ConfigurationError):
        TrainSchedule(batch_size=0)
    assert TrainSchedule().lr == 0.0002


def test_end_of_epoch_examples():
    s = TrainSchedule()
    assert end_of_epoch(1.0, s) == CONTINUE
    assert end_of_epoch(2.0, s) == CONTINUE and s.lr == 0.0002
    assert end_of_epoch(1.5, s) == DECAY and s.lr == 0.0001
    s = TrainSchedule(patience=2)
    end_of_epoch(3.0, s)
    assert end_of_epoch(3.0, s) == DECAY  # equal counts as no improvement
    assert end_of_epoch(1.0, s) == STOP


def test_improvement_resets_patience():
    s = TrainSchedule(patience=2)
    decisions = [end_of_epoch(b, s) for b in (1.0, 0.5, 2.0, 1.0, 3.0, 0.0)]
    assert STOP not in decisions


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=1, max_size=30), st.integers(1, 5))
def test_lr_never_increases(bleus, patience):
    s = TrainSchedule(patience=patience)
    prev = s.lr
    for b in bleus:
        decision = end_of_epoch(b, s)
        assert s.lr <= prev
        prev = s.lr
        if decision == STOP:
            break


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 9), min_size=1, max_size=80), st.integers(1, 10), st.sampled_from(["strict", "bucketed"]))
def test_batches_partition_the_corpus(lengths, batch_size, mode):
    pairs = [([4] * n, [BOS_ID, EOS_ID]) for n in lengths]
    batches = make_batches(pairs, batch_size, np.random.default_rng(0), mode)
    flat = sorted(i for b in batches for i in b)
    assert flat == list(range(len(pairs)))
    assert all(1 <= len(b) <= batch_size for b in batches)
    assert sum(len(b) < batch_size for b in batches) <= 1


def copy_pairs(n, vocab=12, seed=0, max_len=5):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        s = rng.integers(4, vocab, rng.integers(1, max_len + 1)).tolist()
        out.append((s, [BOS_ID] + s + [EOS_ID]))
    return out


def small_model(seed=0, dropout=0.1, vocab=12):
    return Seq2Seq(ModelConfig(vocab_size=vocab, embed_dim=8, hidden_dim=12, dropout_p=dropout, seed=seed))


def test_train_epoch_empty_corpus():
    with pytest.raises(ContractError):
        train_epoch(small_model(), [], TrainSchedule(), OptimizerState(small_model().params))


def test_single_pair_epoch_loss_equals_forward_loss():
    m = small_model(dropout=0.0)
    pair = ([4, 5, 6], [BOS_ID, 7, 8, EOS_ID])
    expected = m.forward_loss(*pair).item()
    stats = train_epoch(m, [pair], TrainSchedule(), OptimizerState(m.params, m.row_masks))
    assert stats.mean_loss == pytest.approx(expected, abs=1e-12)
    assert stats.n_tokens == 3 and stats.n_batches == 1


def _run(epochs, seed=3):
    m = small_model(seed=seed)
    s = TrainSchedule(initial_lr=0.01, batch_size=8, max_epochs=epochs, seed=seed)
    st_ = OptimizerState(m.params, m.row_masks, s.lr)
    stats = [train_epoch(m, copy_pairs(40), s, st_) for _ in range(epochs)]
    return m, st_, s, stats


def test_training_is_deterministic():
    a, _, _, sa = _run(2)
    b, _, _, sb = _run(2)
    assert [x.mean_loss for x in sa] == [x.mean_loss for x in sb]
    for n in a.params:
        assert np.array_equal(a[n].data, b[n].data)


def test_copy_task_loss_decreases():
    _, _, _, stats = _run(4)
    losses = [s.mean_loss for s in stats]
    rises = sum(b >= a for a, b in zip(losses, losses[1:]))
    assert rises <= 1 and losses[-1] < losses[0]


def test_train_loop_logs_and_restores_best():
    m = small_model(seed=1)
    s = TrainSchedule(initial_lr=0.01, batch_size=8, max_epochs=4, patience=2, seed=1)
    scores = iter([0.5, 0.2, 0.1, 0.9])
    snapshots = []

    def dev(model):
        snapshots.append(model.state_dict())
        return next(scores)

    lines = []
    result = train(m, copy_pairs(20), s, dev_bleu=dev, log=lines.append)
    assert result.stopped_early and len(result.history) == 3
    assert [l.split("\t")[-1] for l in lines] == [CONTINUE, DECAY, STOP]
    assert lines[1].split("\t")[3] == "0.005"
    for n in m.params:
        assert np.array_equal(m[n].data, snapshots[0][n])


def test_fixed_epoch_mode_ignores_dev():
    m = small_model()
    s = TrainSchedule(initial_lr=0.01, batch_size=8, max_epochs=3, use_dev=False)
    result = train(m, copy_pairs(10), s, dev_bleu=lambda _: 0.0)
    assert len(result.history) == 3 and s.lr == 0.01


def test_checkpoint_roundtrip_bitwise(tmp_path):
    m, state, sched, _ = _run(1)
    path = save_checkpoint(tmp_path / "ck.npz", m, state, sched, provenance=["special"] * 12)
    back = load_checkpoint(path, vocab_size=12)
    for n in m.params:
        assert np.array_equal(back.model[n].data, m[n].data)
        assert np.array_equal(back.state.m[n], state.m[n])
    assert back.schedule == sched and back.state.step == state.step
    assert back.meta["provenance"] == ["special"] * 12
    # the archive is a plain npz
    assert set(np.load(path).files) >= {"param/out.W", "opt/m/out.W"}


def test_checkpoint_bytes_are_reproducible(tmp_path):
    m, state, sched, _ = _run(1)
    a = save_checkpoint(tmp_path / "a.npz", m, state, sched).read_bytes()
    b = save_checkpoint(tmp_path / "b.npz", m, state, sched).read_bytes()
    assert a == b


def test_checkpoint_errors(tmp_path):
    m, state, sched, _ = _run(1)
    path = save_checkpoint(tmp_path / "ck.npz", m, state, sched)
    with pytest.raises(CheckpointError):
        load_checkpoint(path, vocab_size=13)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.npz")
    (tmp_path / "junk.npz").write_bytes(b"not a zip")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "junk.npz")


def test_resume_equals_uninterrupted(tmp_path):
    full, _, _, _ = _run(2)

    m = small_model(seed=3)
    s = TrainSchedule(initial_lr=0.01, batch_size=8, max_epochs=2, seed=3)
    st_ = OptimizerState(m.params, m.row_masks, s.lr)
    train_epoch(m, copy_pairs(40), s, st_)
    save_checkpoint(tmp_path / "ck.npz", m, st_, s)
    ck = load_checkpoint(tmp_path / "ck.npz")
    train_epoch(ck.model, copy_pairs(40), ck.schedule, ck.state)
    for n in full.params:
        assert np.array_equal(full[n].data, ck.model[n].data)


def test_strict_shuffle_mode_runs():
    m = small_model()
    s = TrainSchedule(initial_lr=0.01, batch_size=4, shuffle=STRICT)
    stats = train_epoch(m, copy_pairs(10), s, OptimizerState(m.params, m.row_masks, s.lr))
    assert stats.n_batches == 3 and math.isfinite(stats.mean_loss)
