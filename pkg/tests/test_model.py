import math

import numpy as np
import pytest

from xlnmt import numerics as nx
from xlnmt.corpus import BOS_ID, EOS_ID
from xlnmt.errors import ConfigurationError, ContractError
from xlnmt.gradcheck import check_gradients, numerical_gradient, relative_error, analytic_gradients
from xlnmt.model import ModelConfig, Seq2Seq, attention, lstm_cell_step
from xlnmt.numerics import Tensor


def tiny(vocab=12, embed=8, hidden=8, dropout=0.0, seed=0, **kw):
    return Seq2Seq(ModelConfig(vocab_size=vocab, embed_dim=embed, hidden_dim=hidden,
                               dropout_p=dropout, seed=seed, **kw))


def zero_model(**kw):
    m = tiny(**kw)
    for p in m.params.values():
        p.data[...] = 0.0
    return m


def test_config_validation():
    with pytest.raises(ConfigurationError):
        ModelConfig(vocab_size=0)
    with pytest.raises(ConfigurationError):
        ModelConfig(vocab_size=5, dropout_p=1.0)
    assert ModelConfig(vocab_size=5, hidden_dim=7).attention_dim == 7


def test_lstm_zero_case():
    H = 3
    W_x, W_h, b = Tensor(np.zeros((2, 4 * H))), Tensor(np.zeros((H, 4 * H))), Tensor(np.zeros(4 * H))
    h, c = lstm_cell_step(Tensor(np.ones(2)), Tensor(np.zeros(H)), Tensor(np.zeros(H)), W_x, W_h, b)
    assert h.data.tolist() == [0.0] * H and c.data.tolist() == [0.0] * H


def test_lstm_closed_form_with_half_gates():
    H = 3
    c_prev = np.array([0.4, -1.2, 2.0])
    W_x, W_h, b = Tensor(np.zeros((2, 4 * H))), Tensor(np.zeros((H, 4 * H))), Tensor(np.zeros(4 * H))
    h, c = lstm_cell_step(Tensor(np.ones(2)), Tensor(np.zeros(H)), Tensor(c_prev), W_x, W_h, b)
    np.testing.assert_allclose(c.data, 0.5 * c_prev, rtol=0, atol=1e-15)
    np.testing.assert_allclose(h.data, 0.5 * np.tanh(0.5 * c_prev), rtol=0, atol=1e-15)


def test_lstm_shape_error():
    with pytest.raises(nx.ShapeError):
        lstm_cell_step(Tensor(np.ones(2)), Tensor(np.zeros(3)), Tensor(np.zeros(3)),
                       Tensor(np.zeros((5, 12))), Tensor(np.zeros((3, 12))), Tensor(np.zeros(12)))


def test_lstm_step_gradients():
    for trial in range(20):
        rng = np.random.default_rng(trial)
        H, D = 3, 4
        ts = [Tensor(rng.uniform(-1, 1, s), requires_grad=True)
              for s in [(2, D), (2, H), (2, H), (D, 4 * H), (H, 4 * H), (4 * H,)]]
        w = rng.standard_normal((2, H))

        def f():
            h, c = lstm_cell_step(*ts)
            return nx.sum(h * Tensor(w)) + nx.sum(c)

        assert check_gradients(f, ts) < 1e-4


def test_attention_single_annotation():
    rng = np.random.default_rng(0)
    ann = Tensor(rng.standard_normal((1, 6)))
    ctx, w = attention(Tensor(rng.standard_normal(4)), ann, Tensor(rng.standard_normal((6, 5))),
                       Tensor(rng.standard_normal((4, 5))), Tensor(rng.standard_normal((5, 1))))
    assert w.data.tolist() == [1.0]
    np.testing.assert_array_equal(ctx.data, ann.data[0])


def test_attention_identical_annotations_uniform():
    rng = np.random.default_rng(1)
    ann = Tensor(np.tile(rng.standard_normal(6), (4, 1)))
    ctx, w = attention(Tensor(rng.standard_normal(4)), ann, Tensor(rng.standard_normal((6, 5))),
                       Tensor(rng.standard_normal((4, 5))), Tensor(rng.standard_normal((5, 1))))
    np.testing.assert_allclose(w.data, 0.25, rtol=0, atol=1e-15)
    assert abs(w.data.sum() - 1.0) < 1e-12


def test_attention_gradients():
    for trial in range(20):
        rng = np.random.default_rng(100 + trial)
        ts = [Tensor(rng.uniform(-1, 1, s), requires_grad=True)
              for s in [(2, 4), (2, 5, 6), (6, 3), (4, 3), (3, 1)]]
        w = rng.standard_normal((2, 6))

        def f():
            ctx, _ = attention(*ts)
            return nx.sum(ctx * Tensor(w))

        assert check_gradients(f, ts) < 1e-4


def test_encode_shapes():
    m = tiny()
    for T in (1, 2, 7, 60):
        enc = m.encode([list(range(4, 4 + T)) if T < 8 else [5] * T])
        assert enc.annotations.shape == (1, T, 16)
        assert enc.init_state[0].shape == (1, 8)


def test_encode_rejects_empty():
    with pytest.raises(ContractError):
        tiny().encode([[]])


def test_zero_weights_give_zero_annotations():
    enc = zero_model().encode([[4, 5, 6]])
    assert not enc.annotations.data.any()


def test_encoder_is_bidirectional():
    m = tiny(seed=3)
    a = m.encode([[4, 5, 6, 7]]).annotations.data
    b = m.encode([[4, 5, 6, 9]]).annotations.data
    assert not np.allclose(a[0, 0], b[0, 0])


def test_padded_batch_matches_single_examples():
    m = tiny(seed=5)
    pairs = [([4, 5, 6, 7, 8], [BOS_ID, 9, EOS_ID]), ([6], [BOS_ID, 4, 5, 6, 7, EOS_ID]),
             ([7, 8, 9], [BOS_ID, EOS_ID])]
    batched = m.encode([s for s, _ in pairs])
    total = 0.0
    for i, (s, t) in enumerate(pairs):
        single = m.encode([s])
        np.testing.assert_allclose(batched.annotations.data[i, : len(s)], single.annotations.data[0],
                                   rtol=0, atol=1e-12)
        for a, b in zip(batched.init_state, single.init_state):
            np.testing.assert_allclose(a.data[i], b.data[0], rtol=0, atol=1e-12)
        total += m.forward_loss(s, t).item() * (len(t) - 1)
    loss, n = m.batch_loss(pairs, "infer")
    assert n == sum(len(t) - 1 for _, t in pairs)
    assert loss.item() == pytest.approx(total / n, abs=1e-12)


def test_decode_step_zero_params_uniform():
    m = zero_model()
    enc = m.encode([[4, 5]])
    logits, _ = m.decode_step([BOS_ID], enc.init_state, enc)
    assert logits.shape == (1, 12)
    assert np.ptp(logits.data) == 0.0


def test_decode_step_id_out_of_range():
    m = tiny()
    enc = m.encode([[4]])
    with pytest.raises(IndexError):
        m.decode_step([12], enc.init_state, enc)


def test_forward_loss_zero_params_is_log_vocab():
    m = zero_model()
    loss = m.forward_loss([4, 5, 6], [BOS_ID, 7, 8, 9, EOS_ID])
    assert loss.item() == pytest.approx(math.log(12), abs=1e-12)


def test_forward_loss_non_negative_and_deterministic():
    m = tiny(seed=9)
    a = m.forward_loss([4, 5], [BOS_ID, 6, EOS_ID]).item()
    b = m.forward_loss([4, 5], [BOS_ID, 6, EOS_ID]).item()
    assert a >= 0 and a == b


def test_forward_loss_requires_wrapped_target():
    with pytest.raises(ContractError):
        tiny().forward_loss([4], [5, 6])


def test_train_mode_needs_rng_and_is_seeded():
    m = tiny(dropout=0.1)
    with pytest.raises(ContractError):
        m.forward_loss([4], [BOS_ID, 5, EOS_ID], mode="train")
    a = m.forward_loss([4, 5], [BOS_ID, 5, EOS_ID], "train", np.random.default_rng(1)).item()
    b = m.forward_loss([4, 5], [BOS_ID, 5, EOS_ID], "train", np.random.default_rng(1)).item()
    assert a == b


def test_no_weight_tying():
    m = tiny()
    assert m["out.W"].shape == (24, 12)
    assert m["out.W"] is not m["embed"]


def _scrambled(seed, **kw):
    # unit-scale weights keep every path (attention included) well above finite-difference noise
    m = tiny(seed=seed, **kw)
    rng = np.random.default_rng(seed)
    for p in m.params.values():
        p.data[...] = rng.uniform(-1, 1, p.shape)
    return m


def _full_gradcheck(m, pairs):
    names = list(m.params)
    params = [m.params[n] for n in names]
    f = lambda: m.batch_loss(pairs, "infer")[0]
    analytic = analytic_gradients(f, params)
    worst = {}
    for n, p, a in zip(names, params, analytic):
        rows = None
        if n in ("embed", "dec_embed"):
            rows = sorted({i for s, t in pairs for i in list(s) + list(t)})
            a = a[rows]
        num = numerical_gradient(f, p, 1e-4, rows=rows)
        if rows is not None:
            num = num[rows]
        worst[n] = relative_error(a, num)
    return worst


def test_full_model_gradient_check():
    m = _scrambled(11)
    errs = _full_gradcheck(m, [([4, 10, 7], [BOS_ID, 5, 11, 6, EOS_ID])])
    bad = {k: v for k, v in errs.items() if not v < 1e-4}
    assert not bad, bad


def test_full_model_gradient_check_padded_batch_unshared_embeddings():
    m = _scrambled(12, share_embeddings=False)
    errs = _full_gradcheck(m, [([4, 10], [BOS_ID, 5, 11, EOS_ID]), ([7, 8, 9, 6], [BOS_ID, 6, EOS_ID])])
    bad = {k: v for k, v in errs.items() if not v < 1e-4}
    assert not bad, bad


def test_search_interface_shapes():
    m = tiny()
    state = m.start([4, 5, 6])
    lp, state = m.step([BOS_ID], state)
    assert lp.shape == (1, 12)
    np.testing.assert_allclose(np.exp(lp).sum(), 1.0, atol=1e-12)
    state = m.reorder(state, [0, 0, 0])
    lp, _ = m.step([4, 5, 6], state)
    assert lp.shape == (3, 12)


def test_state_dict_roundtrip():
    a, b = tiny(seed=1), tiny(seed=2)
    b.load_state_dict(a.state_dict())
    for n in a.params:
        assert np.array_equal(a[n].data, b[n].data)
