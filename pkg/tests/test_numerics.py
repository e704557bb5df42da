import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from xlnmt import numerics as nx
from xlnmt.gradcheck import check_gradients, numerical_gradient
from xlnmt.numerics import Tape, Tensor

TRIALS = 100


def _param(rng, shape, low=-2.0, high=2.0):
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


# ---------------------------------------------------------------- examples

def test_matmul_identity():
    out = nx.matmul(Tensor(np.eye(2)), Tensor([[1.0, 2.0], [3.0, 4.0]]))
    np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])


def test_matmul_hand_arithmetic():
    out = nx.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    assert out.data.tolist() == [[11.0]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(nx.ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        nx.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_unary_fixed_points():
    assert nx.sigmoid(Tensor([0.0])).item() == 0.5
    assert nx.tanh(Tensor([0.0])).item() == 0.0
    x = Tensor([1.0, -2.0, 3.0])
    out = nx.apply_unary(x, "dropout", mask=np.zeros(3), p=0.1, train=False)
    np.testing.assert_array_equal(out.data, x.data)


def test_sigmoid_extremes_are_finite():
    y = nx.sigmoid(Tensor([-800.0, 800.0])).data
    assert y[0] == 0.0 and y[1] == 1.0


def test_dropout_scales_kept_units():
    out = nx.dropout(Tensor([1.0, 2.0, 3.0, 4.0]), mask=[1, 0, 1, 1], p=0.5)
    np.testing.assert_allclose(out.data, [2.0, 0.0, 6.0, 8.0])


def test_log_domain_error():
    with pytest.raises(nx.DomainError):
        nx.log(Tensor([1.0, 0.0]))


def test_softmax_examples():
    np.testing.assert_allclose(nx.softmax(Tensor([2.5, 2.5, 2.5])).data, [1 / 3] * 3, rtol=0, atol=1e-15)
    assert nx.softmax(Tensor([7.0])).data.tolist() == [1.0]
    y = nx.softmax(Tensor([1000.0, 0.0])).data
    assert np.isfinite(y).all()
    assert y[0] == pytest.approx(1.0) and y[1] == pytest.approx(0.0, abs=1e-300)


def test_softmax_empty_axis():
    with pytest.raises(nx.ShapeError):
        nx.softmax(Tensor(np.zeros((2, 0))))


def test_cross_entropy_examples():
    assert nx.cross_entropy(Tensor(np.zeros(4)), 2).item() == pytest.approx(math.log(4), abs=1e-15)
    logits = np.zeros(5)
    logits[1] = 30.0
    assert nx.cross_entropy(Tensor(logits), 1).item() == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(IndexError):
        nx.cross_entropy(Tensor(np.zeros(4)), 4)


def test_cross_entropy_extreme_logits_never_log_zero():
    logits = np.array([-1e4, 0.0, 1e4])
    assert math.isfinite(nx.cross_entropy(Tensor(logits), 0).item())


def test_backward_square():
    x = Tensor([3.0], requires_grad=True)
    with Tape():
        loss = x * x
    loss.backward()
    assert x.grad.tolist() == [6.0]


def test_backward_accumulates_over_reuse():
    x = Tensor([1.5], requires_grad=True)
    with Tape():
        loss = x + x
    loss.backward()
    assert x.grad.tolist() == [2.0]


def test_backward_twice_doubles_until_reset():
    x = Tensor([3.0], requires_grad=True)
    with Tape():
        loss = x * x
    loss.backward()
    loss.backward()
    assert x.grad.tolist() == [12.0]
    x.zero_grad()
    loss.backward()
    assert x.grad.tolist() == [6.0]


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape():
        y = x * x
    with pytest.raises(nx.ShapeError):
        y.backward()


def test_backward_off_tape_is_an_error():
    with pytest.raises(nx.TapeError):
        Tensor([1.0]).backward()


def test_no_recording_outside_tape():
    x = Tensor([2.0], requires_grad=True)
    y = x * x
    assert not y.requires_grad


def test_rank_limit():
    with pytest.raises(nx.ShapeError):
        Tensor(np.zeros((1, 1, 1, 1)))


def test_non_finite_result_is_an_error():
    with pytest.raises(nx.NonFiniteError):
        nx.exp(Tensor([1000.0]))


def test_tape_is_topologically_ordered():
    x = Tensor([0.3, -0.2], requires_grad=True)
    with Tape() as tape:
        loss = nx.sum(nx.tanh(x) * nx.sigmoid(x))
    seen = {id(x)}
    for node in tape.nodes:
        assert all(id(p) in seen or not p.requires_grad for p in node.parents)
        seen.add(id(node.out))
    assert tape.nodes[-1].out is loss


def test_float32_runtime_option():
    nx.set_default_dtype(np.float32)
    try:
        assert Tensor([1.0]).data.dtype == np.float32
    finally:
        nx.set_default_dtype(np.float64)
    assert Tensor([1.0]).data.dtype == np.float64


# ------------------------------------------------- finite-difference oracle

def test_oracle_on_known_derivative():
    x = Tensor([0.7])
    g = numerical_gradient(lambda: nx.sum(nx.exp(x)), x)
    assert g[0] == pytest.approx(math.exp(0.7), rel=1e-8)


def _scalarize(t, w):
    """Random linear functional so every output entry gets a distinct cotangent."""
    return nx.sum(nx.mul(t, Tensor(w)))


OPS = {
    "add": lambda rng: _binary(rng, nx.add, (3, 4), (4,)),
    "sub": lambda rng: _binary(rng, nx.sub, (2, 3), (2, 3)),
    "mul": lambda rng: _binary(rng, nx.mul, (2, 1, 3), (4, 3)),
    "matmul": lambda rng: _binary(rng, nx.matmul, (3, 4), (4, 2)),
    "matmul_batched": lambda rng: _binary(rng, nx.matmul, (2, 3, 4), (4, 2)),
    "sigmoid": lambda rng: _unary(rng, nx.sigmoid, (5,)),
    "tanh": lambda rng: _unary(rng, nx.tanh, (2, 3)),
    "exp": lambda rng: _unary(rng, nx.exp, (4,)),
    "log": lambda rng: _unary(rng, nx.log, (4,), low=0.2, high=3.0),
    "dropout": lambda rng: _masked(rng, lambda x, m: nx.dropout(x, m, p=0.1), (2, 4)),
    "softmax": lambda rng: _unary(rng, lambda x: nx.softmax(x, axis=-1), (3, 5)),
    "softmax_axis0": lambda rng: _unary(rng, lambda x: nx.softmax(x, axis=0), (4, 2)),
    "cross_entropy": lambda rng: _ce(rng),
    "cross_entropy_batched": lambda rng: _ce_batched(rng),
    "sum_axis": lambda rng: _unary(rng, lambda x: nx.sum(x, axis=1), (2, 3, 2)),
    "mean": lambda rng: _unary(rng, nx.mean, (3, 2)),
    "reshape": lambda rng: _unary(rng, lambda x: nx.reshape(x, (3, 2)), (2, 3)),
    "concat": lambda rng: _binary(rng, lambda a, b: nx.concat([a, b], axis=-1), (2, 3), (2, 2)),
    "stack": lambda rng: _binary(rng, lambda a, b: nx.stack([a, b], axis=1), (2, 3), (2, 3)),
    "slice_last": lambda rng: _unary(rng, lambda x: nx.slice_last(x, 1, 4), (2, 5)),
    "select_step": lambda rng: _unary(rng, lambda x: nx.select_step(x, 1), (2, 3, 2)),
    "embedding": lambda rng: _unary(rng, lambda x: nx.embedding_lookup(x, [0, 2, 2, 4]), (5, 3)),
    "where": lambda rng: _masked(rng, lambda a, m: nx.where(m.astype(bool), a, nx.tanh(a)), (3, 2)),
}


def _unary(rng, fn, shape, low=-2.0, high=2.0):
    x = _param(rng, shape, low, high)
    out_shape = fn(x).shape
    w = rng.standard_normal(out_shape)
    return (lambda: _scalarize(fn(x), w)), [x]


def _masked(rng, fn, shape):
    mask = rng.integers(0, 2, size=shape)
    return _unary(rng, lambda x: fn(x, mask), shape)


def _binary(rng, fn, sa, sb):
    a, b = _param(rng, sa), _param(rng, sb)
    w = rng.standard_normal(fn(a, b).shape)
    return (lambda: _scalarize(fn(a, b), w)), [a, b]


def _ce(rng):
    x = _param(rng, (6,), -3, 3)
    t = int(rng.integers(0, 6))
    return (lambda: nx.cross_entropy(x, t)), [x]


def _ce_batched(rng):
    x = _param(rng, (3, 5), -3, 3)
    t = rng.integers(0, 5, size=3)
    w = rng.uniform(0, 1, size=3)
    return (lambda: nx.cross_entropy(x, t, weights=w)), [x]


@pytest.mark.parametrize("op", sorted(OPS))
def test_gradients_match_finite_differences(op):
    worst = 0.0
    for trial in range(TRIALS):
        rng = np.random.default_rng([trial, len(op)])
        f, params = OPS[op](rng)
        worst = max(worst, check_gradients(f, params, step=1e-4))
    assert worst < 1e-4, f"{op}: relative error {worst:.2e}"


def test_gradients_of_composite_graph():
    for trial in range(TRIALS):
        rng = np.random.default_rng(trial)
        a, b = _param(rng, (2, 3)), _param(rng, (3, 3))

        def f():
            h = nx.tanh(nx.matmul(a, b))
            return nx.cross_entropy(nx.matmul(h, b), np.array([0, 2]))

        assert check_gradients(f, [a, b]) < 1e-4


# ------------------------------------------------------------- properties

finite = st.floats(-50, 50, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)), elements=finite))
def test_softmax_is_a_distribution(x):
    y = nx.softmax(Tensor(x), axis=-1).data
    assert (y >= 0).all()
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, rtol=0, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-700, 700)))
def test_unary_ops_stay_finite(x):
    for fn in (nx.sigmoid, nx.tanh):
        assert np.isfinite(fn(Tensor(x)).data).all()
    assert math.isfinite(nx.cross_entropy(Tensor(x), 0).item())
