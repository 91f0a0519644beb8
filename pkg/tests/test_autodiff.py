import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fedstgd import ops
from fedstgd.autodiff import Tape, finite_diff_check
from fedstgd.errors import NumericError, ShapeError, UsageError

finite = st.floats(-3, 3, allow_nan=False)


def mats(rows, cols):
    return arrays(np.float64, (rows, cols), elements=finite)


def grad_error(f, **params):
    return finite_diff_check(lambda tape, v: f(**v), params)


@given(mats(3, 4), mats(4, 2))
def test_matmul_gradient(a, b):
    assert grad_error(lambda a, b: ops.sum_(ops.tanh(ops.matmul(a, b))), a=a, b=b) < 1e-6


@given(mats(3, 4))
def test_softmax_rows_gradient_and_simplex(a):
    out = ops.softmax_rows(a)
    assert np.allclose(out.sum(axis=-1), 1.0)
    assert (out >= 0).all()
    w = np.arange(12.0).reshape(3, 4)
    assert grad_error(lambda a: ops.sum_(ops.mul(ops.softmax_rows(a), w)), a=a) < 1e-6


@given(mats(5, 3), mats(5, 2), mats(4, 3), mats(4, 2))
def test_gamma_map_identity(ai, bi, aj, bj):
    lhs = (ai @ aj.T) * (bi @ bj.T)
    rhs = ops.gamma_map(ai, bi) @ ops.gamma_map(aj, bj).T
    assert np.abs(lhs - rhs).max() <= 1e-9 * max(1.0, np.abs(lhs).max())


def test_gamma_map_column_order():
    w = np.array([[1.0, 2.0]])
    v = np.array([[10.0, 20.0, 30.0]])
    assert ops.gamma_map(w, v).tolist() == [[10, 20, 30, 20, 40, 60]]


@given(mats(4, 3), mats(4, 2))
def test_gamma_map_gradient(w, v):
    c = np.linspace(-1, 1, 6)
    assert grad_error(lambda w, v: ops.sum_(ops.mul(ops.gamma_map(w, v), c)), w=w, v=v) < 1e-6


@given(arrays(np.float64, (2, 3, 4), elements=finite))
def test_rowmat_modes_gradient(u):
    wn = np.random.default_rng(0).normal(size=(3, 4, 2))
    wb = np.random.default_rng(1).normal(size=(2, 4, 2))
    assert grad_error(lambda u, w: ops.sum_(ops.sigmoid(ops.rowmat(u, w, "node"))), u=u, w=wn) < 1e-6
    assert grad_error(lambda u, w: ops.sum_(ops.sigmoid(ops.rowmat(u, w, "batch"))), u=u, w=wb) < 1e-6


def test_rowmat_matches_loop():
    rng = np.random.default_rng(2)
    u, w = rng.normal(size=(2, 3, 4)), rng.normal(size=(3, 4, 5))
    want = np.stack([np.stack([u[b, n] @ w[n] for n in range(3)]) for b in range(2)])
    assert np.allclose(ops.rowmat(u, w, "node"), want)


def test_slice_concat_broadcast_gradients():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(3,))

    def f(a, b):
        joined = ops.concat([a, ops.broadcast_to(b, (2, 3))], axis=-1)
        return ops.sum_(ops.mul(ops.slice_(joined, 1, 5), ops.slice_(joined, 0, 4)))

    assert grad_error(f, a=a, b=b) < 1e-6


def test_straight_through_routes_gradient_to_local():
    tape = Tape()
    local = tape.param(np.array([1.0, 2.0]), "local")
    out = ops.straight_through(np.array([5.0, 7.0]), local)
    assert ops.value(out).tolist() == [5.0, 7.0]
    g = tape.backward(ops.sum_(ops.mul(out, np.array([3.0, 4.0]))))
    assert g["local"].tolist() == [3.0, 4.0]


def test_gradient_accumulates_over_reuse():
    tape = Tape()
    x = tape.param(np.array([2.0]), "x")
    y = ops.add(ops.mul(x, x), ops.scale(x, 3.0))
    assert tape.backward(ops.sum_(y))["x"].tolist() == [7.0]


def test_unused_parameter_gets_zero_gradient():
    tape = Tape()
    x = tape.param(np.ones(2), "x")
    tape.param(np.ones(3), "unused")
    g = tape.backward(ops.sum_(x))
    assert g["unused"].tolist() == [0.0, 0.0, 0.0]


def test_eager_ops_return_arrays():
    out = ops.matmul(np.eye(2), np.ones((2, 1)))
    assert isinstance(out, np.ndarray) and out.tolist() == [[1.0], [1.0]]


def test_usage_errors():
    tape, other = Tape(), Tape()
    x = tape.param(np.ones(2), "x")
    with pytest.raises(UsageError):
        tape.param(np.ones(2), "x")
    with pytest.raises(UsageError):
        tape.backward(x)  # not scalar
    with pytest.raises(UsageError):
        other.backward(ops.sum_(x))
    with pytest.raises(UsageError):
        finite_diff_check(lambda t, v: ops.sum_(v["x"]), {"x": np.ones(2)}, eps=0)


def test_shape_and_value_errors():
    with pytest.raises(ShapeError):
        ops.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ShapeError):
        ops.gamma_map(np.ones((2, 3)), np.ones((3, 3)))
    with pytest.raises(ShapeError):
        ops.softmax_rows(np.ones((2, 0)))
    with pytest.raises(ShapeError):
        ops.tensor(np.ones((1, 1, 1, 1)))
    with pytest.raises(NumericError):
        ops.tensor([1.0, np.nan])


@pytest.mark.parametrize("name", ["sigmoid", "tanh", "relu", "leaky_relu"])
def test_activation_gradients(name):
    a = np.array([[-1.3, -0.2, 0.4, 2.0]])
    assert grad_error(lambda a: ops.sum_(ops.mul(ops.activation(name, a), a)), a=a) < 1e-6


def test_sigmoid_is_stable_for_large_inputs():
    out = ops.sigmoid(np.array([-800.0, 0.0, 800.0]))
    assert np.isfinite(out).all() and out.tolist() == [0.0, 0.5, 1.0]


def test_replay_reproduces_forward():
    rng = np.random.default_rng(4)
    tape = Tape()
    a = tape.param(rng.normal(size=(2, 2)), "a")
    loss = ops.mean(ops.tanh(ops.matmul(a, a)))
    assert tape.replay()[loss.id] == pytest.approx(float(loss.value))
