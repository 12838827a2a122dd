import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gradcheck import check_input_gradient
from tactile_prior import tensor as T
from tactile_prior.errors import ContractError, DataError, DomainError, ShapeError

finite = st.floats(-3.0, 3.0, allow_nan=False, width=64)


def test_tensor_new_identity_and_zero():
    eye = T.tensor_new([2, 2], [1, 0, 0, 1])
    assert np.array_equal(eye.data, np.eye(2))
    assert not eye.taped
    assert np.array_equal(T.tensor_new([3], [0, 0, 0]).data, np.zeros(3))


@pytest.mark.parametrize("shape,data", [([2, 2], [1, 2, 3]), ([0, 2], []), ([3], [1, 2, 3, 4])])
def test_tensor_new_rejects_bad_shapes(shape, data):
    with pytest.raises(ShapeError):
        T.tensor_new(shape, data)


def test_rten_layout_matches_hand_encoding(rng):
    x = rng.normal(size=(2, 3))
    expected = b"RTEN" + struct.pack("<II", 1, 2) + struct.pack("<QQ", 2, 3)
    expected += b"".join(struct.pack("<d", v) for v in x.reshape(-1))
    assert T.to_rten_bytes(x) == expected
    back = T.from_rten_bytes(expected).data
    assert back.tobytes() == x.tobytes()


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3)),
              elements=st.floats(allow_nan=False, allow_infinity=False, width=64)))
def test_rten_roundtrip_is_bit_exact(x):
    assert T.from_rten_bytes(T.to_rten_bytes(x)).data.tobytes() == x.tobytes()


def test_rten_rejects_corruption(tmp_path):
    buf = T.to_rten_bytes(np.ones((2, 2)))
    with pytest.raises(DataError):
        T.from_rten_bytes(b"XTEN" + buf[4:])
    with pytest.raises(DataError):
        T.from_rten_bytes(buf[:-3])
    T.save_rten(tmp_path / "x.rten", np.arange(6.0).reshape(2, 3))
    assert T.load_rten(tmp_path / "x.rten").shape == (2, 3)


def test_matmul_identity_zero_and_loop_oracle(rng):
    a = rng.normal(size=(2, 3))
    assert np.array_equal((T.Tensor(a) @ np.eye(3)).data, a)
    assert np.array_equal((T.Tensor(a) @ np.zeros((3, 2))).data, np.zeros((2, 2)))
    b = rng.normal(size=(3, 2))
    naive = [[sum(a[i, t] * b[t, j] for t in range(3)) for j in range(2)] for i in range(2)]
    assert np.allclose(T.matmul(a, b).data, naive, atol=1e-12, rtol=0)
    with pytest.raises(ShapeError):
        T.matmul(a, a)


def test_map_unary_cases(rng):
    assert np.array_equal(T.map_unary(T.Tensor([-1.0, 2.0]), "relu").data, [0.0, 2.0])
    x = rng.uniform(0.1, 5.0, size=7)
    assert np.allclose(T.map_unary(T.map_unary(x, "log"), "exp").data, x, atol=1e-12, rtol=0)
    y = rng.normal(size=(3, 4))
    scaled = T.map_unary(y, ("scale", 3.0)).data
    for idx in np.ndindex(y.shape):
        assert scaled[idx] == 3.0 * y[idx]
    with pytest.raises(DomainError):
        T.map_unary(T.Tensor([1.0, 0.0]), "log")
    with pytest.raises(ContractError):
        T.map_unary(y, "tanh")


def test_reduce_semantics(rng):
    x = rng.normal(size=(3, 4))
    assert np.isclose(T.reduce(x, "sum").item(), x.sum())
    assert np.allclose(T.reduce(x, "mean", axis=0).data, x.mean(axis=0))
    assert np.allclose(T.amax(x, axis=1).data, x.max(axis=1))
    with pytest.raises(ShapeError):
        T.reduce(x, "sum", axis=2)


UNARY_OPS = {
    "exp": T.exp,
    "log": lambda t: T.log(T.exp(t)),
    "relu": T.relu,
    "sigmoid": T.sigmoid,
    "softplus": T.softplus,
    "square": T.square,
    "sqrt": lambda t: T.sqrt(T.square(t) + 1.0),
    "neg": T.neg,
    "scale": lambda t: T.scale(t, -2.5),
    "l2_normalize": lambda t: T.l2_normalize(t, axis=1),
    "log_softmax": lambda t: T.log_softmax(t, axis=1),
    "logsumexp": lambda t: T.logsumexp(t, axis=0),
    "sum_axis": lambda t: T.sum(t, axis=1, keepdims=True),
    "mean_all": T.mean,
    "amax": lambda t: T.amax(t, axis=0),
    "reshape": lambda t: T.reshape(t, (4, 3)),
    "transpose": T.transpose,
    "getitem": lambda t: t[:, 1:3],
    "concat": lambda t: T.concat([t, T.square(t)], axis=1),
}


@pytest.mark.parametrize("name", sorted(UNARY_OPS))
def test_unary_gradients_match_finite_differences(name):
    x = np.random.default_rng(5).normal(size=(3, 4))
    if name == "relu":
        x = np.where(np.abs(x) < 0.05, 0.3, x)  # stay off the kink
    assert check_input_gradient(UNARY_OPS[name], x) < 1e-6


BINARY_OPS = {
    "add": T.add, "sub": T.sub, "mul": T.mul,
    "div": lambda a, b: T.div(a, T.exp(b)),
    "matmul": lambda a, b: T.matmul(a, T.transpose(b)),
}


@pytest.mark.parametrize("name", sorted(BINARY_OPS))
def test_binary_gradients_match_finite_differences(name):
    r = np.random.default_rng(11)
    a, b = r.normal(size=(3, 4)), r.normal(size=(3, 4))
    op = BINARY_OPS[name]
    assert check_input_gradient(lambda t: op(t, b), a) < 1e-6
    assert check_input_gradient(lambda t: op(a, t), b) < 1e-6


def test_broadcast_gradient_sums_over_expanded_axes():
    tape = T.Tape()
    bias = tape.watch(np.zeros(4))
    out = T.sum(T.add(np.ones((5, 4)), bias))
    assert np.array_equal(tape.gradient(out)[bias.node_id].data, np.full(4, 5.0))
    with pytest.raises(ShapeError):
        T.add(np.ones((2, 3)), np.ones((3, 2)))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 3), elements=finite), finite, finite)
def test_backward_is_linear(x, a, b):
    f = lambda t: T.sum(T.sigmoid(t @ t))  # noqa: E731
    g = lambda t: T.sum(T.square(t))  # noqa: E731

    def grad(fn):
        tape = T.Tape()
        xt = tape.watch(x)
        return tape.gradient(fn(xt))[xt.node_id].data

    combined = grad(lambda t: T.scale(f(t), a) + T.scale(g(t), b))
    assert np.allclose(combined, a * grad(f) + b * grad(g), atol=1e-10, rtol=1e-10)


def test_tape_isolation_and_contracts():
    t1, t2 = T.Tape(), T.Tape()
    x1, x2 = t1.watch([1.0, 2.0]), t2.watch([3.0, 4.0])
    l1 = T.sum(T.square(x1))
    l2 = T.sum(T.scale(x2, 2.0))
    assert np.array_equal(t1.gradient(l1)[x1.node_id].data, [2.0, 4.0])
    assert np.array_equal(t2.gradient(l2)[x2.node_id].data, [2.0, 2.0])
    with pytest.raises(ContractError):
        T.add(x1, x2)
    with pytest.raises(ContractError):
        t1.gradient(l2)
    with pytest.raises(ContractError):
        t1.gradient(T.square(x1))
    with pytest.raises(ContractError):
        T.backward(T.Tensor(1.0))


def test_unused_leaf_gets_zero_gradient_and_fanout_accumulates():
    tape = T.Tape()
    x, unused = tape.watch(np.ones(3)), tape.watch(np.ones(2))
    y = T.square(x)
    loss = T.sum(y + y)
    grads = tape.gradient(loss)
    assert np.array_equal(grads[unused.node_id].data, np.zeros(2))
    assert np.array_equal(grads[x.node_id].data, np.full(3, 4.0))
    assert len(tape) == 3


def test_forward_is_deterministic(rng):
    x = rng.normal(size=(4, 5))
    run = lambda: T.log_softmax(T.sigmoid(T.Tensor(x)) @ x.T, axis=1).data.tobytes()  # noqa: E731
    assert run() == run()


def test_tensors_are_immutable():
    t = T.Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 5.0


def test_l2_normalize_warns_on_zero_vector():
    with pytest.warns(T.ZeroNormWarning):
        out = T.l2_normalize(np.zeros((1, 3)), axis=1)
    assert np.all(np.isfinite(out.data))


def test_log_softmax_is_stable_for_large_logits():
    out = T.log_softmax(np.array([[1000.0, 0.0, -1000.0]]), axis=1).data
    assert np.all(np.isfinite(out))
    assert out[0, 0] == 0.0 and out[0, 1] == -1000.0
