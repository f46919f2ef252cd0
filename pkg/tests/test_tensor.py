import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cape import kernels
from cape import tensor as T
from cape.errors import NotScalar, ShapeMismatch
from cape.gradcheck import check_gradients, numerical_grad, relative_error
from cape.tensor import Tensor


def param(rng, *shape):
    return Tensor(rng.uniform(-2, 2, size=shape), requires_grad=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- matmul -----------------------------------------------------------------------

def naive_matmul(a, b):
    m, k = len(a), len(a[0])
    n = len(b[0])
    return [[sum(a[i][t] * b[t][j] for t in range(k)) for j in range(n)] for i in range(m)]


def test_matmul_identity():
    x = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal((Tensor(np.eye(2)) @ x).data, x.data)


def test_matmul_against_triple_loop():
    a, b = [[1.0, 2.0], [3.0, 4.0]], [[5.0], [6.0]]
    expected = naive_matmul(a, b)
    assert expected == [[17.0], [39.0]]
    assert np.array_equal((Tensor(a) @ Tensor(b)).data, np.array(expected))


def test_matmul_inner_dimension_mismatch():
    with pytest.raises(ShapeMismatch):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_sum_gradient(rng):
    A, B = param(rng, 3, 4), Tensor(rng.uniform(-2, 2, size=(4, 5)))
    T.sum_all(A @ B).backward()
    expected = np.tile(B.data.sum(axis=1), (3, 1))
    np.testing.assert_allclose(A.grad, expected, rtol=1e-12)
    numeric = numerical_grad(lambda: T.sum_all(A @ B), A, h=1e-6)
    assert relative_error(A.grad, numeric) < 1e-5


# -- softmax ------------------------------------------------------------------------

def test_softmax_uniform():
    np.testing.assert_allclose(T.softmax_rows(Tensor([[0.0, 0.0, 0.0]])).data, [[1 / 3] * 3])


def test_softmax_against_direct_formula():
    row = [1.0, 2.0, 3.0]
    total = sum(math.exp(v) for v in row)
    direct = [math.exp(v) / total for v in row]
    np.testing.assert_allclose(direct, [0.09003, 0.24473, 0.66524], atol=1e-4)
    np.testing.assert_allclose(T.softmax_rows(Tensor([row])).data[0], direct, atol=1e-15)


@given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_shift_invariant(x, c):
    a = T.softmax_rows(Tensor(x)).data
    b = T.softmax_rows(Tensor(x + c)).data
    np.testing.assert_allclose(a, b, atol=1e-12)


@given(arrays(np.float64, (4, 7), elements=st.floats(-30, 30)))
def test_softmax_rows_normalised(x):
    y = T.softmax_rows(Tensor(x)).data
    assert np.all(np.abs(y.sum(axis=1) - 1) <= 1e-12)
    assert np.all((y >= 0) & (y <= 1))


def test_softmax_extreme_logits_stay_finite():
    y = T.softmax_rows(Tensor([[1000.0, 0.0, -1000.0]])).data
    assert np.all(np.isfinite(y))
    assert y[0, 0] == pytest.approx(1.0)


# -- layer norm -----------------------------------------------------------------------

def ln(x, gamma=None, beta=None):
    d = np.shape(x)[1]
    g = Tensor(np.ones(d) if gamma is None else gamma)
    b = Tensor(np.zeros(d) if beta is None else beta)
    return T.layer_norm(Tensor(x), g, b).data


def test_layer_norm_constant_row_is_zero():
    assert np.array_equal(ln([[3.0, 3.0, 3.0]]), np.zeros((1, 3)))


def test_layer_norm_hand_values():
    mean = 2.0
    var = ((1 - mean) ** 2 + 0 + (3 - mean) ** 2) / 3
    expected = [(v - mean) / math.sqrt(var + 1e-5) for v in (1.0, 2.0, 3.0)]
    np.testing.assert_allclose(expected, [-1.22474, 0.0, 1.22474], atol=1e-3)
    np.testing.assert_allclose(ln([[1.0, 2.0, 3.0]])[0], expected, atol=1e-14)


def test_layer_norm_zero_gamma_gives_beta(rng):
    beta = rng.normal(size=4)
    out = ln(rng.normal(size=(3, 4)), gamma=np.zeros(4), beta=beta)
    assert np.array_equal(out, np.tile(beta, (3, 1)))


@settings(max_examples=50)
@given(arrays(np.float64, (3, 6), elements=st.floats(-2, 2)))
def test_layer_norm_moments(x):
    spread = x.max(axis=1) - x.min(axis=1)
    out = ln(x)
    for row, s in zip(out, spread):
        assert abs(row.mean()) < 1e-10
        if s > 0.5:
            assert abs(row.var() - 1) < 1e-3


# -- elementwise ops ------------------------------------------------------------------

def test_relu():
    assert np.array_equal(T.relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])


def test_dropout_eval_is_identity(rng):
    x = Tensor(rng.normal(size=(4, 5)))
    assert T.dropout(x, 0.5, training=False, rng=rng) is x


def test_dropout_expectation_monte_carlo():
    rng = np.random.default_rng(0)
    x = np.array([[1.0, -2.0, 0.5, 3.0]])
    draws = 100_000
    big = Tensor(np.repeat(x, draws, axis=0))
    mean = T.dropout(big, 0.5, training=True, rng=rng).data.mean(axis=0)
    np.testing.assert_allclose(mean, x[0], rtol=0.02)


def test_dropout_rejects_bad_p(rng):
    with pytest.raises(ValueError):
        T.dropout(Tensor([1.0]), 1.0, training=True, rng=rng)


def test_add_and_concat_shape_errors():
    with pytest.raises(ShapeMismatch):
        T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))
    with pytest.raises(ShapeMismatch):
        T.concat_cols([Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3)))])


def test_concat_cols_joins_feature_axis():
    out = T.concat_cols([Tensor([[1.0], [2.0]]), Tensor([[3.0, 4.0], [5.0, 6.0]])])
    assert np.array_equal(out.data, [[1, 3, 4], [2, 5, 6]])


# -- backward -----------------------------------------------------------------------

def test_backward_sum_gives_ones(rng):
    x = param(rng, 3, 4)
    T.sum_all(x).backward()
    assert np.array_equal(x.grad, np.ones((3, 4)))


def test_backward_sum_softmax_is_zero(rng):
    x = param(rng, 3, 4)
    T.sum_all(T.softmax_rows(x)).backward()
    np.testing.assert_allclose(x.grad, 0.0, atol=1e-15)


def test_backward_requires_scalar(rng):
    with pytest.raises(NotScalar):
        param(rng, 2, 2).backward()


def test_backward_populates_every_reachable_tensor(rng):
    x = param(rng, 2, 3)
    h = T.relu(x @ param(rng, 3, 3))
    loss = T.sum_all(h)
    loss.backward()
    for node in loss.graph():
        if node.requires_grad:
            assert node.grad is not None


def test_graph_is_topological(rng):
    x = param(rng, 2, 3)
    y = T.softmax_rows(x @ x.T) @ x
    order = y.graph()
    pos = {id(n): i for i, n in enumerate(order)}
    for n in order:
        for p in n._parents:
            assert pos[id(p)] < pos[id(n)]


OPS = {
    "matmul": lambda ts: T.matmul(ts[0], ts[1]),
    "add_row_broadcast": lambda ts: T.add(ts[0], ts[2]),
    "sub": lambda ts: T.sub(ts[0], ts[0] * 0.3),
    "mul": lambda ts: T.mul(ts[0], ts[0]),
    "transpose": lambda ts: T.transpose(ts[0]),
    "relu": lambda ts: T.relu(ts[0]),
    "softmax_rows": lambda ts: T.softmax_rows(ts[0]),
    "log_softmax_rows": lambda ts: T.log_softmax_rows(ts[0]),
    "layer_norm": lambda ts: T.layer_norm(ts[0], ts[3], ts[2]),
    "concat_cols": lambda ts: T.concat_cols([ts[0], ts[0] * 2.0]),
    "concat_rows": lambda ts: T.concat_rows([ts[0], ts[0]]),
    "slice_cols": lambda ts: T.slice_cols(ts[0], 1, 3),
    "take_rows": lambda ts: T.take_rows(ts[0], [2, 0, 2]),
    "pick": lambda ts: T.pick(ts[0], [0, 3, 1]),
    "l2_normalize_rows": lambda ts: T.l2_normalize_rows(ts[0]),
    "mean": lambda ts: T.mean_all(ts[0]),
}


@pytest.mark.parametrize("name", sorted(OPS))
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_op_gradients_match_finite_differences(name, seed):
    rng = np.random.default_rng(seed)
    ts = [param(rng, 3, 4), param(rng, 4, 2), param(rng, 4), param(rng, 4)]
    weights = {}

    def loss():
        out = OPS[name](ts)
        w = weights.setdefault("w", np.random.default_rng(99).uniform(-1, 1, size=out.shape))
        return T.sum_all(T.mul(out, Tensor(w))) if out.ndim else out

    errs = check_gradients(loss, {f"t{i}": t for i, t in enumerate(ts)})
    assert max(errs.values()) < 1e-4, errs


def test_mlp_attention_composite_gradcheck():
    rng = np.random.default_rng(5)
    x = param(rng, 5, 6)
    w1, w2, w3 = param(rng, 6, 8), param(rng, 8, 6), param(rng, 6, 3)
    gamma, beta = param(rng, 8), param(rng, 8)

    def loss():
        h = T.relu(T.layer_norm(x @ w1, gamma, beta))
        h = h @ w2
        att = T.softmax_rows(h @ h.T * 0.5) @ h
        out = T.log_softmax_rows(T.relu(att) @ w3)
        return T.mean_all(T.pick(out, [0, 1, 2, 0, 1]))

    errs = check_gradients(loss, dict(x=x, w1=w1, w2=w2, w3=w3, gamma=gamma, beta=beta))
    assert max(errs.values()) < 1e-4, errs


def test_repeated_forward_backward_is_deterministic():
    def run():
        rng = np.random.default_rng(3)
        x = param(rng, 4, 5)
        w = param(rng, 5, 5)
        h = T.dropout(T.relu(x @ w), 0.5, training=True, rng=rng)
        T.sum_all(T.softmax_rows(h) @ w).backward()
        return x.grad, w.grad

    (a1, b1), (a2, b2) = run(), run()
    assert np.array_equal(a1, a2) and np.array_equal(b1, b2)


def test_gradients_accumulate_on_leaves(rng):
    x = param(rng, 2, 2)
    T.sum_all(x).backward()
    T.sum_all(x).backward()
    assert np.array_equal(x.grad, 2 * np.ones((2, 2)))


def test_no_grad_builds_no_graph(rng):
    x = param(rng, 2, 2)
    with T.no_grad():
        y = T.relu(x @ x)
    assert not y.requires_grad and y._parents == ()


# -- kernel backends agree ------------------------------------------------------------

backends = ["numpy"] + (["cython"] if kernels.compiled is not None else [])


@pytest.mark.parametrize("backend", backends)
def test_kernel_backend_matches_reference(backend):
    mod, ref = kernels.backend_module(backend), kernels.backend_module("numpy")
    rng = np.random.default_rng(0)
    x = rng.normal(size=(7, 9))
    g = rng.normal(size=(7, 9))
    gamma, beta = rng.normal(size=9), rng.normal(size=9)
    np.testing.assert_allclose(mod.softmax_rows(x), ref.softmax_rows(x), atol=1e-15)
    y = ref.softmax_rows(x)
    np.testing.assert_allclose(mod.softmax_rows_backward(y, g), ref.softmax_rows_backward(y, g),
                               atol=1e-14)
    for a, b in zip(mod.layer_norm_forward(x, gamma, beta, 1e-5),
                    ref.layer_norm_forward(x, gamma, beta, 1e-5)):
        np.testing.assert_allclose(a, b, atol=1e-13)
    _, xhat, rstd = ref.layer_norm_forward(x, gamma, beta, 1e-5)
    for a, b in zip(mod.layer_norm_backward(g, xhat, rstd, gamma),
                    ref.layer_norm_backward(g, xhat, rstd, gamma)):
        np.testing.assert_allclose(a, b, atol=1e-13)
