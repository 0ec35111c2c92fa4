import math

import numpy as np
import pytest

from mdlab import tensor as T
from mdlab.errors import ShapeError
from mdlab.tensor import Tensor


def test_matmul_identity_case():
    a = Tensor(np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]))
    b = Tensor(np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]))
    out = T.matmul(a, b)
    assert np.array_equal(out.data, np.array([[4.0, 5.0], [10.0, 11.0]]))


def test_matmul_shape_mismatch_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))


def test_add_shape_mismatch_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(3, 2\)"):
        T.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))


def test_softmax_all_zero_row():
    out = T.softmax(Tensor(np.zeros(4)))
    assert np.allclose(out.data, 0.25, atol=0, rtol=0)


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(5, 7)) * 10)
    p = T.softmax(x).data
    assert np.abs(p.sum(axis=-1) - 1.0).max() < 1e-9


def test_cross_entropy_certain_prediction_is_zero():
    logits = Tensor(np.array([[1000.0, 0.0, 0.0]]))
    loss = T.masked_cross_entropy(logits, np.array([0]), np.array([1.0]))
    assert loss.item() == 0.0


def test_cross_entropy_nonnegative():
    rng = np.random.default_rng(1)
    logits = Tensor(rng.normal(size=(6, 5)))
    targets = rng.integers(0, 5, size=6)
    w = rng.random(6)
    assert T.masked_cross_entropy(logits, targets, w).item() >= 0.0


def test_backward_sum_of_squares():
    x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    loss = (x ** 2).sum()
    loss.backward()
    assert np.allclose(x.grad, [2.0, 4.0, 6.0])


def test_backward_softmax_cross_entropy_two_class():
    logits = Tensor(np.array([[0.0, 0.0]]), requires_grad=True)
    loss = T.masked_cross_entropy(logits, np.array([0]), np.array([1.0]))
    loss.backward()
    assert np.allclose(logits.grad, [[-0.5, 0.5]])


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError, match="scalar"):
        (x * 2.0).backward()


def test_broadcast_add_backward():
    a = Tensor(np.ones((2, 3)), requires_grad=True)
    b = Tensor(np.ones(3), requires_grad=True)
    T.add(a, b).sum().backward()
    assert np.array_equal(a.grad, np.ones((2, 3)))
    assert np.array_equal(b.grad, np.full(3, 2.0))


def test_mul_by_python_scalar_keeps_dtype():
    x = Tensor(np.ones((2, 2), dtype=np.float32))
    assert T.mul(x, 0.5).data.dtype == np.float32
    assert T.add(x, 1.0).data.dtype == np.float32


def test_embedding_gather_and_scatter_grad():
    w = Tensor(np.arange(12.0).reshape(4, 3), requires_grad=True)
    ids = np.array([0, 2, 2])
    out = T.embedding(w, ids)
    assert np.array_equal(out.data, w.data[ids])
    out.sum().backward()
    expected = np.zeros((4, 3))
    expected[0] = 1.0
    expected[2] = 2.0
    assert np.array_equal(w.grad, expected)


def test_embedding_rejects_out_of_range():
    with pytest.raises(ShapeError, match="out of range"):
        T.embedding(Tensor(np.zeros((4, 3))), np.array([4]))


def test_ops_are_deterministic():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(6, 6))
    b = rng.normal(size=(6, 6))
    r1 = T.matmul(Tensor(a), Tensor(b)).data
    r2 = T.matmul(Tensor(a.copy()), Tensor(b.copy())).data
    assert np.array_equal(r1, r2)


def _random_two_layer_net(seed):
    rng = np.random.default_rng(seed)
    w1 = Tensor(rng.normal(0, 0.5, size=(4, 8)), requires_grad=True)
    b1 = Tensor(rng.normal(0, 0.2, size=8), requires_grad=True)
    w2 = Tensor(rng.normal(0, 0.5, size=(8, 3)), requires_grad=True)
    g = Tensor(1.0 + rng.normal(0, 0.2, size=3), requires_grad=True)
    bias = Tensor(rng.normal(0, 0.2, size=3), requires_grad=True)
    x = rng.normal(size=(5, 4))
    targets = rng.integers(0, 3, size=5)
    weights = rng.random(5)

    def loss_fn():
        h = T.gelu(T.add(T.matmul(Tensor(x), w1), b1))
        out = T.layer_norm(T.matmul(h, w2), g, bias)
        sm = T.softmax(out)
        return T.masked_cross_entropy(T.mul(sm, 3.0), targets, weights)

    return loss_fn, [w1, b1, w2, g, bias]


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_two_layer_net_matches_finite_differences(seed):
    loss_fn, params = _random_two_layer_net(seed)
    assert T.grad_check(loss_fn, params, 1e-5) < 1e-4


def test_grad_check_quadratic():
    x = Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)
    err = T.grad_check(lambda: (x ** 2).sum(), [x], 1e-5)
    assert err < 1e-7


def test_grad_check_constant_function():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    c = Tensor(np.array(3.0))
    err = T.grad_check(lambda: T.mul(c, 1.0), [x], 1e-5)
    assert err == 0.0


def test_grad_check_reports_nan_as_failure():
    x = Tensor(np.array([0.0]), requires_grad=True)
    err = T.grad_check(lambda: T.mul(x, float("nan")).sum(), [x], 1e-5)
    assert err == math.inf


def test_layer_norm_finite_difference():
    rng = np.random.default_rng(5)
    x = Tensor(rng.normal(size=(3, 6)), requires_grad=True)
    g = Tensor(1.0 + rng.normal(0, 0.3, size=6), requires_grad=True)
    b = Tensor(rng.normal(0, 0.3, size=6), requires_grad=True)
    w = rng.random((3, 6))

    def f():
        return T.mul(T.layer_norm(x, g, b), Tensor(w)).sum()

    assert T.grad_check(f, [x, g, b], 1e-5) < 1e-6


def test_transpose_reshape_roundtrip_grad():
    x = Tensor(np.arange(24.0).reshape(2, 3, 4), requires_grad=True)
    y = T.reshape(T.transpose(x, (1, 0, 2)), (6, 4))
    T.mul(y, 2.0).sum().backward()
    assert np.array_equal(x.grad, np.full((2, 3, 4), 2.0))


def test_no_grad_skips_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with T.no_grad():
        y = (x * 2.0).sum()
    assert y._backward is None and not y.requires_grad
