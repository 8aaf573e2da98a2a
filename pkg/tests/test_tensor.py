"""Autodiff engine: oracle gradients, shape checking, and property tests."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from machineseq import tensor as T
from machineseq.errors import ContractError, ShapeError

finite = st.floats(-3.0, 3.0).map(lambda v: round(v, 4))


def small_matrix(rows=(1, 4), cols=(1, 4)):
    return hnp.arrays(np.float64,
                      st.tuples(st.integers(*rows), st.integers(*cols)),
                      elements=finite)


def test_square_sum_gradient_oracle():
    x = T.parameter([1.0, 2.0, 3.0])
    loss = T.sum_(T.mul(x, x))
    loss.backward()
    assert np.array_equal(x.grad, [2.0, 4.0, 6.0])


def test_matmul_gradients_oracle():
    a = T.parameter([[1.0, 2.0], [3.0, 4.0]])
    b = T.parameter([[5.0, 6.0], [7.0, 8.0]])
    T.sum_(T.matmul(a, b)).backward()
    # dL/da = 1 @ b.T, dL/db = a.T @ 1
    assert np.array_equal(a.grad, [[11.0, 15.0], [11.0, 15.0]])
    assert np.array_equal(b.grad, [[4.0, 4.0], [6.0, 6.0]])


def test_bias_row_add_gradient():
    x = T.parameter(np.ones((3, 2)))
    b = T.parameter(np.zeros((1, 2)))
    T.sum_(T.add(x, b)).backward()
    assert np.array_equal(b.grad, [[3.0, 3.0]])


def test_softmax_forward_oracle():
    out = T.softmax(T.constant([[0.0, 0.0], [math.log(3.0), 0.0]]))
    assert np.allclose(out.data, [[0.5, 0.5], [0.75, 0.25]], atol=1e-15)
    assert np.allclose(out.data.sum(axis=1), 1.0, atol=1e-15)


def test_masked_softmax_exact_zero():
    mask = np.array([[False, True], [False, False]])
    out = T.softmax(T.masked_fill(T.constant(np.ones((2, 2))), mask, -np.inf))
    assert out.data[0, 1] == 0.0
    assert out.data[0, 0] == 1.0


def test_masked_fill_blocks_gradient():
    x = T.parameter(np.ones((2, 2)))
    mask = np.array([[False, True], [False, False]])
    T.sum_(T.masked_fill(x, mask, 0.0)).backward()
    assert np.array_equal(x.grad, [[1.0, 0.0], [1.0, 1.0]])


def test_gather_scatter_oracles():
    x = T.parameter([[1.0, 2.0], [3.0, 4.0]])
    g = T.gather_rows(x, [1, 1, 0])
    assert np.array_equal(g.data, [[3, 4], [3, 4], [1, 2]])
    T.sum_(g).backward()
    assert np.array_equal(x.grad, [[1.0, 1.0], [2.0, 2.0]])

    y = T.parameter([[1.0], [2.0], [3.0]])
    s = T.scatter_add_rows(y, [0, 0, 2], 3)
    assert np.array_equal(s.data, [[3.0], [0.0], [3.0]])


def test_embedding_lookup_gradient():
    table = T.parameter(np.arange(6.0).reshape(3, 2))
    out = T.embedding_lookup(table, [2, 2])
    T.sum_(out).backward()
    assert np.array_equal(table.grad, [[0, 0], [0, 0], [2.0, 2.0]])


def test_scale_rows_oracle():
    x = T.parameter([[1.0, 1.0], [1.0, 1.0]])
    s = T.parameter([[2.0], [3.0]])
    out = T.scale_rows(x, s)
    assert np.array_equal(out.data, [[2, 2], [3, 3]])
    T.sum_(out).backward()
    assert np.array_equal(s.grad, [[2.0], [2.0]])


def test_grad_accumulates_across_backward_calls():
    x = T.parameter([1.0, 1.0])
    T.sum_(x).backward()
    T.sum_(x).backward()
    assert np.array_equal(x.grad, [2.0, 2.0])


def test_reused_node_gradient():
    x = T.parameter([2.0])
    y = T.add(x, x)  # dL/dx must account for both paths
    T.sum_(y).backward()
    assert np.array_equal(x.grad, [2.0])


def test_backward_requires_scalar():
    with pytest.raises(ContractError):
        T.parameter(np.ones((2, 2))).backward()


@pytest.mark.parametrize("op,shapes", [
    (T.matmul, ((2, 3), (2, 3))),
    (T.add, ((2, 3), (3, 2))),
    (T.mul, ((2, 3), (2, 2))),
    (T.div, ((2, 3), (2, 2))),
])
def test_shape_errors(op, shapes):
    a = T.constant(np.ones(shapes[0]))
    b = T.constant(np.ones(shapes[1]))
    with pytest.raises(ShapeError):
        op(a, b)


def test_concat_slice_transpose():
    a = T.parameter(np.ones((2, 2)))
    b = T.parameter(2 * np.ones((1, 2)))
    c = T.concat([a, b], axis=0)
    assert c.shape == (3, 2)
    T.sum_(T.slice_rows(c, 2, 3)).backward()
    assert np.array_equal(a.grad, np.zeros((2, 2)))
    assert np.array_equal(b.grad, np.ones((1, 2)))
    assert T.transpose(T.constant(np.ones((2, 3)))).shape == (3, 2)


@settings(max_examples=20, deadline=None)
@given(small_matrix())
def test_grad_check_elementwise_chain(x):
    # exp/tanh/elu/leaky_relu composite against central differences
    p = T.parameter(x)

    def f():
        h = T.tanh(p)
        h = T.elu(T.scale(h, 0.7))
        h = T.leaky_relu(T.add(h, T.constant(np.full(x.shape, 0.1))), 0.2)
        return T.sum_(T.mul(h, h))

    assert T.grad_check(f, [p]) < 1e-5


@settings(max_examples=20, deadline=None)
@given(small_matrix(rows=(2, 4), cols=(2, 4)))
def test_grad_check_softmax_log(x):
    p = T.parameter(x)

    def f():
        sm = T.softmax(p, axis=-1)
        return T.scale(T.sum_(T.log(sm)), -1.0)

    assert T.grad_check(f, [p]) < 1e-5


@settings(max_examples=15, deadline=None)
@given(small_matrix(rows=(2, 3), cols=(2, 3)))
def test_grad_check_matmul_composite(a):
    pa, pb = T.parameter(a), T.parameter(a.T.copy() + 0.25)

    def f():
        return T.mean(T.sqrt(T.add(T.mul(T.matmul(pa, pb), T.matmul(pa, pb)),
                                   T.constant(np.ones((a.shape[0], a.shape[0]))))))

    assert T.grad_check(f, [pa, pb]) < 1e-5


def test_grad_check_attention_block():
    rng = np.random.default_rng(0)
    q = T.parameter(rng.normal(size=(3, 4)))
    k = T.parameter(rng.normal(size=(3, 4)))
    v = T.parameter(rng.normal(size=(3, 4)))
    mask = np.triu(np.ones((3, 3), dtype=bool), k=1)

    def f():
        logits = T.scale(T.matmul(q, T.transpose(k)), 0.5)
        attn = T.softmax(T.masked_fill(logits, mask, -np.inf), axis=-1)
        return T.sum_(T.mul(T.matmul(attn, v), T.matmul(attn, v)))

    assert T.grad_check(f, [q, k, v]) < 1e-6


def test_sum_axis_and_mean():
    x = T.parameter(np.arange(6.0).reshape(2, 3))
    s = T.sum_(x, axis=0)
    assert np.array_equal(s.data, [3.0, 5.0, 7.0])
    m = T.mean(x)
    assert float(m.data) == 2.5
    T.sum_(s).backward()
    assert np.array_equal(x.grad, np.ones((2, 3)))
