import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from maskclr import autodiff as ad
from maskclr.errors import AxisError, ContractError, ShapeError

from gradcheck import check_op, op_cases, pipeline_case

CASES = op_cases()


@pytest.mark.parametrize("name,build,inputs", CASES, ids=[c[0] for c in CASES])
def test_op_gradient_matches_finite_differences(name, build, inputs):
    assert check_op(build, inputs) < 1e-3


def test_infonce_pipeline_gradient():
    build, inputs = pipeline_case()
    assert check_op(build, inputs) < 1e-2


def test_backward_requires_scalar():
    x = ad.parameter(np.ones((2, 2)))
    with pytest.raises(ContractError):
        ad.backward(ad.mul(x, x))


def test_item_requires_single_element():
    with pytest.raises(ContractError):
        ad.Tensor(np.zeros(3)).item()


def test_gradients_accumulate_on_leaves():
    x = ad.parameter(np.array([1.0, 2.0]))
    ad.backward(ad.sum_all(x))
    ad.backward(ad.sum_all(ad.scale(x, 3.0)))
    np.testing.assert_allclose(x.grad, [4.0, 4.0])


def test_shared_subexpression_counts_twice():
    x = ad.parameter(np.array([3.0]))
    y = ad.mul(x, x)
    ad.backward(ad.sum_all(ad.add(y, y)))
    np.testing.assert_allclose(x.grad, [12.0])


def test_deep_chain_does_not_recurse():
    x = ad.parameter(np.array([1.0]))
    y = x
    for _ in range(5000):
        y = ad.scale(y, 1.0)
    ad.backward(ad.sum_all(y))
    np.testing.assert_allclose(x.grad, [1.0])


def test_bad_broadcast_rejected():
    with pytest.raises(ShapeError):
        ad.add(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones(2)))


def test_axis_error():
    with pytest.raises(AxisError):
        ad.softmax(ad.Tensor(np.ones((2, 3))), axis=2)


def test_softmax_rows_sum_to_one(rng):
    y = ad.softmax(ad.Tensor(rng.standard_normal((4, 7)) * 30), axis=-1).data
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-6)


def test_l2_normalize_zero_row_is_zero_with_zero_grad():
    x = ad.parameter(np.array([[0.0, 0.0], [3.0, 4.0]]))
    y = ad.l2_normalize(x)
    np.testing.assert_allclose(y.data, [[0, 0], [0.6, 0.8]], atol=1e-7)
    ad.backward(ad.sum_all(y))
    np.testing.assert_array_equal(x.grad[0], [0.0, 0.0])


def test_dropout_eval_is_identity(rng):
    x = rng.standard_normal((3, 4))
    np.testing.assert_array_equal(ad.dropout(ad.Tensor(x), 0.5, rng, training=False).data, x.astype(np.float32))


def test_dropout_is_inverted(rng):
    x = np.ones((200, 200))
    y = ad.dropout(ad.Tensor(x), 0.25, rng, training=True).data
    assert abs(y.mean() - 1.0) < 0.02
    assert set(np.unique(y)) <= {0.0, np.float32(1 / 0.75)}


def test_backward_is_deterministic():
    build, inputs = pipeline_case(seed=3)
    grads = []
    for _ in range(2):
        w = ad.parameter(inputs[0])
        ad.backward(build(w))
        grads.append(w.grad.copy())
    np.testing.assert_array_equal(grads[0], grads[1])


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float32, (3, 4), elements=st.floats(-5, 5, width=32)),
       hnp.arrays(np.float32, (3, 4), elements=st.floats(-5, 5, width=32)),
       st.floats(-3, 3), st.floats(-3, 3))
def test_gradient_is_linear_in_the_loss(a, b, alpha, beta):
    """grad(alpha*f + beta*g) == alpha*grad f + beta*grad g."""
    def grad_of(weights):
        x = ad.parameter(a)
        f = ad.sum_all(ad.mul(ad.gelu(x), ad.Tensor(b)))
        g = ad.sum_all(ad.mul(x, x))
        loss = ad.add(ad.scale(f, weights[0]), ad.scale(g, weights[1]))
        ad.backward(loss)
        return x.grad

    combined = grad_of((alpha, beta))
    parts = alpha * grad_of((1.0, 0.0)) + beta * grad_of((0.0, 1.0))
    np.testing.assert_allclose(combined, parts, rtol=1e-4, atol=1e-4)


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float32, (3, 6), elements=st.floats(-50, 50, width=32)))
def test_l2_normalize_unit_norm(x):
    y = ad.l2_normalize(ad.Tensor(x)).data
    norms = np.linalg.norm(y.astype(np.float64), axis=1)
    nonzero = np.linalg.norm(x.astype(np.float64), axis=1) > 1e-12
    np.testing.assert_allclose(norms[nonzero], 1.0, atol=1e-5)
