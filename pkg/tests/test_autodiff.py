import numpy as np
import pytest

from cloudmae import autodiff as ad
from cloudmae.autodiff import (GraphError, NumericsError, ShapeError, Tensor,
                               backward, gradient_check)
from cloudmae.gradcheck import OP_CHECKS
from cloudmae.params import ParamStore


def test_softmax_uniform_on_zeros():
    out = ad.softmax(Tensor([0.0, 0.0, 0.0]))
    assert np.allclose(out.data, [1 / 3, 1 / 3, 1 / 3])


def test_layer_norm_constant_vector_is_zero():
    x = Tensor([5.0, 5.0, 5.0, 5.0])
    out = ad.layer_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)))
    assert np.allclose(out.data, 0.0)


def test_matmul_identity():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(3, 3))
    out = ad.matmul(Tensor(np.eye(3)), Tensor(a))
    assert np.array_equal(out.data, a)


def test_backward_quadratic():
    w = Tensor([1.0, 2.0], requires_grad=True)
    loss = ad.reduce_sum(w * w)
    backward(loss)
    assert np.array_equal(w.grad, [2.0, 4.0])


def test_gradient_accumulation_is_exactly_double():
    x = Tensor(np.random.default_rng(1).normal(size=(4,)), requires_grad=True)

    def g(t):
        return ad.reduce_sum(ad.gelu(t) * 1.7)

    loss = g(x) + g(x)
    backward(loss)
    twice = x.grad.copy()
    x.zero_grad()
    backward(g(x))
    assert np.array_equal(twice, 2.0 * x.grad)


def test_unused_parameter_gets_zero_gradient():
    store = ParamStore(0)
    used = store.add("used", (3,))
    store.add("unused", (2, 2))
    backward(ad.reduce_sum(used * used))
    grads = store.gradients()
    assert grads["used"].shape == (3,)
    assert np.array_equal(grads["unused"], np.zeros((2, 2)))


def test_backward_rejects_non_scalar_loss():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(GraphError, match="scalar"):
        backward(x * 2.0)


def test_backward_rejects_consumed_graph():
    x = Tensor([1.0, 2.0], requires_grad=True)
    loss = ad.reduce_sum(x * x)
    backward(loss)
    with pytest.raises(GraphError, match="consumed"):
        backward(loss)


def test_backward_through_consumed_intermediate_fails():
    x = Tensor([1.0, 2.0], requires_grad=True)
    mid = x * x
    backward(ad.reduce_sum(mid))
    with pytest.raises(GraphError):
        backward(ad.reduce_sum(mid * 2.0))


def test_nan_result_raises():
    with pytest.raises(NumericsError):
        ad.log(Tensor([-1.0]))
    with pytest.raises(NumericsError):
        ad.exp(Tensor([1e9]))
    with pytest.raises(NumericsError):
        Tensor([np.nan])


def test_shape_errors_name_the_op():
    with pytest.raises(ShapeError, match="matmul"):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))
    with pytest.raises(ShapeError, match="concat"):
        ad.concat([Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4)))], axis=0)
    with pytest.raises(ShapeError, match="layer_norm"):
        ad.layer_norm(Tensor(np.zeros((2, 3))), Tensor(np.zeros(4)), Tensor(np.zeros(4)))


def test_forward_determinism_bit_identical():
    def run():
        rng = np.random.default_rng(7)
        x = Tensor(rng.normal(size=(5, 8)))
        g, b = Tensor(np.ones(8)), Tensor(np.zeros(8))
        out = ad.softmax(ad.layer_norm(ad.gelu(x), g, b))
        return out.data.tobytes()

    assert run() == run()


def test_reduce_max_routes_gradient_to_first_argmax():
    x = Tensor([[1.0, 3.0, 3.0]], requires_grad=True)
    backward(ad.reduce_sum(ad.reduce_max(x, axis=1)))
    assert np.array_equal(x.grad, [[0.0, 1.0, 0.0]])


def test_gather_accumulates_duplicate_indices():
    x = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
    out = ad.gather(x, [1, 1, 2], axis=0)
    backward(ad.reduce_sum(out))
    assert np.array_equal(x.grad, [[0, 0], [2, 2], [1, 1]])


def test_dropout_eval_is_identity_and_train_scales():
    x = Tensor(np.ones((4, 4)), requires_grad=True)
    out = ad.dropout(x, 0.5, train=False)
    assert np.array_equal(out.data, x.data)
    out = ad.dropout(x, 0.5, train=True, rng=np.random.default_rng(0))
    kept = out.data[out.data != 0]
    assert np.allclose(kept, 2.0)  # inverted scaling


@pytest.mark.parametrize("name", sorted(OP_CHECKS))
def test_finite_difference_per_op(name):
    rng = np.random.default_rng(123)
    fn, tensors = OP_CHECKS[name](rng)
    err = gradient_check(lambda *_: fn(), tensors)
    assert err < 1e-4, f"{name}: max rel err {err:.3e}"
