import numpy as np
import pytest

import vctree.ndcore as nd
from vctree.errors import NonFiniteError
from vctree.ndcore import ParamStore, SgdMomentum, Tensor, backward, make_optimizer
from vctree.ndcore.optim import clip_grad_inf


def test_zero_gradient_leaves_parameters_unchanged():
    store = ParamStore(seed=0)
    p = store.param("p", (4,))
    before = p.data.copy()
    SgdMomentum(store, lr=0.5).step()
    np.testing.assert_array_equal(p.data, before)


def test_sgd_no_momentum_is_plain_descent():
    store = ParamStore(seed=1)
    p = store.param("p", (3,))
    before = p.data.copy()
    p.grad[...] = [1.0, -2.0, 0.5]
    SgdMomentum(store, lr=1.0, momentum=0.0).step()
    np.testing.assert_allclose(p.data, before - [1.0, -2.0, 0.5], rtol=1e-15)
    assert np.all(p.grad == 0)  # consumed gradients are zeroed


def test_momentum_accumulates_velocity():
    store = ParamStore(seed=2)
    p = store.param("p", ())
    store.set_value("p", 0.0)
    opt = SgdMomentum(store, lr=1.0, momentum=0.5)
    p.grad[...] = 1.0
    opt.step()   # v=1, p=-1
    p.grad[...] = 1.0
    opt.step()   # v=1.5, p=-2.5
    assert abs(p.data - (-2.5)) < 1e-15


def test_adam_converges_on_quadratic():
    # minimum of (x - 3)^2 is x = 3
    store = ParamStore(seed=3)
    x = store.param("x", ())
    store.set_value("x", -4.0)
    opt = make_optimizer("adam", store, {"lr": 0.1})
    for _ in range(200):
        backward(nd.square(x + (-3.0)))
        opt.step()
    assert abs(x.data - 3.0) < 1e-2


def test_non_finite_gradient_aborts_and_names_parameter():
    store = ParamStore(seed=4)
    good = store.param("good", (2,))
    bad = store.param("model.bad", (2,))
    good.grad[...] = 1.0
    bad.grad[...] = [np.nan, 0.0]
    before = good.data.copy()
    with pytest.raises(NonFiniteError) as err:
        SgdMomentum(store, lr=1.0).step()
    assert "model.bad" in str(err.value)
    np.testing.assert_array_equal(good.data, before)  # nothing was updated


def test_optimizer_name_filter_only_touches_its_subset():
    store = ParamStore(seed=5)
    a = store.param("task.a", (2,))
    theta = store.param("score.t", (2,))
    a.grad[...] = 1.0
    theta.grad[...] = 1.0
    frozen = theta.data.copy()
    SgdMomentum(store, lr=0.1, names=store.select("task")).step()
    np.testing.assert_array_equal(theta.data, frozen)
    assert np.all(theta.grad == 1.0)  # untouched, including its gradient


def test_clip_grad_inf_scales_jointly():
    store = ParamStore(seed=6)
    a = store.param("a", (2,))
    b = store.param("b", (2,))
    a.grad[...] = [10.0, -2.0]
    b.grad[...] = [1.0, 0.0]
    norm = clip_grad_inf(store, ["a", "b"], 5.0)
    assert norm == 10.0
    np.testing.assert_allclose(a.grad, [5.0, -1.0])
    np.testing.assert_allclose(b.grad, [0.5, 0.0])
    # already within bounds: untouched
    norm = clip_grad_inf(store, ["a", "b"], 5.0)
    assert norm == 5.0
    np.testing.assert_allclose(a.grad, [5.0, -1.0])
