import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbsde_bml import autodiff as ad
from conftest import fd_gradient


def grad_of(make_scalar, x0):
    """Autodiff gradient of a scalar-valued function of one leaf array."""
    leaf = ad.Tensor(x0, requires_grad=True)
    out = make_scalar(leaf)
    out.backward()
    return leaf.grad


def check_against_fd(make_scalar, x0, rtol=1e-6, h=1e-6):
    auto = grad_of(make_scalar, x0)
    numeric = fd_gradient(lambda v: make_scalar(ad.Tensor(v)).item(), x0, h=h)
    np.testing.assert_allclose(auto, numeric, rtol=rtol, atol=1e-9)


def test_elementwise_primitives_match_finite_differences(rng):
    x = rng.uniform(0.3, 1.5, size=(3, 4))
    cases = [
        lambda t: (t + 2.0).sum(),
        lambda t: (3.0 - t).sum(),
        lambda t: (t * t).sum(),
        lambda t: (t / 2.5).sum(),
        lambda t: (2.5 / t).sum(),
        lambda t: (-t).sum(),
        lambda t: (t**3).sum(),
        lambda t: (t**0.5).sum(),
        lambda t: ad.sin(t).sum(),
        lambda t: ad.cos(t).sum(),
        lambda t: ad.exp(t).sum(),
        lambda t: ad.tanh(t).sum(),
        lambda t: t.mean(),
        lambda t: t.mean(axis=0).sum(),
        lambda t: t.sum(axis=1, keepdims=True).sum(),
        lambda t: t.reshape((4, 3)).sum(axis=0).mean(),
    ]
    for case in cases:
        check_against_fd(case, x)


def test_integer_power_handles_negative_bases():
    x = ad.Tensor(np.array([-2.0, 3.0]), requires_grad=True)
    out = (x**3).sum()
    assert out.item() == pytest.approx(-8.0 + 27.0)
    out.backward()
    np.testing.assert_allclose(x.grad, 3.0 * np.array([-2.0, 3.0]) ** 2)


def test_broadcasting_gradients(rng):
    a0 = rng.normal(size=(5, 1))
    b0 = rng.normal(size=(5, 4))
    a = ad.Tensor(a0, requires_grad=True)
    out = (a * ad.Tensor(b0)).sum()
    out.backward()
    np.testing.assert_allclose(a.grad, b0.sum(axis=1, keepdims=True))

    # the (M, 1, 1) * (d, d) pattern used to build diagonal diffusion blocks
    y = ad.Tensor(rng.normal(size=(6, 1, 1)), requires_grad=True)
    eye = np.eye(3)
    out = (y * ad.Tensor(eye)).sum()
    out.backward()
    np.testing.assert_allclose(y.grad, np.full((6, 1, 1), eye.sum()))


def test_matmul_gradients(rng):
    a0 = rng.normal(size=(4, 3))
    w0 = rng.normal(size=(3, 2))
    sel = rng.normal(size=(4, 2))

    def make(leaf):
        return (ad.matmul(leaf, ad.Tensor(w0)) * ad.Tensor(sel)).sum()

    check_against_fd(make, a0)

    w = ad.Tensor(w0, requires_grad=True)
    out = (ad.matmul(ad.Tensor(a0), w) * ad.Tensor(sel)).sum()
    out.backward()
    np.testing.assert_allclose(w.grad, a0.T @ sel)


def test_concat_routes_gradients(rng):
    a = ad.Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    b = ad.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    weight = np.concatenate([np.ones((3, 2)), 2.0 * np.ones((3, 4))], axis=1)
    out = (ad.concat([a, b], axis=1) * ad.Tensor(weight)).sum()
    out.backward()
    np.testing.assert_allclose(a.grad, np.ones((3, 2)))
    np.testing.assert_allclose(b.grad, 2.0 * np.ones((3, 4)))


def test_reused_node_accumulates_gradient():
    x = ad.Tensor(np.array([2.0]), requires_grad=True)
    y = x * x + x * 3.0  # dy/dx = 2x + 3
    y.backward()
    np.testing.assert_allclose(x.grad, [7.0])


def test_quadratic_gradient_is_two_theta(rng):
    theta0 = rng.normal(size=8)
    theta = ad.Tensor(theta0, requires_grad=True)
    loss = (theta * theta).sum()
    loss.backward()
    np.testing.assert_allclose(theta.grad, 2.0 * theta0)


def test_unused_leaf_gets_no_gradient():
    used = ad.Tensor(np.ones(3), requires_grad=True)
    unused = ad.Tensor(np.ones(3), requires_grad=True)
    (used * 2.0).sum().backward()
    assert unused.grad is None
    np.testing.assert_allclose(used.grad, 2.0 * np.ones(3))


def test_no_grad_blocks_recording():
    x = ad.Tensor(np.ones(3), requires_grad=True)
    with ad.no_grad():
        out = (x * 2.0).sum()
    assert not out.tracked
    assert ad.is_grad_enabled()


def test_deep_chain_backward_is_iterative():
    x = ad.Tensor(np.array([1.0]), requires_grad=True)
    out = x
    for _ in range(5000):
        out = out + 1.0
    out.sum().backward()
    np.testing.assert_allclose(x.grad, [1.0])


def test_backward_requires_scalar():
    x = ad.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ad.UnsupportedPrimitive):
        (x * 2.0).backward()


def test_unsupported_primitives_raise():
    x = ad.Tensor(np.ones((2, 2)))
    with pytest.raises(ad.UnsupportedPrimitive):
        _ = x ** ad.Tensor(2.0)
    with pytest.raises(ad.UnsupportedPrimitive):
        ad.matmul(x, ad.Tensor(np.ones(2)))


@given(
    st.integers(min_value=1, max_value=4),
    st.integers(min_value=1, max_value=4),
)
@settings(max_examples=25, deadline=None)
def test_unbroadcast_reverses_broadcasting(rows, cols):
    g = np.ones((rows, cols))
    assert ad._unbroadcast(g, (rows, cols)).shape == (rows, cols)
    np.testing.assert_allclose(ad._unbroadcast(g, (rows, 1)), np.full((rows, 1), cols))
    np.testing.assert_allclose(ad._unbroadcast(g, (1, cols)), np.full((1, cols), rows))
    np.testing.assert_allclose(ad._unbroadcast(g, (cols,)), np.full(cols, rows))
