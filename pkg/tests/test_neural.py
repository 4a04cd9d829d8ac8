"""Network engine: nested derivatives, parameter gradients, Adam."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from featpde.errors import TrainingError
from featpde.neural import (
    AdamState,
    DenseNetwork,
    adam_step,
    derivatives_batch,
    forward,
    forward_with_derivatives,
    glorot_init,
    grad_params,
    load_checkpoint,
    param_count,
    save_checkpoint,
)
from featpde.tape import Var, grad, vmean, vsum

from conftest import assert_close, numeric_grad


# ---------------------------------------------------------------- tape core


def test_tape_arithmetic_matches_numeric():
    rng = np.random.default_rng(1)
    x0 = rng.normal(size=6)

    leaf = Var(x0)
    a = leaf.reshape((2, 3))
    y = (a * 2.0 - 1.0) / (a * a + 3.0)
    z = (y @ np.ones((3, 2))) + a[:, :2]
    loss = vsum(z * z) + vmean(a.tanh())
    (g,) = grad(loss, [leaf])

    def f(xv):
        a = xv.reshape(2, 3)
        y = (a * 2.0 - 1.0) / (a * a + 3.0)
        z = y @ np.ones((3, 2)) + a[:, :2]
        return (z * z).sum() + np.tanh(a).mean()

    assert_close(g, numeric_grad(f, x0), rel=1e-6, abs_=1e-8)


def test_tape_broadcasting_unbroadcast():
    rng = np.random.default_rng(2)
    a0 = rng.normal(size=(4, 1, 3))
    b0 = rng.normal(size=(1, 5, 3))
    a, b = Var(a0), Var(b0)
    loss = vsum((a * b) ** 2)
    ga, gb = grad(loss, [a, b])
    assert ga.shape == a0.shape and gb.shape == b0.shape

    def f_a(flat):
        return ((flat.reshape(a0.shape) * b0) ** 2).sum()

    assert_close(ga.ravel(), numeric_grad(f_a, a0.ravel()), rel=1e-6, abs_=1e-8)


def test_tape_matmul_batched_vjp():
    rng = np.random.default_rng(3)
    a0 = rng.normal(size=(5, 2, 3))
    w0 = rng.normal(size=(3, 4))
    a, w = Var(a0), Var(w0)
    loss = vsum((a @ w) ** 2)
    ga, gw = grad(loss, [a, w])

    def f_w(flat):
        return ((a0 @ flat.reshape(3, 4)) ** 2).sum()

    assert_close(gw.ravel(), numeric_grad(f_w, w0.ravel()), rel=1e-6, abs_=1e-8)
    assert ga.shape == a0.shape


def test_tape_rejects_numpy_ufuncs():
    v = Var(np.ones(3))
    with pytest.raises(TypeError):
        np.exp(v)
    with pytest.raises(TypeError):
        np.sin(v)


def test_tape_rejects_fancy_indexing():
    v = Var(np.ones((4, 3)))
    with pytest.raises(TypeError):
        v[np.array([0, 2])]


def test_tape_clip_min_gradient():
    x0 = np.array([-2.0, -0.5, 0.5, 3.0])
    x = Var(x0)
    loss = vsum(x.clip_min(0.0) * 3.0)
    (g,) = grad(loss, [x])
    assert_close(g, [0.0, 0.0, 3.0, 3.0])


def test_grad_requires_scalar_loss():
    v = Var(np.ones(3))
    with pytest.raises(ValueError):
        grad(v + 1.0, [v])


def test_grad_of_unused_leaf_is_zero():
    a, b = Var(np.ones(2)), Var(np.ones(3))
    loss = vsum(a * a)
    ga, gb = grad(loss, [a, b])
    assert np.all(gb == 0.0) and ga.shape == (2,)


@settings(max_examples=30, deadline=None)
@given(
    n=st.integers(min_value=1, max_value=5),
    m=st.integers(min_value=1, max_value=4),
    seed=st.integers(min_value=0, max_value=2**32 - 1),
)
def test_tape_reduction_ops_property(n, m, seed):
    rng = np.random.default_rng(seed)
    x0 = rng.normal(size=(n, m))
    x = Var(x0)
    loss = vmean(x.tanh() * x, axis=None) + vsum(x, axis=0)[m - 1]
    (g,) = grad(loss, [x])

    def f(flat):
        a = flat.reshape(n, m)
        return (np.tanh(a) * a).mean() + a.sum(axis=0)[m - 1]

    assert_close(g.ravel(), numeric_grad(f, x0.ravel()), rel=1e-6, abs_=1e-8)


# ---------------------------------------------------------- initialization


def test_glorot_bound_first_layer():
    theta = glorot_init((2, 32, 32, 32, 1), seed=11)
    net = DenseNetwork((2, 32, 32, 32, 1), theta)
    w0, b0 = net.layer_views()[0]
    assert np.all(np.abs(w0) < np.sqrt(6.0 / 34.0))
    assert np.all(b0 == 0.0)


def test_glorot_deterministic():
    assert np.array_equal(glorot_init((3, 5, 1), 7), glorot_init((3, 5, 1), 7))
    assert not np.array_equal(
        glorot_init((3, 5, 1), 7), glorot_init((3, 5, 1), 8)
    )


def test_glorot_variance_matches_uniform_law():
    # Uniform(-b, b) variance is b^2/3 = 2/(fan_in+fan_out).
    widths = (2, 32, 1)
    samples = []
    for seed in range(100):
        net = DenseNetwork.init(widths, seed)
        samples.append(net.layer_views()[0][0].ravel())
    var = np.concatenate(samples).var()
    expected = 2.0 / (2 + 32)
    assert abs(var - expected) / expected < 0.10


def test_param_count():
    assert param_count((2, 32, 32, 32, 1)) == 2 * 32 + 32 + 32 * 32 + 32 + 32 * 32 + 32 + 32 + 1


# ----------------------------------------------------------------- forward


def test_forward_zero_params_zero_output():
    net = DenseNetwork((3, 4, 2), np.zeros(param_count((3, 4, 2))))
    assert np.all(forward(net, np.ones(3)) == 0.0)


def test_forward_single_affine_layer_exact():
    net = DenseNetwork.init((3, 2), seed=0)
    w, b = net.layer_views()[0]
    x = np.array([0.3, -1.2, 2.0])
    assert_close(forward(net, x), x @ w + b, rel=1e-14)


def test_forward_matches_bundle_value_bitwise():
    net = DenseNetwork.init((2, 8, 8, 1), seed=4)
    x = np.random.default_rng(5).normal(size=(6, 2))
    u, _, _ = derivatives_batch(net, x)
    assert np.array_equal(forward(net, x), u)


def test_forward_input_width_mismatch():
    net = DenseNetwork.init((3, 2), seed=0)
    with pytest.raises(ValueError):
        forward(net, np.ones(4))


# ----------------------------------------------------- input derivatives


def test_one_layer_tanh_derivatives_at_zero():
    # One hidden tanh unit, output = tanh(w x): at x=0 slope w, curvature 0.
    widths = (1, 1, 1)
    theta = np.zeros(param_count(widths))
    net = DenseNetwork(widths, theta)
    views = net.layer_views()
    views[0][0][0, 0] = 0.7  # hidden weight
    views[1][0][0, 0] = 1.0  # output weight
    b = forward_with_derivatives(net, np.zeros(1))
    assert_close(b.input_jacobian[0, 0], 0.7, rel=1e-14)
    assert_close(b.input_hessian_diag[0, 0], 0.0, rel=1e-14)


def test_linear_net_hessian_exactly_zero():
    net = DenseNetwork.init((4, 3), seed=9)
    b = forward_with_derivatives(net, np.ones(4))
    assert np.all(b.input_hessian_diag == 0.0)


def test_random_net_derivatives_match_central_differences():
    rng = np.random.default_rng(12)
    net = DenseNetwork.init((2, 8, 1), seed=21)
    for _ in range(100):
        x = rng.normal(size=2)
        b = forward_with_derivatives(net, x)
        for i in range(2):
            h = 1e-4 * (1.0 + abs(x[i]))
            e = np.zeros(2)
            e[i] = h
            fp = forward(net, x + e)[0]
            fm = forward(net, x - e)[0]
            f0 = forward(net, x)[0]
            j_fd = (fp - fm) / (2 * h)
            h_fd = (fp - 2 * f0 + fm) / (h * h)
            assert_close(b.input_jacobian[0, i], j_fd, rel=1e-5, abs_=1e-7)
            assert_close(b.input_hessian_diag[0, i], h_fd, rel=1e-4, abs_=1e-5)


def test_bundle_orientation_d_out_by_d_in():
    net = DenseNetwork.init((3, 6, 2), seed=2)
    b = forward_with_derivatives(net, np.zeros(3))
    assert b.value.shape == (2,)
    assert b.input_jacobian.shape == (2, 3)
    assert b.input_hessian_diag.shape == (2, 3)


# ------------------------------------------------------------- grad_params


def test_grad_params_constant_loss_zero():
    net = DenseNetwork.init((2, 4, 1), seed=1)

    def closure(params):
        # touches the parameters but the value does not depend on them
        return vsum(params[0][0] * 0.0)

    g = grad_params(net, closure)
    assert np.all(g == 0.0)


def test_grad_params_sum_of_squares():
    net = DenseNetwork.init((2, 4, 1), seed=1)

    def closure(params):
        total = None
        for w, b in params:
            term = vsum(w * w) + vsum(b * b)
            total = term if total is None else total + term
        return total

    g = grad_params(net, closure)
    assert_close(g, 2.0 * net.theta, rel=1e-14)


def test_grad_params_matches_fd_on_random_nets():
    rng = np.random.default_rng(31)
    for trial in range(5):
        widths = (2, rng.integers(2, 5), 1)
        net = DenseNetwork.init(widths, seed=int(rng.integers(1e6)))
        x = rng.normal(size=(4, 2))
        y = rng.normal(size=4)

        def closure(params):
            u, jac, hess = derivatives_batch(net, x, params)
            res = u[:, 0] - y + 0.3 * jac[:, 0, 0] + 0.1 * hess[:, 1, 0]
            return vmean(res * res)

        g = grad_params(net, closure)
        g_fd = grad_params(net, closure, fd=True)
        assert_close(g, g_fd, rel=1e-4, abs_=1e-7)


def test_grad_params_rejects_plain_return():
    net = DenseNetwork.init((2, 3, 1), seed=1)
    with pytest.raises(TypeError):
        grad_params(net, lambda params: 3.0)


def test_derivative_tower_consistency():
    # Gradient of the plain forward value and of the bundle value agree.
    net = DenseNetwork.init((2, 5, 1), seed=8)
    x = np.random.default_rng(3).normal(size=(6, 2))

    def c_forward(params):
        return vmean(forward(net, x, params))

    def c_bundle(params):
        u, _, _ = derivatives_batch(net, x, params)
        return vmean(u)

    assert_close(
        grad_params(net, c_forward), grad_params(net, c_bundle), rel=1e-12
    )


# -------------------------------------------------------------------- adam


def test_adam_zero_gradient_no_motion():
    net = DenseNetwork.init((2, 3, 1), seed=2)
    st0 = AdamState.init(net.theta.size)
    st0.m[:] = 0.5
    st0.v[:] = 0.25
    theta0 = net.theta.copy()
    st1, theta1 = adam_step(st0, theta0, np.zeros_like(theta0), lr=1e-3)
    # moments decay toward zero, parameters barely move (m != 0 still nudges)
    assert np.all(st1.m < 0.5) and np.all(st1.v < 0.25)
    st2, theta2 = adam_step(
        AdamState.init(theta0.size), theta0, np.zeros_like(theta0), lr=1e-3
    )
    assert np.array_equal(theta2, theta0)


def test_adam_first_step_magnitude_is_lr():
    theta = np.zeros(4)
    g = np.array([0.3, -2.0, 5.0, 1e-6])
    _, theta1 = adam_step(AdamState.init(4), theta, g, lr=0.01)
    # bias correction makes the first update ~ lr * sign(g)
    assert_close(np.abs(theta1[:3]), [0.01, 0.01, 0.01], rel=1e-4)
    assert np.all(np.sign(theta1[:3]) == -np.sign(g[:3]))


def test_adam_quadratic_bowl_converges():
    rng = np.random.default_rng(17)
    target = rng.normal(size=10) * 0.5
    theta = np.zeros(10)
    state = AdamState.init(10)
    for _ in range(1000):
        g = 2.0 * (theta - target)
        state, theta = adam_step(state, theta, g, lr=0.01)
    assert np.linalg.norm(theta - target) < 1e-3


def test_adam_rejects_non_finite_gradient():
    with pytest.raises(TrainingError):
        adam_step(AdamState.init(3), np.zeros(3), np.array([1.0, np.nan, 0.0]), 0.01)


# ------------------------------------------------------------- checkpoints


def test_checkpoint_round_trip(tmp_path):
    net = DenseNetwork.init((3, 7, 2), seed=13)
    path = tmp_path / "net.json"
    save_checkpoint(net, str(path), seed=13, extra={"role": "test"})
    loaded, meta = load_checkpoint(str(path))
    assert loaded.widths == net.widths
    assert np.array_equal(loaded.theta, net.theta)
    assert meta["seed"] == 13
    assert meta["extra"] == {"role": "test"}


def test_scaled_zero_params_zero_map():
    net = DenseNetwork.init((3, 5, 2), seed=3)
    net.theta = net.theta * 0.0
    x = np.random.default_rng(0).normal(size=(4, 3))
    assert np.all(forward(net, x) == 0.0)
