import math

import numpy as np
import pytest

from tslif.autodiff import (
    Adam,
    Node,
    Sgd,
    SurrogateSpec,
    add,
    backward,
    constant,
    leaf,
    logit,
    matmul,
    mse,
    mul,
    node_mean,
    node_sum,
    relu,
    scale,
    sigmoid,
    softplus,
    softplus_inverse,
    spike,
    sub,
    tanh,
)
from tslif.errors import ContractError


def unroll_linear_dual(alpha1, alpha2, beta1, beta2, currents):
    """Spike-free dual-compartment unroll over parameter nodes.

    Returns the lists of dendritic and somatic potential nodes.
    """
    n = currents.shape[1]
    one = constant(1.0)
    v_d = constant(np.zeros(n))
    v_s = constant(np.zeros(n))
    vds, vss = [], []
    for t in range(currents.shape[0]):
        c = constant(currents[t])
        v_d = add(add(mul(alpha1, v_d), mul(beta1, v_s)), mul(sub(one, alpha1), c))
        v_s = add(add(mul(alpha2, v_s), mul(beta2, v_d)), mul(sub(one, alpha2), c))
        vds.append(v_d)
        vss.append(v_s)
    return vds, vss


def quadratic_trace_loss(param_values, currents):
    """Scalar loss used by the finite-difference checks."""
    a1, a2, b1, b2 = (leaf(v) for v in param_values)
    vds, vss = unroll_linear_dual(a1, a2, b1, b2, currents)
    loss = constant(0.0)
    for v_d, v_s in zip(vds, vss):
        loss = add(loss, add(node_sum(mul(v_d, v_d)), node_sum(mul(v_s, v_s))))
    return loss, (a1, a2, b1, b2)


class TestPrimitives:
    def test_mse_of_identical_inputs(self):
        x = leaf(np.array([1.0, -2.0, 3.0]))
        loss = mse(x, x.value.copy())
        assert loss.value == 0.0
        backward(loss)
        np.testing.assert_array_equal(x.grad, np.zeros(3))

    def test_matmul_shapes_and_gradient_shapes(self):
        a = leaf(np.arange(6, dtype=float).reshape(2, 3))
        b = leaf(np.arange(3, dtype=float).reshape(3, 1))
        out = matmul(a, b)
        assert out.shape == (2, 1)
        backward(node_sum(out))
        assert a.grad.shape == (2, 3)
        assert b.grad.shape == (3, 1)

    def test_matmul_shape_contract(self):
        with pytest.raises(ContractError, match="matmul"):
            matmul(leaf(np.zeros((2, 3))), leaf(np.zeros((4, 1))))

    def test_sigmoid_derivative_at_zero(self):
        x = leaf(0.0)
        backward(node_sum(sigmoid(x)))
        assert x.grad == pytest.approx(0.25, rel=1e-12)

    def test_tanh_derivative(self):
        x = leaf(0.3)
        backward(node_sum(tanh(x)))
        assert x.grad == pytest.approx(1.0 - math.tanh(0.3) ** 2, rel=1e-12)

    def test_relu(self):
        x = leaf(np.array([-1.0, 0.0, 2.0]))
        backward(node_sum(relu(x)))
        np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])

    def test_softplus_value_and_derivative(self):
        x = leaf(np.array([-30.0, -1.0, 0.0, 1.0, 30.0]))
        out = softplus(x)
        np.testing.assert_allclose(out.value, np.log1p(np.exp(np.minimum(x.value, 30))) +
                                   np.where(x.value > 30, x.value, 0.0), rtol=1e-12)
        backward(node_sum(out))
        np.testing.assert_allclose(x.grad, 1 / (1 + np.exp(-x.value)), rtol=1e-12)

    def test_broadcast_add_bias(self):
        m = leaf(np.ones((4, 3)))
        bias = leaf(np.array([1.0, 2.0, 3.0]))
        backward(node_sum(add(m, bias)))
        np.testing.assert_array_equal(bias.grad, [4.0, 4.0, 4.0])
        np.testing.assert_array_equal(m.grad, np.ones((4, 3)))

    def test_incompatible_elementwise_shapes(self):
        with pytest.raises(ContractError, match="add"):
            add(leaf(np.zeros(3)), leaf(np.zeros(4)))

    def test_scale_and_sub(self):
        x = leaf(np.array([1.0, 2.0]))
        backward(node_sum(scale(sub(x, 0.5), 3.0)))
        np.testing.assert_array_equal(x.grad, [3.0, 3.0])


class TestSpike:
    def test_forward_heaviside_with_h0_equal_1(self):
        out = spike(constant(np.array([0.5, -0.5, 0.0])))
        np.testing.assert_array_equal(out.value, [1.0, 0.0, 1.0])

    def test_triangular_apex(self):
        spec = SurrogateSpec(kind="triangular", width=1.0)
        x = leaf(0.0)
        backward(node_sum(spike(x, spec)))
        assert x.grad == pytest.approx(1.0)

    def test_sigmoid_derivative_apex_width_quarter(self):
        spec = SurrogateSpec(kind="sigmoid-derivative", width=0.25)
        x = leaf(0.0)
        backward(node_sum(spike(x, spec)))
        assert x.grad == pytest.approx(1.0)  # k/4 with k = 4

    def test_surrogate_consistency_sampled(self):
        rng = np.random.default_rng(0)
        xs = rng.uniform(-3, 3, size=1000)
        for spec in (SurrogateSpec("sigmoid-derivative", 0.25), SurrogateSpec("triangular", 0.7)):
            x = leaf(xs)
            backward(node_sum(spike(x, spec)))
            if spec.kind == "sigmoid-derivative":
                k = 1.0 / spec.width
                s = 1 / (1 + np.exp(-k * xs))
                expected = k * s * (1 - s)
            else:
                expected = np.maximum(0.0, 1 - np.abs(xs) / spec.width) / spec.width
            np.testing.assert_allclose(x.grad, expected, atol=1e-12)

    def test_spec_validation(self):
        with pytest.raises(ContractError):
            SurrogateSpec(kind="boxcar", width=1.0)
        with pytest.raises(ContractError):
            SurrogateSpec(width=0.0)


class TestBackward:
    def test_sum_of_scaled_vector(self):
        x = leaf(np.zeros(4))
        backward(node_sum(scale(x, 3.0)))
        np.testing.assert_array_equal(x.grad, [3.0, 3.0, 3.0, 3.0])

    def test_diamond_graph_accumulates_both_paths(self):
        x = leaf(2.0)
        out = add(mul(x, x), x)  # d/dx = 2x + 1 = 5
        backward(node_sum(out))
        assert x.grad == pytest.approx(5.0)

    def test_non_scalar_loss_rejected(self):
        x = leaf(np.zeros(3))
        with pytest.raises(ContractError, match="scalar"):
            backward(add(x, 1.0))

    def test_unused_leaf_gets_zero_gradient(self):
        x, y = leaf(np.ones(2)), leaf(np.ones(3))
        grads = backward(node_sum(x), params=[x, y])
        np.testing.assert_array_equal(grads[y], np.zeros(3))
        np.testing.assert_array_equal(grads[x], np.ones(2))

    def test_repeated_backward_is_idempotent(self):
        x = leaf(np.array([1.0, 2.0]))
        loss = node_mean(mul(x, x))
        backward(loss)
        first = x.grad.copy()
        backward(loss)
        np.testing.assert_array_equal(x.grad, first)

    def test_two_step_unroll_gradient_wrt_alpha2(self):
        rng = np.random.default_rng(4)
        currents = rng.normal(size=(2, 1))
        values = [0.9, 0.2, 0.1, -0.5]

        def loss_a2(a2_value):
            a1, a2, b1, b2 = (leaf(v) for v in (values[0], a2_value, values[2], values[3]))
            _, vss = unroll_linear_dual(a1, a2, b1, b2, currents)
            return node_sum(vss[-1]), a2

        loss, a2 = loss_a2(values[1])
        backward(loss)
        h = 1e-6
        up, _ = loss_a2(values[1] + h)
        dn, _ = loss_a2(values[1] - h)
        fd = (up.value - dn.value) / (2 * h)
        assert a2.grad == pytest.approx(fd, rel=1e-5)


class TestFiniteDifferenceProperty:
    def test_random_spike_free_unrolls(self):
        rng = np.random.default_rng(123)
        for _ in range(100):
            steps = int(rng.integers(1, 11))
            n = int(rng.integers(1, 5))
            currents = rng.normal(size=(steps, n))
            values = [rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95),
                      rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8)]
            loss, params = quadratic_trace_loss(values, currents)
            grads = backward(loss, params=params)
            for i, p in enumerate(params):
                h = 1e-6
                bumped = list(values)
                bumped[i] = values[i] + h
                up, _ = quadratic_trace_loss(bumped, currents)
                bumped[i] = values[i] - h
                dn, _ = quadratic_trace_loss(bumped, currents)
                fd = (up.value - dn.value) / (2 * h)
                got = float(grads[p])
                assert abs(got - fd) <= max(1e-5 * abs(fd), 1e-8), (
                    f"param {i}: autodiff {got} vs finite difference {fd}"
                )

    def test_gradient_shapes_match_value_shapes(self):
        rng = np.random.default_rng(5)
        w = leaf(rng.normal(size=(3, 2)))
        b = leaf(rng.normal(size=2))
        x = constant(rng.normal(size=(5, 3)))
        out = tanh(add(matmul(x, w), b))
        loss = mse(out, rng.normal(size=(5, 2)))
        backward(loss)
        for node in (w, b, out, loss):
            assert node.grad.shape == node.value.shape


class TestOptimizers:
    def test_sgd_descends_quadratic(self):
        x = leaf(np.array([5.0, -3.0]))
        opt = Sgd([x], lr=0.1)
        for _ in range(200):
            backward(node_sum(mul(x, x)))
            opt.step()
        np.testing.assert_allclose(x.value, [0.0, 0.0], atol=1e-8)

    def test_adam_descends_quadratic(self):
        x = leaf(np.array([5.0, -3.0]))
        opt = Adam([x], lr=0.05)
        for _ in range(2000):
            backward(node_sum(mul(x, x)))
            opt.step()
        np.testing.assert_allclose(x.value, [0.0, 0.0], atol=1e-4)

    def test_adam_defaults(self):
        opt = Adam([leaf(0.0)])
        assert (opt.lr, opt.beta1, opt.beta2, opt.eps) == (1e-3, 0.9, 0.999, 1e-8)


class TestReparameterizationHelpers:
    def test_logit_round_trip(self):
        for p in (0.1, 0.5, 0.9, 0.99):
            assert 1 / (1 + math.exp(-logit(p))) == pytest.approx(p, rel=1e-12)

    def test_softplus_inverse_round_trip(self):
        for y in (0.01, 0.1, 1.0, 10.0):
            assert math.log1p(math.exp(softplus_inverse(y))) == pytest.approx(y, rel=1e-9)

    def test_domains(self):
        with pytest.raises(ContractError):
            logit(1.0)
        with pytest.raises(ContractError):
            softplus_inverse(0.0)


class TestNodeBasics:
    def test_repr_and_shape(self):
        n = leaf(np.zeros((2, 2)), name="w")
        assert "w" in repr(n)
        assert n.shape == (2, 2)

    def test_constant_is_not_learnable(self):
        c = constant(1.0)
        assert not c.requires_grad
        assert isinstance(c, Node)
