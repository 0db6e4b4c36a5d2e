"""Tests for the define-by-run autodiff engine."""

import numpy as np
import pytest

from pdpm_lab.autodiff import (Tensor, absolute, backward, concat, finite_diff_check, forward,
                               leaky_relu, matmul, no_grad, norm, reduce_mean, reduce_sum, relu,
                               sigmoid, softplus, sqrt, square, tanh)
from pdpm_lab.errors import ContractError, NumericError, ShapeError


def _away_from_kinks(rng, shape, margin=1e-3):
    x = rng.uniform(-2.0, 2.0, size=shape)
    x[np.abs(x) < margin] += 2 * margin
    return x


def _nonzero(rng, shape):
    size = int(np.prod(shape))
    values = rng.uniform(0.5, 2.0, size=size) * rng.choice([-1.0, 1.0], size=size)
    return values.reshape(shape)


class TestForward:
    def test_elementwise_add(self):
        out = Tensor([1.0, 2.0]) + Tensor([3.0, 4.0])
        np.testing.assert_array_equal(forward(out), [4.0, 6.0])

    def test_identity_matmul(self, rng):
        m = rng.normal(size=(3, 5))
        np.testing.assert_array_equal(forward(matmul(np.eye(3), m)), m)

    def test_sigmoid_at_zero(self):
        assert sigmoid(Tensor(0.0)).item() == 0.5

    def test_forward_is_deterministic(self, rng):
        x = rng.normal(size=(4, 3))
        w = rng.normal(size=(3, 2))
        a = tanh(Tensor(x) @ Tensor(w)).sum()
        b = tanh(Tensor(x) @ Tensor(w)).sum()
        assert a.item() == b.item()

    def test_shape_mismatch_names_op_and_shapes(self):
        with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
            Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))

    def test_broadcast_mismatch(self):
        with pytest.raises(ShapeError):
            Tensor(np.ones((2, 3))) + Tensor(np.ones((4,)))

    def test_overflow_is_an_error(self):
        with pytest.raises(NumericError):
            Tensor([1e308]) * 10.0

    def test_tiny_denominator_is_an_error(self):
        with pytest.raises(NumericError):
            Tensor([1.0]) / Tensor([1e-13])


class TestBackward:
    def test_quadratic(self):
        w = Tensor([1.0, -2.0, 3.0], requires_grad=True)
        (g,) = backward((w * w).sum(), [w])
        np.testing.assert_array_equal(g.data, [2.0, -4.0, 6.0])

    def test_sigmoid_slope_at_zero(self):
        x = Tensor(0.0, requires_grad=True)
        (g,) = backward(sigmoid(x), [x])
        assert g.item() == 0.25

    def test_non_scalar_root_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            backward(x * 2.0, [x])

    def test_shared_subexpression_accumulates(self, rng):
        x = Tensor(rng.normal(size=(3, 2)), requires_grad=True)

        def f(t):
            return tanh(t * t).sum()

        (single,) = backward(f(x), [x])
        (double,) = backward(f(x) + f(x), [x])
        np.testing.assert_allclose(double.data, 2.0 * single.data, rtol=0, atol=1e-15)

    def test_unreachable_leaf_gets_zeros(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        y = Tensor([[3.0]], requires_grad=True)
        gx, gy = backward((x * 3.0).sum(), [x, y])
        np.testing.assert_array_equal(gx.data, [3.0, 3.0])
        np.testing.assert_array_equal(gy.data, [[0.0]])

    def test_broadcast_gradient_sums(self):
        x = Tensor(np.ones((4, 3)), requires_grad=True)
        b = Tensor(np.zeros((1, 3)), requires_grad=True)
        _, gb = backward((x + b).sum(), [x, b])
        np.testing.assert_array_equal(gb.data, [[4.0, 4.0, 4.0]])

    def test_relu_kink_takes_negative_side(self):
        x = Tensor([0.0], requires_grad=True)
        (g,) = backward(relu(x).sum(), [x])
        assert g.data[0] == 0.0
        (g,) = backward(leaky_relu(x).sum(), [x])
        assert g.data[0] == pytest.approx(0.2)

    def test_no_grad_records_nothing(self):
        x = Tensor([1.0], requires_grad=True)
        with no_grad():
            y = x * 2.0
        assert not y.requires_grad
        assert y.parents == ()

    def test_second_order(self, rng):
        value = rng.normal(size=(5,))
        x = Tensor(value, requires_grad=True)
        (g,) = backward((x * x * x).sum(), [x], create_graph=True)
        (gg,) = backward(g.sum(), [x])
        np.testing.assert_allclose(gg.data, 6.0 * value, rtol=1e-12)


UNARY_OPS = {
    "tanh": lambda t: tanh(t).sum(),
    "sigmoid": lambda t: sigmoid(t).sum(),
    "softplus": lambda t: softplus(t).sum(),
    "relu": lambda t: relu(t).sum(),
    "leaky_relu": lambda t: leaky_relu(t).sum(),
    "square": lambda t: square(t).sum(),
    "sqrt": lambda t: sqrt(square(t) + 1.0).sum(),
    "abs": lambda t: absolute(t).sum(),
    "div": lambda t: (t / (square(t) + 1.5)).sum(),
    "mean_axis": lambda t: (reduce_mean(t, axis=1) * Tensor([1.0, -2.0, 0.5])).sum(),
    "sum_keepdims": lambda t: square(reduce_sum(t, axis=0, keepdims=True)).sum(),
    "norm": lambda t: norm(t, axis=1).sum(),
    "transpose_matmul": lambda t: (t @ t.T).sum(),
    "slice": lambda t: square(t[0:3:2]).sum(),
    "concat": lambda t: square(concat([t, t * 2.0], axis=1)).sum(),
    "reshape": lambda t: (t.reshape(2, 6) @ Tensor(np.arange(6.0).reshape(6, 1))).sum(),
}


BINARY_OPS = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / b,
}

OPERAND_SHAPES = {"full": (3, 4), "row": (1, 4), "column": (3, 1), "scalar": ()}


class TestGradientSuite:
    @pytest.mark.parametrize("name", sorted(UNARY_OPS))
    def test_op_matches_finite_differences(self, name):
        rng = np.random.default_rng(sorted(UNARY_OPS).index(name))
        for _ in range(20):
            err = finite_diff_check(UNARY_OPS[name], _away_from_kinks(rng, (3, 4)))
            assert err < 1e-5, name

    @pytest.mark.parametrize("shape", sorted(OPERAND_SHAPES))
    @pytest.mark.parametrize("op", sorted(BINARY_OPS))
    def test_broadcast_binary_op(self, op, shape, rng):
        fn = BINARY_OPS[op]
        weights = Tensor(rng.normal(size=(3, 4)))
        for _ in range(20):
            left, right = _nonzero(rng, (3, 4)), _nonzero(rng, OPERAND_SHAPES[shape])
            assert finite_diff_check(lambda t: (fn(t, Tensor(right)) * weights).sum(), left) < 1e-5
            assert finite_diff_check(lambda t: (fn(Tensor(left), t) * weights).sum(), right) < 1e-5
            if shape != "full":
                assert finite_diff_check(lambda t: (fn(t, Tensor(left)) * weights).sum(), right) < 1e-5

    @pytest.mark.parametrize("op", ["radd", "rsub", "rmul", "rdiv"])
    def test_python_scalar_on_the_left(self, op, rng):
        builds = {
            "radd": lambda t: (2.5 + t).sum(),
            "rsub": lambda t: square(2.5 - t).sum(),
            "rmul": lambda t: square(2.5 * t).sum(),
            "rdiv": lambda t: (2.5 / t).sum(),
        }
        for _ in range(20):
            assert finite_diff_check(builds[op], _nonzero(rng, (3, 4))) < 1e-5

    def test_matmul_right_operand(self, rng):
        weights = Tensor(rng.normal(size=(3, 2)))
        for _ in range(20):
            left = Tensor(rng.normal(size=(3, 4)))
            assert finite_diff_check(lambda t: ((left @ t) * weights).sum(), rng.normal(size=(4, 2))) < 1e-5

    def test_linear_function_is_exact(self, rng):
        w = rng.normal(size=(4, 1))
        err = finite_diff_check(lambda t: (t @ Tensor(w)).sum(), rng.normal(size=(3, 4)))
        assert err < 1e-9

    def test_two_layer_mlp(self, rng):
        w2 = Tensor(rng.normal(size=(5, 1)))
        x = Tensor(rng.normal(size=(6, 3)))

        def build(w1):
            return reduce_mean(tanh(x @ w1) @ w2)

        for _ in range(20):
            assert finite_diff_check(build, rng.normal(size=(3, 5))) < 1e-5
