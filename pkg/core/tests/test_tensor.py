import gc
import weakref
from unittest import skipIf

import numpy as np
from django.test import SimpleTestCase, override_settings

from core.exceptions import ShapeError
from core.tensor import (
    Tensor, backward, concat, elementwise, gradcheck, matmul, no_grad, precision, recording, reduce, transpose,
)

from .helpers import (
    DOUBLE_PRECISION_TOLERANCE, GRAD_TOLERANCE, SINGLE_PRECISION_FLOOR, random_inputs, torch,
)


def composite(x, y):
    """Небольшой граф, задействующий все поэлементные операции, matmul и редукции."""
    h = (x * y).sin() + (x / (y.square() + 1.0)).sigmoid()
    h = h - (x - y).relu() + (y.square() + 0.5).sqrt()
    h = matmul(h, transpose(y.cos()))
    return h.var(axes=1).mean() + elementwise('scalar-affine', h, scale=0.5, shift=1.0).mean()


def _away_from_kink(rng, shape):
    while True:
        x, y = random_inputs(rng, shape, shape)
        if np.all(np.abs(x - y) > 0.05):
            return x, y


class ElementwiseTests(SimpleTestCase):
    def test_relu(self):
        out = elementwise('relu', Tensor([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    def test_scalar_broadcast(self):
        out = Tensor([1.0, 2.0, 3.0]) * Tensor([2.0])
        np.testing.assert_array_equal(out.data, [2.0, 4.0, 6.0])

    def test_product_rule(self):
        with recording():
            a = Tensor(3.0, requires_grad=True)
            b = Tensor(5.0, requires_grad=True)
            backward(a * b)
        self.assertAlmostEqual(float(a.grad), 5.0)
        self.assertAlmostEqual(float(b.grad), 3.0)

    def test_division_records_quotient_rule(self):
        with recording():
            a = Tensor(2.0, requires_grad=True)
            b = Tensor(4.0, requires_grad=True)
            backward(a / b)
        self.assertAlmostEqual(float(a.grad), 0.25)
        self.assertAlmostEqual(float(b.grad), -0.125)

    def test_division_by_zero_propagates_non_finite(self):
        out = Tensor([1.0, 0.0]) / Tensor([0.0, 0.0])
        self.assertTrue(np.isinf(out.data[0]))
        self.assertTrue(np.isnan(out.data[1]))

    def test_non_broadcastable_shapes_are_reported(self):
        with self.assertRaises(ShapeError) as ctx:
            Tensor(np.ones((2, 3))) + Tensor(np.ones(4))
        self.assertIn('(2, 3)', str(ctx.exception))
        self.assertIn('(4,)', str(ctx.exception))

    def test_unknown_kind_rejected(self):
        with self.assertRaises(ValueError):
            elementwise('tanh', Tensor([1.0]))

    def test_scalar_affine(self):
        out = elementwise('scalar-affine', Tensor([1.0, -2.0]), scale=3.0, shift=0.5)
        np.testing.assert_allclose(out.data, [3.5, -5.5])

    def test_broadcast_gradient_has_input_shape(self):
        with recording():
            a = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
            b = Tensor([1.0, 2.0, 3.0], requires_grad=True)
            backward((a * b).sum())
        self.assertEqual(b.grad.shape, (3,))
        np.testing.assert_allclose(b.grad, [3.0, 5.0, 7.0])
        np.testing.assert_allclose(a.grad, np.tile([1.0, 2.0, 3.0], (2, 1)))


class MatmulTests(SimpleTestCase):
    def test_identity(self):
        m = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(matmul(Tensor(np.eye(2)), Tensor(m)).data, m)

    def test_dot_product(self):
        out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        np.testing.assert_array_equal(out.data, [[11.0]])

    def test_inner_dimension_mismatch(self):
        with self.assertRaises(ShapeError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_gradient_of_sum(self):
        rng = np.random.default_rng(0)
        a_data, b_data = random_inputs(rng, (3, 4), (4, 2))
        with recording():
            a = Tensor(a_data, requires_grad=True)
            b = Tensor(b_data, requires_grad=True)
            backward(matmul(a, b).sum())
        expected = np.tile(b_data.sum(axis=1), (3, 1))
        np.testing.assert_allclose(a.grad, expected, rtol=1e-5)
        self.assertLess(gradcheck(lambda x, y: matmul(x, y).sum(), [a_data, b_data], step=1e-4,
                                  atol=SINGLE_PRECISION_FLOOR), GRAD_TOLERANCE)


class ReduceTests(SimpleTestCase):
    def test_mean(self):
        self.assertAlmostEqual(reduce('mean', Tensor([1.0, 2.0, 3.0])).item(), 2.0)

    def test_population_variance(self):
        self.assertAlmostEqual(reduce('variance', Tensor([1.0, 2.0, 3.0])).item(), 2.0 / 3.0, places=6)

    def test_sum_over_axis(self):
        out = reduce('sum', Tensor([[1.0, 2.0], [3.0, 4.0]]), axes=0)
        np.testing.assert_array_equal(out.data, [4.0, 6.0])

    def test_keepdims(self):
        out = Tensor(np.ones((2, 3, 4))).mean(axes=(1, 2), keepdims=True)
        self.assertEqual(out.shape, (2, 1, 1))

    def test_empty_reduction_rejected(self):
        with self.assertRaises(ShapeError):
            Tensor(np.zeros((0, 3))).mean(axes=0)

    def test_variance_gradient(self):
        with recording():
            x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
            backward(x.var())
        # 2 (x - μ) / n
        np.testing.assert_allclose(x.grad, [-2.0 / 3.0, 0.0, 2.0 / 3.0], atol=1e-6)

    @override_settings(CAM_ACCUMULATE_DOUBLE=True)
    def test_double_accumulation_keeps_storage_dtype(self):
        out = Tensor(np.linspace(0.0, 1.0, 1000)).var()
        self.assertEqual(out.data.dtype, np.float32)
        self.assertAlmostEqual(out.item(), np.linspace(0.0, 1.0, 1000).var(), places=5)


class BackwardTests(SimpleTestCase):
    def test_square(self):
        with recording():
            x = Tensor(3.0, requires_grad=True)
            backward(x.square())
        self.assertAlmostEqual(float(x.grad), 6.0)

    def test_sin_at_zero(self):
        with recording():
            x = Tensor(0.0, requires_grad=True)
            backward(x.sin())
        self.assertAlmostEqual(float(x.grad), 1.0)

    def test_fan_out_accumulates(self):
        with recording():
            x = Tensor(2.0, requires_grad=True)
            backward(x * x + x)
        self.assertAlmostEqual(float(x.grad), 5.0)

    def test_root_gradient_is_one(self):
        with recording():
            x = Tensor(4.0, requires_grad=True)
            grads = backward(elementwise('scalar-affine', x, scale=1.0))
        self.assertAlmostEqual(float(grads[x]), 1.0)

    def test_non_scalar_root_rejected(self):
        with recording():
            x = Tensor([1.0, 2.0], requires_grad=True)
            with self.assertRaises(ShapeError):
                backward(x * 2.0)

    def test_untracked_root_rejected(self):
        with self.assertRaises(ValueError):
            backward(Tensor(1.0))

    def test_no_grad_records_nothing(self):
        with recording() as tape, no_grad():
            x = Tensor([1.0, 2.0], requires_grad=True)
            (x * x).sum()
            self.assertEqual(len(tape), 0)

    def test_concat_splits_gradient(self):
        with recording():
            a = Tensor([1.0, 2.0], requires_grad=True)
            b = Tensor([3.0], requires_grad=True)
            backward((concat([a, b]) * Tensor([1.0, 2.0, 3.0])).sum())
        np.testing.assert_allclose(a.grad, [1.0, 2.0])
        np.testing.assert_allclose(b.grad, [3.0])

    def test_linearity(self):
        rng = np.random.default_rng(1)
        data = rng.uniform(-2.0, 2.0, size=5)
        alpha, beta = 0.7, -1.3

        def grad_of(fn):
            with precision('float64'), recording():
                x = Tensor(data, requires_grad=True)
                backward(fn(x))
                return x.grad

        f = lambda x: x.sin().sum()
        g = lambda x: (x * x).mean()
        combined = grad_of(lambda x: f(x) * alpha + g(x) * beta)
        np.testing.assert_allclose(combined, alpha * grad_of(f) + beta * grad_of(g), rtol=1e-12, atol=1e-14)


class TapeLifetimeTests(SimpleTestCase):
    def test_block_exit_releases_history(self):
        with recording() as tape:
            x = Tensor([1.0, 2.0], requires_grad=True)
            hidden = (x * x).relu()
            backward(hidden.sum())
            self.assertGreater(len(tape), 0)
        self.assertEqual(len(tape), 0)
        self.assertTrue(hidden.is_leaf)
        np.testing.assert_allclose(x.grad, [2.0, 4.0])

    def test_activations_freed_without_cycle_collector(self):
        gc.disable()
        self.addCleanup(gc.enable)
        weight = Tensor(np.ones((64, 64)), requires_grad=True)
        refs = []
        for _ in range(5):
            with recording() as tape:
                hidden = (weight * 2.0).relu().sigmoid()
                backward(hidden.sum())
            refs.append((weakref.ref(tape), weakref.ref(hidden)))
            del tape, hidden
        for tape_ref, hidden_ref in refs:
            self.assertIsNone(tape_ref())
            self.assertIsNone(hidden_ref())
        self.assertEqual(weight.grad.shape, (64, 64))

    def test_leaf_reused_across_tapes(self):
        x = Tensor([3.0], requires_grad=True)
        for expected in (6.0, 6.0):
            with recording():
                backward((x * x).sum())
            np.testing.assert_allclose(x.grad, [expected])


class GradcheckTests(SimpleTestCase):
    def test_randomized_graphs_single_precision(self):
        rng = np.random.default_rng(2024)
        for _ in range(100):
            x, y = _away_from_kink(rng, (2, 3))
            error = gradcheck(composite, [x, y], step=1e-3, atol=SINGLE_PRECISION_FLOOR)
            self.assertLess(error, GRAD_TOLERANCE)

    def test_randomized_graphs_double_precision(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            x, y = _away_from_kink(rng, (2, 3))
            with precision('float64'):
                error = gradcheck(composite, [x, y], step=1e-5)
            self.assertLess(error, DOUBLE_PRECISION_TOLERANCE)

    def test_each_unary_op(self):
        rng = np.random.default_rng(3)
        for kind in ('sin', 'cos', 'sigmoid', 'square'):
            x = rng.uniform(-2.0, 2.0, size=4)
            with precision('float64'):
                error = gradcheck(lambda t: (elementwise(kind, t) * Tensor([1.0, -2.0, 0.5, 3.0])).sum(), [x],
                                  step=1e-5)
            self.assertLess(error, DOUBLE_PRECISION_TOLERANCE, kind)
        positive = rng.uniform(0.5, 2.0, size=4)
        with precision('float64'):
            self.assertLess(gradcheck(lambda t: t.sqrt().sum(), [positive], step=1e-5), DOUBLE_PRECISION_TOLERANCE)


@skipIf(torch is None, "torch is not installed")
class TorchAutogradOracleTests(SimpleTestCase):
    def test_composite_matches_torch(self):
        rng = np.random.default_rng(11)
        x_data, y_data = _away_from_kink(rng, (2, 3))
        with precision('float64'), recording():
            x = Tensor(x_data, requires_grad=True)
            y = Tensor(y_data, requires_grad=True)
            backward(composite(x, y))

        tx = torch.tensor(x_data, dtype=torch.float64, requires_grad=True)
        ty = torch.tensor(y_data, dtype=torch.float64, requires_grad=True)
        h = torch.sin(tx * ty) + torch.sigmoid(tx / (ty ** 2 + 1.0))
        h = h - torch.relu(tx - ty) + torch.sqrt(ty ** 2 + 0.5)
        h = h @ torch.cos(ty).T
        out = h.var(dim=1, correction=0).mean() + (0.5 * h + 1.0).mean()
        out.backward()
        np.testing.assert_allclose(x.grad, tx.grad.numpy(), rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(y.grad, ty.grad.numpy(), rtol=1e-10, atol=1e-12)
