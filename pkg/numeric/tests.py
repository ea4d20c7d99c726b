import numpy as np
from django.test import SimpleTestCase

from . import ops
from .exceptions import ContractError, DimensionError, NonFiniteError
from .gradcheck import grad_check
from .optim import AdamState, adam_step
from .tensor import ParamStore, Tape, Tensor, backward

SEEDS = range(20)
TOL = 1e-4


def _leaf(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


def _projected(out, weights):
    """Scalar loss sum(out * weights) so that every output entry matters."""
    return ops.total(ops.mul(out, Tensor(weights)))


class GradCheckTestCase(SimpleTestCase):

    def assertGradOk(self, build, leaves):
        report = grad_check(build, leaves, tolerance=TOL)
        self.assertLessEqual(report.max_rel_err, TOL, report.per_leaf)

    def test_elementwise_ops_with_broadcasting(self):
        for seed in SEEDS:
            rng = np.random.default_rng(seed)
            a, b, c = _leaf(rng, 3, 4), _leaf(rng, 4), _leaf(rng, 3, 1)
            w = rng.normal(size=(3, 4))
            self.assertGradOk(
                lambda: _projected(ops.sub(ops.mul(ops.add(a, b), c), ops.scale(a, 0.5)), w),
                {'a': a, 'b': b, 'c': c})

    def test_matmul_and_transpose(self):
        for seed in SEEDS:
            rng = np.random.default_rng(seed)
            a, b = _leaf(rng, 3, 5), _leaf(rng, 3, 5)
            w = rng.normal(size=(3, 3))
            self.assertGradOk(lambda: _projected(ops.matmul(a, ops.transpose(b)), w),
                              {'a': a, 'b': b})

    def test_reshape_index_and_concat(self):
        for seed in SEEDS:
            rng = np.random.default_rng(seed)
            table, other = _leaf(rng, 6, 4), _leaf(rng, 2, 4)
            w = rng.normal(size=(4, 6))

            def build():
                rows = ops.index(table, [0, 3, 3, 5])
                stacked = ops.concat([rows, other], axis=0)
                return _projected(ops.reshape(stacked, (4, 6)), w)

            self.assertGradOk(build, {'table': table, 'other': other})

    def test_add_row(self):
        for seed in SEEDS:
            rng = np.random.default_rng(seed)
            h, v = _leaf(rng, 4, 3), _leaf(rng, 3)
            w = rng.normal(size=(4, 3))
            self.assertGradOk(lambda: _projected(ops.add_row(h, 3, v), w), {'h': h, 'v': v})

    def test_softmax_and_log_softmax(self):
        mask = np.tril(np.ones((4, 4), dtype=bool))
        for seed in SEEDS:
            rng = np.random.default_rng(seed)
            a = _leaf(rng, 4, 4)
            w = rng.normal(size=(4, 4))
            self.assertGradOk(lambda: _projected(ops.softmax_rows(a, mask), w), {'a': a})
            self.assertGradOk(lambda: _projected(ops.log_softmax_rows(a), w), {'a': a})

    def test_layer_norm_and_gelu(self):
        for seed in SEEDS:
            rng = np.random.default_rng(seed)
            x, gain, bias = _leaf(rng, 3, 6), _leaf(rng, 6), _leaf(rng, 6)
            w = rng.normal(size=(3, 6))
            self.assertGradOk(lambda: _projected(ops.gelu(ops.layer_norm(x, gain, bias)), w),
                              {'x': x, 'gain': gain, 'bias': bias})

    def test_cross_entropy(self):
        for seed in SEEDS:
            rng = np.random.default_rng(seed)
            logits = _leaf(rng, 5, 7)
            targets = rng.integers(7, size=5)
            self.assertGradOk(lambda: ops.cross_entropy(logits, targets), {'logits': logits})

    def test_masked_multi_head_attention(self):
        mask = np.tril(np.ones((5, 5), dtype=bool))
        for seed in SEEDS:
            rng = np.random.default_rng(seed)
            q, k, v = _leaf(rng, 5, 8), _leaf(rng, 5, 8), _leaf(rng, 5, 8)
            w = rng.normal(size=(5, 8))
            self.assertGradOk(lambda: _projected(ops.multi_head_attention(q, k, v, 2, mask)[0], w),
                              {'q': q, 'k': k, 'v': v})

    def test_shared_subexpression_accumulates(self):
        rng = np.random.default_rng(0)
        x = _leaf(rng, 3)
        y = ops.mul(x, x)
        loss = ops.total(ops.add(y, y))
        backward(loss)
        np.testing.assert_allclose(x.grad, 4 * x.data)


class TapeTestCase(SimpleTestCase):

    def test_backward_twice_is_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        loss = ops.total(ops.mul(x, x))
        backward(loss)
        with self.assertRaises(ContractError):
            backward(loss)

    def test_non_scalar_loss_is_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with self.assertRaises(ContractError):
            backward(ops.mul(x, x))

    def test_constant_graph_records_nothing(self):
        out = ops.add(Tensor([1.0]), Tensor([2.0]))
        self.assertIsNone(out.node)
        self.assertFalse(out.requires_grad)

    def test_tape_is_topologically_ordered(self):
        x = Tensor(np.ones(3), requires_grad=True)
        loss = ops.total(ops.gelu(ops.scale(x, 2.0)))
        tape = Tape.from_loss(loss)
        self.assertEqual([node.op for node, _ in tape.nodes], ['scale', 'gelu', 'sum'])

    def test_shape_errors(self):
        with self.assertRaises(DimensionError):
            ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
        with self.assertRaises(DimensionError):
            ops.add(Tensor(np.ones(3)), Tensor(np.ones(4)))
        with self.assertRaises(IndexError):
            ops.cross_entropy(Tensor(np.zeros((1, 3))), [3])

    def test_fully_masked_row_is_non_finite(self):
        with np.errstate(invalid='ignore'):
            with self.assertRaises(NonFiniteError):
                ops.softmax_rows(Tensor(np.zeros((1, 2))), np.zeros((1, 2), dtype=bool))

    def test_dropout_is_identity_outside_training(self):
        x = Tensor(np.arange(4.0))
        self.assertIs(ops.dropout(x, 0.5, np.random.default_rng(0), training=False), x)


class ParamStoreTestCase(SimpleTestCase):

    def setUp(self):
        self.store = ParamStore()
        self.store.add('large.w', np.ones((2, 2)), trainable=False)
        self.store.add('atv.w', np.ones(3))

    def test_duplicate_names_are_rejected(self):
        with self.assertRaises(ContractError):
            self.store.add('atv.w', np.zeros(3))
        with self.assertRaises(ContractError):
            ParamStore.merge(self.store, self.store.subset('atv'))

    def test_adam_leaves_frozen_entries_untouched(self):
        before = self.store['large.w'].data.copy()
        self.store['atv.w'].grad = np.ones(3)
        adam_step(self.store, AdamState(lr=0.1))
        np.testing.assert_array_equal(self.store['large.w'].data, before)
        self.assertTrue(np.all(self.store['atv.w'].data < 1.0))
        self.assertIsNone(self.store['atv.w'].grad)

    def test_adam_requires_gradients(self):
        with self.assertRaises(ContractError):
            adam_step(self.store, AdamState())

    def test_load_state_dict_checks_shapes(self):
        with self.assertRaises(ContractError):
            self.store.load_state_dict({'large.w': np.ones(4), 'atv.w': np.ones(3)})
        with self.assertRaises(ContractError):
            self.store.load_state_dict({'atv.w': np.ones(3)})

    def test_freeze_and_counts(self):
        self.assertEqual(self.store.num_parameters(), 7)
        self.assertFalse(self.store.is_frozen())
        self.store.freeze()
        self.assertTrue(self.store.is_frozen())
        self.assertEqual(self.store.trainable(), [])


class OracleTestCase(SimpleTestCase):
    """Closed-form values for the ops and the optimiser."""

    def test_softmax_is_stable_and_normalised(self):
        out = ops.softmax_rows(Tensor([[1000.0, 0.0]])).data
        self.assertTrue(np.all(np.isfinite(out)))
        np.testing.assert_allclose(out, [[1.0, 0.0]], atol=1e-300)
        rows = ops.softmax_rows(Tensor(np.random.default_rng(0).normal(size=(5, 7)) * 50)).data
        np.testing.assert_allclose(rows.sum(axis=1), np.ones(5), atol=1e-12)

    def test_layer_norm_values(self):
        gain, bias = Tensor(np.ones(4)), Tensor(np.zeros(4))
        np.testing.assert_allclose(ops.layer_norm(Tensor(np.full((1, 4), 3.0)), gain, bias).data,
                                   np.zeros((1, 4)), atol=1e-12)
        pair = ops.layer_norm(Tensor([[1.0, -1.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2))).data
        np.testing.assert_allclose(pair, [[0.999995, -0.999995]], atol=1e-6)

    def test_cross_entropy_values(self):
        self.assertAlmostEqual(ops.cross_entropy(Tensor(np.zeros((1, 4))), [2]).item(), np.log(4.0),
                               places=12)
        saturated = Tensor([[100.0, 0.0, 0.0, 0.0]])
        self.assertAlmostEqual(ops.cross_entropy(saturated, [0]).item(), 0.0, places=12)

    def test_matmul_matches_loops(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        expected = np.zeros((3, 2))
        for i in range(3):
            for j in range(2):
                for k in range(4):
                    expected[i, j] += a[i, k] * b[k, j]
        np.testing.assert_allclose(ops.matmul(Tensor(a), Tensor(b)).data, expected, atol=1e-12)

    def test_square_backward(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        backward(ops.total(ops.mul(x, x)))
        np.testing.assert_array_equal(x.grad, [2.0, 4.0])

    def test_first_adam_step(self):
        store = ParamStore()
        w = store.add('w', np.array([0.5, -1.0, 2.0]))
        grad = np.array([0.3, -2.0, 1e-3])
        w.grad = grad.copy()
        state = AdamState(lr=0.01, weight_decay=0.0)
        adam_step(store, state)
        # bias-corrected moments are g and g^2 after one step
        expected = np.array([0.5, -1.0, 2.0]) - 0.01 * grad / (np.abs(grad) + state.eps)
        np.testing.assert_allclose(w.data, expected, rtol=1e-12)
        np.testing.assert_allclose(w.data, [0.49, -0.99, 1.99], atol=1e-7)

    def test_zero_gradient_leaves_parameters(self):
        store = ParamStore()
        w = store.add('w', np.array([0.5, -1.0]))
        state = AdamState(lr=0.1, weight_decay=0.0)
        for _ in range(3):
            w.grad = np.zeros(2)
            adam_step(store, state)
        np.testing.assert_array_equal(w.data, [0.5, -1.0])

    def test_learning_rate_scales(self):
        store = ParamStore()
        plain = store.add('plain', np.zeros(2))
        scaled = store.add('scaled', np.zeros(2))
        plain.grad, scaled.grad = np.ones(2), np.ones(2)
        adam_step(store, AdamState(lr=0.01, weight_decay=0.0, lr_scales={'scaled': 100.0}))
        np.testing.assert_allclose(scaled.data, 100.0 * plain.data, rtol=1e-12)
