import numpy as np
from django.test import SimpleTestCase

from numeric.exceptions import ContractError
from numeric.tensor import Tensor
from transformer.config import ModelConfig
from transformer.model import forward, init_params
from transformer.training import TrainConfig

from .adapter import (DEFAULT_LAMBDA, EXPANSION_INIT, adapter_from_state, build_adapter, expand,
                      expansion_scale, generate_v_small, injected_vectors, rank_profile,
                      steered_forward, with_lambda, with_layers)
from .training import atv_loss, train_atv

LARGE = ModelConfig(n_layers=3, d_model=8, n_heads=2, ffn_dim=16, vocab_size=13, max_seq_len=16)
GENERATOR = ModelConfig(n_layers=1, d_model=4, n_heads=2, ffn_dim=8, vocab_size=13, max_seq_len=16)


def random_queries(n, seed=0):
    rng = np.random.default_rng(seed)
    return [[1] + list(rng.integers(4, 13, size=rng.integers(2, 8))) for _ in range(n)]


class AtvAdapterTestCase(SimpleTestCase):

    def setUp(self):
        self.large = init_params(LARGE, 0).freeze()
        self.adapter = build_adapter(GENERATOR, LARGE, seed=1, lam=0.5)

    def test_generator_has_no_head_and_namespaced_params(self):
        names = self.adapter.params.names()
        self.assertTrue(all(n.startswith('atv.') for n in names))
        self.assertIn('atv.expansion.weight', names)
        self.assertFalse(any('lm_head' in n for n in names))
        self.assertEqual(self.adapter.num_parameters(), self.adapter.params.num_parameters())

    def test_expansion_is_linear_and_bias_free(self):
        rng = np.random.default_rng(3)
        v1, v2 = rng.normal(size=4), rng.normal(size=4)
        combined = expand(self.adapter, 2.0 * v1 - 3.0 * v2).data
        separate = 2.0 * expand(self.adapter, v1).data - 3.0 * expand(self.adapter, v2).data
        np.testing.assert_allclose(combined, separate, atol=1e-12)
        np.testing.assert_array_equal(expand(self.adapter, np.zeros(4)).data, np.zeros((3, 8)))

    def test_expansion_blocks_match_rows(self):
        v = np.random.default_rng(4).normal(size=4)
        rows = expand(self.adapter, v).data
        for layer in range(3):
            np.testing.assert_allclose(rows[layer], v @ self.adapter.expansion.block(layer), atol=1e-12)

    def test_v_small_shape_is_checked(self):
        with self.assertRaises(ContractError):
            expand(self.adapter, np.zeros(5))
        with self.assertRaises(ContractError):
            generate_v_small(self.adapter, [])

    def test_null_steering_reproduces_zero_shot_logits(self):
        silent = (with_lambda(self.adapter, 0.0), with_layers(self.adapter, frozenset()))
        for query in random_queries(100):
            base = forward(self.large, query).logits.data
            for adapter in silent:
                np.testing.assert_array_equal(steered_forward(adapter, self.large, query).logits.data,
                                              base)

    def test_injected_vectors_respect_the_mask(self):
        query = random_queries(1)[0]
        masked = injected_vectors(with_layers(self.adapter, frozenset({1})), query)
        full = injected_vectors(self.adapter, query)
        np.testing.assert_array_equal(masked[[0, 2]], np.zeros((2, 8)))
        np.testing.assert_array_equal(masked[1], full[1])
        np.testing.assert_array_equal(injected_vectors(with_lambda(self.adapter, 0.0), query),
                                      np.zeros((3, 8)))

    def test_injections_have_rank_at_most_d_small(self):
        for values in rank_profile(self.adapter, random_queries(12, seed=5)):
            self.assertLessEqual(int(np.sum(values > 1e-10 * values[0])), 4)

    def test_contracts(self):
        with self.assertRaises(ContractError):
            steered_forward(self.adapter, init_params(LARGE, 0), [1, 4])
        other = init_params(ModelConfig(**{**LARGE.to_dict(), 'n_layers': 2}), 0).freeze()
        with self.assertRaises(ContractError):
            steered_forward(self.adapter, other, [1, 4])

    def test_state_round_trip(self):
        restored = adapter_from_state(self.adapter.params.state_dict(), GENERATOR, LARGE, lam=0.5)
        query = random_queries(1, seed=9)[0]
        np.testing.assert_array_equal(injected_vectors(restored, query),
                                      injected_vectors(self.adapter, query))


class AtvTrainingTestCase(SimpleTestCase):

    def setUp(self):
        self.large = init_params(LARGE, 0).freeze()
        self.adapter = build_adapter(GENERATOR, LARGE, seed=2, lam=1.0)
        # the answer token is the query's second token, so it depends on the query
        self.dataset = [(q, [q[1]]) for q in random_queries(6, seed=1)]

    def test_backbone_is_bitwise_unchanged(self):
        before = self.large.params.state_dict()
        report = train_atv(self.adapter, self.large, self.dataset, TrainConfig(epochs=3, lr=1e-2))
        after = self.large.params.state_dict()
        self.assertEqual(before.keys(), after.keys())
        for name in before:
            np.testing.assert_array_equal(before[name], after[name])
            self.assertIsNone(self.large.params[name].grad)
        self.assertEqual(report.steps, 18)

    def test_training_reduces_loss(self):
        def mean_loss():
            return np.mean([atv_loss(self.adapter, self.large, p, a).item() for p, a in self.dataset])

        before = mean_loss()
        train_atv(self.adapter, self.large, self.dataset, TrainConfig(epochs=15, lr=1e-2))
        self.assertLess(mean_loss(), before)

    def test_requires_frozen_backbone_and_data(self):
        with self.assertRaises(ContractError):
            train_atv(self.adapter, init_params(LARGE, 0), self.dataset, TrainConfig(epochs=1))
        with self.assertRaises(ContractError):
            train_atv(self.adapter, self.large, [], TrainConfig(epochs=1))

    def test_training_is_deterministic(self):
        other = build_adapter(GENERATOR, LARGE, seed=2, lam=1.0)
        cfg = TrainConfig(epochs=2, lr=1e-2, seed=7)
        train_atv(self.adapter, self.large, self.dataset, cfg)
        train_atv(other, self.large, self.dataset, cfg)
        for name, value in self.adapter.params.state_dict().items():
            np.testing.assert_array_equal(value, other.params[name].data)


class ExpansionInputTestCase(SimpleTestCase):

    def test_tensor_input_keeps_the_tape(self):
        adapter = build_adapter(GENERATOR, LARGE, seed=0)
        v = Tensor(np.ones(4), requires_grad=True)
        self.assertTrue(expand(adapter, v).requires_grad)


class DefaultLambdaTestCase(SimpleTestCase):

    def setUp(self):
        self.large = init_params(LARGE, 0).freeze()
        self.query = random_queries(1, seed=3)[0]

    def test_initial_injection_does_not_depend_on_lambda(self):
        small = build_adapter(GENERATOR, LARGE, seed=4)
        self.assertEqual(small.lam, DEFAULT_LAMBDA)
        unit = build_adapter(GENERATOR, LARGE, seed=4, lam=1.0)
        np.testing.assert_allclose(injected_vectors(small, self.query),
                                   injected_vectors(unit, self.query), rtol=1e-9, atol=1e-15)
        rms = np.sqrt(np.mean(injected_vectors(small, self.query) ** 2))
        self.assertGreater(rms, 0.3 * EXPANSION_INIT)
        self.assertLess(rms, 3.0 * EXPANSION_INIT)

    def test_default_lambda_perturbs_logits_slightly(self):
        adapter = build_adapter(GENERATOR, LARGE, seed=4)
        base = forward(self.large, self.query).logits.data
        steered = steered_forward(adapter, self.large, self.query).logits.data
        shift = np.max(np.abs(steered - base))
        self.assertGreater(shift, 0.0)
        self.assertLess(shift, 0.5)

    def test_expansion_steps_are_taken_in_injection_units(self):
        dataset = [(self.query, [self.query[1]])]
        cfg = TrainConfig(epochs=1, lr=1e-3, weight_decay=0.0)
        moved = {}
        for lam in (DEFAULT_LAMBDA, 1.0):
            adapter = build_adapter(GENERATOR, LARGE, seed=4, lam=lam)
            self.assertEqual(adapter.lr_scales(), {'atv.expansion.weight': expansion_scale(lam)})
            before = adapter.expansion.weight.data.copy()
            train_atv(adapter, self.large, dataset, cfg)
            moved[lam] = lam * (adapter.expansion.weight.data - before)
        ratio = np.linalg.norm(moved[DEFAULT_LAMBDA]) / np.linalg.norm(moved[1.0])
        # Adam eps shrinks steps of tiny gradients, never enlarges them
        self.assertGreater(ratio, 0.75)
        self.assertLessEqual(ratio, 1.0 + 1e-9)
        self.assertEqual(expansion_scale(0.0), 1.0)


class GradientStepTestCase(SimpleTestCase):

    def test_one_small_step_lowers_the_loss(self):
        large = init_params(LARGE, 0).freeze()
        query = random_queries(1, seed=8)[0]
        answer = [query[1]]
        for lam in (1.0, DEFAULT_LAMBDA):
            for lr in (1e-3, 1e-4):
                with self.subTest(lam=lam, lr=lr):
                    adapter = build_adapter(GENERATOR, LARGE, seed=5, lam=lam)
                    before = atv_loss(adapter, large, query, answer).item()
                    report = train_atv(adapter, large, [(query, answer)],
                                       TrainConfig(epochs=1, lr=lr, weight_decay=0.0))
                    self.assertEqual(report.steps, 1)
                    self.assertLess(atv_loss(adapter, large, query, answer).item(), before)
