import numpy as np
from django.test import SimpleTestCase

from numeric.exceptions import CapacityError, ConfigError, ContractError
from numeric.gradcheck import grad_check
from numeric.tensor import ParamStore, Tensor

from .config import ModelConfig
from .model import (CURRENT_LAST, PROMPT_FINAL, InjectionHook, causal_mask, extract_task_vector,
                    forward, init_params)
from .scoring import answer_logits, answer_loss, predict, score_options
from .training import TrainConfig, fit, lm_loss, pretrain_backbone

TINY = ModelConfig(n_layers=2, d_model=8, n_heads=2, ffn_dim=16, vocab_size=11, max_seq_len=12)


def tiny_model(seed=0, **overrides):
    config = ModelConfig(**{**TINY.to_dict(), **overrides})
    return init_params(config, seed)


class ModelConfigTestCase(SimpleTestCase):

    def test_heads_must_divide_width(self):
        with self.assertRaises(ConfigError) as cm:
            ModelConfig(n_layers=1, d_model=10, n_heads=4, ffn_dim=8, vocab_size=5, max_seq_len=4)
        self.assertIn('n_heads', cm.exception.errors)

    def test_round_trip(self):
        self.assertEqual(ModelConfig.from_dict(TINY.to_dict()), TINY)


class ForwardTestCase(SimpleTestCase):

    def setUp(self):
        self.model = tiny_model()
        self.tokens = [1, 4, 5, 6, 7]

    def test_init_is_deterministic_per_seed(self):
        again = tiny_model(5).params.state_dict()
        for name, value in tiny_model(5).params.state_dict().items():
            np.testing.assert_array_equal(value, again[name])
        other = tiny_model(6).params.state_dict()
        self.assertFalse(np.array_equal(other['large.tok_emb'], again['large.tok_emb']))

    def test_causality(self):
        base = forward(self.model, self.tokens).logits.data
        changed = forward(self.model, self.tokens[:-1] + [9]).logits.data
        np.testing.assert_array_equal(base[:-1], changed[:-1])
        self.assertFalse(np.array_equal(base[-1], changed[-1]))

    def test_causal_mask_with_prefix(self):
        mask = causal_mask(3, n_prefix=2)
        self.assertEqual(mask.shape, (3, 5))
        self.assertTrue(mask[:, :2].all())
        self.assertFalse(mask[0, 3])

    def test_zero_lambda_and_empty_mask_are_identities(self):
        base = forward(self.model, self.tokens).logits.data
        vectors = Tensor(np.random.default_rng(1).normal(size=(2, 8)))
        for hook in (InjectionHook(0.0, vectors), InjectionHook(1.0, vectors, layers=frozenset())):
            np.testing.assert_array_equal(forward(self.model, self.tokens, hook).logits.data, base)

    def test_injection_only_touches_the_last_position(self):
        base = forward(self.model, self.tokens).logits.data
        hook = InjectionHook(1.0, Tensor(np.ones((2, 8))), layers=frozenset({0}))
        steered = forward(self.model, self.tokens, hook).logits.data
        np.testing.assert_array_equal(steered[:-1], base[:-1])
        self.assertFalse(np.allclose(steered[-1], base[-1]))

    def test_injection_at_top_layer_is_additive_on_the_hidden_state(self):
        hook = InjectionHook(0.5, [None, np.arange(8.0)], layers=frozenset({1}))
        base = forward(self.model, self.tokens).hidden[1].data
        steered = forward(self.model, self.tokens, hook).hidden[1].data
        np.testing.assert_allclose(steered - base, 0.5 * np.arange(8.0), atol=1e-12)

    def test_hook_shape_is_validated(self):
        with self.assertRaises(ContractError):
            forward(self.model, self.tokens, InjectionHook(1.0, Tensor(np.ones((3, 8)))))
        with self.assertRaises(ContractError):
            forward(self.model, self.tokens, InjectionHook(1.0, Tensor(np.ones((2, 8))),
                                                           layers=frozenset({5})))

    def test_sequence_limits(self):
        with self.assertRaises(CapacityError):
            forward(self.model, [1] * 13)
        with self.assertRaises(ContractError):
            forward(self.model, [])
        with self.assertRaises(ContractError):
            forward(self.model, [1, 11])

    def test_extract_task_vector_is_per_layer(self):
        vectors = extract_task_vector(self.model, self.tokens)
        self.assertEqual(len(vectors), 2)
        self.assertEqual(vectors[0].shape, (8,))

    def test_generator_has_no_output_head(self):
        model = tiny_model(output_head=False)
        self.assertNotIn('large.lm_head', model.params)
        self.assertIsNone(forward(model, self.tokens).logits)

    def test_tied_embeddings_reuse_the_token_table(self):
        model = tiny_model(tie_embeddings=True)
        self.assertNotIn('large.lm_head', model.params)
        logits = forward(model, self.tokens).logits
        self.assertEqual(logits.shape, (5, 11))


class FullGraphGradientTestCase(SimpleTestCase):

    def test_two_layer_graph_with_injection(self):
        for seed in range(20):
            model = tiny_model(seed)
            rng = np.random.default_rng(seed)
            # O(1) weights keep every gradient well above finite-difference noise
            for _, tensor in model.params.items():
                tensor.data = rng.normal(0.0, 0.5, size=tensor.shape)
            vectors = Tensor(rng.normal(size=(2, 8)), requires_grad=True)
            hook = InjectionHook(0.3, vectors)
            prompt = list(rng.integers(1, 11, size=4))
            answer = list(rng.integers(1, 11, size=2))
            leaves = {name: model.params[f'large.{name}'] for name in (
                'layer0.wq', 'layer0.ln1.gain', 'layer1.mlp.w2', 'lm_head')}
            leaves['vectors'] = vectors
            report = grad_check(lambda: answer_loss(model, prompt, answer, hook), leaves,
                                tolerance=1e-4)
            self.assertTrue(report.passed, (seed, report.per_leaf))


class ScoringTestCase(SimpleTestCase):

    def setUp(self):
        self.model = tiny_model(3)
        self.prompt = [1, 4, 5, 6]

    def test_unsteered_answer_logits_match_one_pass(self):
        logits = answer_logits(self.model, self.prompt, [7, 8]).data
        full = forward(self.model, self.prompt + [7]).logits.data
        np.testing.assert_array_equal(logits, full[3:5])

    def test_policies_agree_on_single_token_answers(self):
        vectors = Tensor(np.random.default_rng(0).normal(size=(2, 8)))
        a = answer_logits(self.model, self.prompt, [7], InjectionHook(1.0, vectors, policy=CURRENT_LAST))
        b = answer_logits(self.model, self.prompt, [7], InjectionHook(1.0, vectors, policy=PROMPT_FINAL))
        np.testing.assert_array_equal(a.data, b.data)

    def test_single_token_scores_are_log_probabilities(self):
        scores = score_options(self.model, self.prompt, [[7], [8], [9]])
        self.assertEqual(len(scores), 3)
        self.assertTrue(all(s < 0 for s in scores))
        pred, same = predict(self.model, self.prompt, [[7], [8], [9]])
        self.assertEqual(pred, int(np.argmax(scores)))
        self.assertEqual(same, scores)

    def test_option_contract(self):
        with self.assertRaises(ContractError):
            score_options(self.model, self.prompt, [[7]])
        with self.assertRaises(ContractError):
            score_options(self.model, self.prompt, [[7], []])

    def test_untrained_model_scores_at_chance(self):
        rng = np.random.default_rng(4)
        options = [[7], [8], [9], [10]]
        hits = []
        for trial in range(400):
            prompt = [1] + list(rng.integers(4, 11, size=rng.integers(2, 8)))
            gold = trial % len(options)
            hits.append(predict(self.model, prompt, options)[0] == gold)
        self.assertAlmostEqual(float(np.mean(hits)), 0.25, delta=0.1)


class TrainingTestCase(SimpleTestCase):

    def test_pretraining_reduces_loss(self):
        model = tiny_model(1)
        corpus = [[1, 4, 5, 6, 7], [1, 5, 6, 7, 8], [1, 6, 7, 8, 9]]
        before = np.mean([lm_loss(model, s).item() for s in corpus])
        report = pretrain_backbone(model, corpus, TrainConfig(epochs=20, lr=1e-2, seed=0))
        after = np.mean([lm_loss(model, s).item() for s in corpus])
        self.assertEqual(len(report.epoch_losses), 20)
        self.assertLess(after, before)
        self.assertGreater(report.reduction(), 0.0)

    def test_frozen_model_cannot_be_pretrained(self):
        with self.assertRaises(ContractError):
            pretrain_backbone(tiny_model().freeze(), [[1, 2]], TrainConfig())

    def test_fit_rejects_gradient_leaks(self):
        model = tiny_model()
        with self.assertRaises(ContractError):
            fit(model.params, lambda seq, rng: lm_loss(model, seq), [[1, 2, 3]],
                TrainConfig(epochs=1), 'toy', frozen=model.params)
        report = fit(ParamStore(), lambda seq, rng: lm_loss(model, seq),
                     [[1, 2, 3]], TrainConfig(epochs=1), 'toy')
        self.assertEqual(report.epoch_losses, [])

    def test_train_config_validation(self):
        with self.assertRaises(ConfigError):
            TrainConfig(epochs=0)
