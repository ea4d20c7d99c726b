from dataclasses import replace

import numpy as np
from django.test import SimpleTestCase

from numeric import ops
from numeric.exceptions import ContractError, DataIntegrityError
from numeric.tensor import Tensor
from tasks.families import TaskSpec, generate_dataset
from tasks.splits import DEMO, TRAIN
from tasks.templates import render_training
from tasks.vocab import Vocab, tokenize
from transformer.config import ModelConfig
from transformer.model import InjectionHook, causal_mask, extract_task_vector, forward, init_params
from transformer.training import TrainConfig

from .fixed_vector import build_fixed_task_vector, from_params, to_params
from .icl import IclPromptBuilder, icl_prompt, icl_token_count
from .lora import init_lora, lora_forward
from .prefix import init_prefix, prefix_forward
from .training import LORA, PREFIX, train_baseline

CONFIG = ModelConfig(n_layers=2, d_model=8, n_heads=2, ffn_dim=16, vocab_size=13, max_seq_len=32)


def random_queries(n, seed=0):
    rng = np.random.default_rng(seed)
    return [[1] + list(rng.integers(4, 13, size=rng.integers(2, 8))) for _ in range(n)]


class NullSteeringTestCase(SimpleTestCase):

    def setUp(self):
        self.model = init_params(CONFIG, 0).freeze()
        self.queries = random_queries(100)

    def assertZeroShot(self, run):
        for query in self.queries:
            np.testing.assert_array_equal(run(query), forward(self.model, query).logits.data)

    def test_fresh_lora_is_the_base_model(self):
        lora = init_lora(CONFIG, rank=2, seed=1)
        self.assertZeroShot(lambda q: lora_forward(self.model, lora, q).logits.data)

    def test_empty_prefix_is_the_base_model(self):
        prefix = init_prefix(CONFIG, length=0)
        self.assertEqual(len(prefix.params), 0)
        self.assertZeroShot(lambda q: prefix_forward(self.model, prefix, q).logits.data)

    def test_zero_lambda_fixed_vector_is_the_base_model(self):
        ftv = build_fixed_task_vector(self.model, [1, 4, 5, 6], lam=0.0, task='parity')
        self.assertZeroShot(lambda q: forward(self.model, q, ftv.hook()).logits.data)


class LoraTestCase(SimpleTestCase):

    def setUp(self):
        self.lora = init_lora(CONFIG, rank=2, alpha=4.0, dropout=0.0, seed=3)
        rng = np.random.default_rng(0)
        for name, tensor in self.lora.params.items():
            if name.endswith('.up'):
                tensor.data = rng.normal(size=tensor.shape)

    def test_increment_rank_is_bounded(self):
        x = Tensor(np.random.default_rng(1).normal(size=(10, 8)))
        delta = self.lora.delta(0, 'q', x).data
        self.assertEqual(np.linalg.matrix_rank(delta), 2)
        self.assertIsNone(self.lora.delta(0, 'k', x))
        self.assertEqual(self.lora.scale, 2.0)

    def test_doubling_alpha_doubles_the_update(self):
        eye = Tensor(np.eye(8))
        doubled = replace(self.lora, alpha=2 * self.lora.alpha)
        for layer in range(2):
            for which in ('q', 'v'):
                np.testing.assert_allclose(doubled.delta(layer, which, eye).data,
                                           2.0 * self.lora.delta(layer, which, eye).data, rtol=1e-12)

    def test_full_rank_update_is_recovered_at_rank_d(self):
        delta_w = np.random.default_rng(6).normal(size=(8, 8))
        self.assertEqual(np.linalg.matrix_rank(delta_w), 8)
        lora = init_lora(CONFIG, rank=8, alpha=16.0, dropout=0.0, seed=2)
        u, s, vt = np.linalg.svd(delta_w)
        lora.down(1, 'v').data = u * np.sqrt(s)
        lora.up(1, 'v').data = (np.sqrt(s)[:, None] * vt) / lora.scale
        np.testing.assert_allclose(lora.delta(1, 'v', Tensor(np.eye(8))).data, delta_w, atol=1e-12)

    def test_nonzero_up_projection_changes_logits(self):
        model = init_params(CONFIG, 0).freeze()
        query = [1, 4, 5, 6]
        self.assertFalse(np.array_equal(lora_forward(model, self.lora, query).logits.data,
                                        forward(model, query).logits.data))

    def test_contracts(self):
        model = init_params(CONFIG, 0)
        with self.assertRaises(ContractError):
            init_lora(CONFIG, rank=0)
        with self.assertRaises(ContractError):
            lora_forward(model, init_lora(CONFIG, dropout=0.1), [1, 4], training=True)
        small = ModelConfig(**{**CONFIG.to_dict(), 'n_layers': 1})
        with self.assertRaises(ContractError):
            lora_forward(model, init_lora(small), [1, 4])


class PrefixTestCase(SimpleTestCase):

    def test_prefix_is_visible_from_every_position(self):
        model = init_params(CONFIG, 0).freeze()
        prefix = init_prefix(CONFIG, length=3, seed=1)
        for name, tensor in prefix.params.items():
            tensor.data = tensor.data * 50.0
        query = [1, 4, 5, 6]
        steered = prefix_forward(model, prefix, query)
        base = forward(model, query).logits.data
        self.assertTrue(all(not np.allclose(steered.logits.data[i], base[i]) for i in range(4)))
        self.assertEqual(steered.attention[0].shape, (2, 4, 7))

    def test_aligned_prefix_key_takes_all_attention(self):
        model = init_params(CONFIG, 0).freeze()
        query = [1, 4, 5, 6]
        heads, dk = CONFIG.n_heads, CONFIG.d_model // CONFIG.n_heads
        x = model.p('tok_emb').data[query] + model.p('pos_emb').data[:4]
        q, k, v = (x @ model.p(f'layer0.{w}').data for w in ('wq', 'wk', 'wv'))
        q_last = q[-1].reshape(heads, dk)
        content = np.einsum('hd,shd->hs', q_last, k.reshape(4, heads, dk)) / np.sqrt(dk)
        # every head's prefix score beats its best content score by at least 30
        c = (np.max(content) + 31.0) * np.sqrt(dk) / np.min(np.sum(q_last ** 2, axis=1))
        prefix = init_prefix(CONFIG, length=2, seed=1)
        prefix.keys(0).data[0] = c * q[-1]
        weights = prefix_forward(model, prefix, query).attention[0]
        self.assertTrue(np.all(weights[:, -1, 0] > 1.0 - 1e-11))
        keys = np.concatenate([prefix.keys(0).data, k])
        values = np.concatenate([prefix.values(0).data, v])
        out, _ = ops.multi_head_attention(Tensor(q), Tensor(keys), Tensor(values), heads,
                                          causal_mask(4, 2))
        np.testing.assert_allclose(out.data[-1], prefix.values(0).data[0], atol=1e-10)

    def test_prefix_share_grows_towards_one_with_length(self):
        model = init_params(CONFIG, 0).freeze()
        row = np.random.default_rng(2).normal(size=(2, CONFIG.d_model))
        shares = []
        for length in (1, 2, 4, 8, 16, 64):
            prefix = init_prefix(CONFIG, length=length)
            for layer in range(CONFIG.n_layers):
                prefix.keys(layer).data = np.tile(row[0], (length, 1))
                prefix.values(layer).data = np.tile(row[1], (length, 1))
            weights = prefix_forward(model, prefix, [1, 4, 5, 6]).attention[0]
            shares.append(float(weights[:, -1, :length].sum(axis=1).mean()))
        self.assertTrue(all(b > a for a, b in zip(shares, shares[1:])), shares)
        self.assertGreater(shares[-1], 0.9)
        self.assertLess(shares[-1], 1.0)

    def test_negative_length_is_rejected(self):
        with self.assertRaises(ContractError):
            init_prefix(CONFIG, length=-1)


class FixedTaskVectorTestCase(SimpleTestCase):

    def setUp(self):
        self.model = init_params(CONFIG, 0).freeze()
        self.demo = [1, 4, 5, 6, 7]

    def test_vectors_are_the_demonstration_states(self):
        ftv = build_fixed_task_vector(self.model, self.demo, lam=0.1, task='parity')
        expected = np.stack([h.data for h in extract_task_vector(self.model, self.demo)])
        np.testing.assert_array_equal(ftv.vectors, expected)
        np.testing.assert_array_equal(ftv.injected(), 0.1 * expected)
        self.assertEqual(ftv.provenance, tuple(self.demo))

    def test_same_vector_for_every_query(self):
        ftv = build_fixed_task_vector(self.model, self.demo, lam=0.1, layers=frozenset({1}))
        injected = ftv.injected()
        np.testing.assert_array_equal(injected[0], np.zeros(8))
        self.assertIsInstance(ftv.hook(), InjectionHook)

    def test_checkpoint_entries_round_trip(self):
        vectors = {t: build_fixed_task_vector(self.model, self.demo[:i], task=t)
                   for i, t in ((3, 'parity'), (5, 'modsum'))}
        store = to_params(vectors)
        self.assertEqual(store.names(), ['ftv.modsum', 'ftv.parity'])
        self.assertTrue(store.is_frozen())
        restored = from_params(store, lam=0.2)
        for task, ftv in vectors.items():
            np.testing.assert_array_equal(restored[task].vectors, ftv.vectors)
            self.assertEqual(restored[task].lam, 0.2)

    def test_empty_demonstration_is_rejected(self):
        with self.assertRaises(ContractError):
            build_fixed_task_vector(self.model, [])


class IclTestCase(SimpleTestCase):

    def setUp(self):
        pool = generate_dataset(TaskSpec('parity', seed=3), 12)
        self.pool = [replace(ex, split=TRAIN) for ex in pool[:8]] + \
            [replace(ex, split=DEMO) for ex in pool[8:]]
        self.builder = IclPromptBuilder(k=3, seed=5)
        texts = [render_training(ex)[0] for ex in pool] + ['even', 'odd']
        self.vocab = Vocab.build(texts)

    def test_demonstrations_are_seeded(self):
        first = self.builder.demonstrations(self.pool, 'parity')
        self.assertEqual(len(first), 3)
        self.assertEqual(first, self.builder.demonstrations(self.pool, 'parity'))
        self.assertTrue(all(ex.family == 'parity' for ex in first))

    def test_foreign_splits_are_rejected(self):
        pool = self.pool + [replace(self.pool[0], uid='leak', split='test_seen_template')]
        with self.assertRaises(DataIntegrityError):
            self.builder.demonstrations(pool, 'parity')
        with self.assertRaises(DataIntegrityError):
            IclPromptBuilder(k=20).demonstrations(self.pool, 'parity')

    def test_prompt_grows_with_demonstrations(self):
        query = render_training(self.pool[0])[0]
        demos = self.builder.demonstrations(self.pool, 'parity')
        self.assertEqual(icl_prompt(self.builder, [], query), query)
        with_demos = icl_token_count(self.vocab, self.builder, demos, query)
        self.assertGreater(with_demos, len(tokenize(self.vocab, query)) * 3)
        self.assertTrue(icl_prompt(self.builder, demos, query).endswith(query))


class BaselineTrainingTestCase(SimpleTestCase):

    def setUp(self):
        self.model = init_params(CONFIG, 0).freeze()
        self.dataset = [(q, [q[1]]) for q in random_queries(5, seed=2)]

    def test_lora_training_leaves_the_backbone_alone(self):
        before = self.model.params.state_dict()
        lora = init_lora(CONFIG, rank=2, seed=1)
        report = train_baseline(LORA, self.model, self.dataset, TrainConfig(epochs=2, lr=1e-2), lora)
        self.assertEqual(report.steps, 10)
        for name, value in before.items():
            np.testing.assert_array_equal(self.model.params[name].data, value)
        self.assertTrue(any(np.any(lora.up(l, 'q').data) for l in range(2)))

    def test_prefix_training_reduces_loss(self):
        prefix = init_prefix(CONFIG, length=2, seed=1)
        report = train_baseline(PREFIX, self.model, self.dataset, TrainConfig(epochs=10, lr=5e-2),
                                prefix)
        self.assertLess(report.epoch_losses[-1], report.epoch_losses[0])

    def test_contracts(self):
        lora = init_lora(CONFIG, rank=2)
        cfg = TrainConfig(epochs=1)
        with self.assertRaises(ContractError):
            train_baseline('adapter', self.model, self.dataset, cfg, lora)
        with self.assertRaises(ContractError):
            train_baseline(PREFIX, self.model, self.dataset, cfg, lora)
        with self.assertRaises(ContractError):
            train_baseline(LORA, init_params(CONFIG, 0), self.dataset, cfg, lora)
        with self.assertRaises(ContractError):
            train_baseline(LORA, self.model, [], cfg, lora)
