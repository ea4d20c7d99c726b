import io
import json

import numpy as np
from django.test import SimpleTestCase

from numeric.exceptions import ConfigError, ContractError, DataIntegrityError

from .families import (FAMILIES, IN_DOMAIN, ITEM_TOKENS, UNSEEN, Example, TaskSpec,
                       contains_rule, default_specs, duplicate_rule, generate_dataset, get_family,
                       label_counts, maxpos_rule, modsum_rule, parity_rule)
from .splits import (DEMO, EVAL_SPLITS, STATEMENT_SEED_OFFSET, TEST_SEEN_TEMPLATE,
                     TEST_UNSEEN_TEMPLATE, TRAIN, UNSEEN_TASK, build_vocab, check_disjoint,
                     export_jsonl, interleaved, make_splits, pretraining_corpus,
                     prompt_token_count, training_items)
from .templates import (ANSWER_PREFIXES, SEP, STATEMENT_CUE, render_demonstration, render_prompt,
                        render_statement, render_training, template_group, template_set)
from .vocab import BOS, UNK, Vocab, split_words, tokenize


class RuleTestCase(SimpleTestCase):

    def test_rules(self):
        self.assertEqual(parity_rule(('1', '0', '1', '1', '0', '0')), 1)
        self.assertEqual(modsum_rule(('4', '4', '1', '0', '0')), 0)
        self.assertEqual(maxpos_rule(('12', '97', '40')), 1)
        self.assertEqual(contains_rule(('a', 'x', 'b')), 0)
        self.assertEqual(contains_rule(('a', 'b')), 1)
        self.assertEqual(duplicate_rule(('a', 'b', 'a')), 0)
        self.assertEqual(duplicate_rule(('a', 'b', 'c')), 1)

    def test_gold_is_rederivable_from_items(self):
        for spec in default_specs(seed=11):
            examples = generate_dataset(spec, 90)
            self.assertEqual(len(examples), 90)
            for ex in examples:
                self.assertEqual(FAMILIES[spec.name].rule(ex.items), ex.gold, ex.uid)
                self.assertEqual(ex.answer, spec.options[ex.gold])

    def test_example_contract(self):
        with self.assertRaises(ContractError):
            Example('u', 'parity', ('1',), ('even', 'odd'), gold=2)
        with self.assertRaises(ContractError):
            Example('u', 'parity', ('1',), ('even', 'even'), gold=0)

    def test_unknown_family(self):
        with self.assertRaises(ConfigError):
            get_family('sorting')


class DatasetTestCase(SimpleTestCase):

    def test_labels_are_balanced(self):
        counts = label_counts(generate_dataset(TaskSpec('modsum', seed=1), 90))
        self.assertEqual(counts, {0: 30, 1: 30, 2: 30})
        counts = label_counts(generate_dataset(TaskSpec('parity', seed=1), 91))
        self.assertEqual(sorted(counts.values()), [45, 46])

    def test_generation_is_deterministic(self):
        spec = TaskSpec('contains', seed=5)
        self.assertEqual(generate_dataset(spec, 20), generate_dataset(spec, 20))
        self.assertNotEqual(generate_dataset(spec, 20), generate_dataset(spec.with_seed(6), 20))

    def test_default_specs_hold_out_one_family(self):
        specs = default_specs()
        self.assertEqual([s.name for s in specs], list(IN_DOMAIN) + [UNSEEN])
        self.assertEqual(specs[0].options, ('even', 'odd'))


class TemplateTestCase(SimpleTestCase):

    def setUp(self):
        self.example = generate_dataset(TaskSpec('maxpos', seed=2), 1)[0]

    def test_nine_variants(self):
        variants = template_set('maxpos').variants()
        self.assertEqual(len(variants), 9)
        prompts = {render_prompt(self.example, t, p)[0] for t, p in variants}
        self.assertEqual(len(prompts), 9)

    def test_prompt_layout(self):
        prompt, answers = render_prompt(self.example, 1, 2)
        question, options, prefix = prompt.split(SEP)
        self.assertIn(self.example.question, question)
        self.assertEqual(options, 'Options: (A) first , (B) second , (C) third')
        self.assertEqual(prefix, ANSWER_PREFIXES[2])
        self.assertEqual(answers, ['first', 'second', 'third'])

    def test_training_rendering_and_groups(self):
        self.assertEqual(render_training(self.example), render_prompt(self.example, 0, 0))
        self.assertTrue(render_demonstration(self.example).endswith(' ' + self.example.answer))
        self.assertEqual(template_group(0), 'train')
        self.assertEqual(template_group(2), 'held_out')

    def test_bad_ids(self):
        with self.assertRaises(ContractError):
            render_prompt(self.example, 3, 0)
        with self.assertRaises(ContractError):
            render_prompt(self.example, 0, -1)


class VocabTestCase(SimpleTestCase):

    def test_newline_is_a_token(self):
        self.assertEqual(split_words('a \n b'), ['a', '\n', 'b'])

    def test_round_trip_and_unknowns(self):
        vocab = Vocab.build(['parity is even', 'odd'])
        ids = tokenize(vocab, 'parity is odd')
        self.assertEqual(ids[0], vocab.bos_id)
        self.assertEqual(vocab.decode(ids), 'parity is odd')
        self.assertEqual(tokenize(vocab, 'parity unseen')[-1], vocab.unk_id)
        restored = Vocab.from_json(vocab.to_json())
        self.assertEqual(restored.itos, vocab.itos)
        self.assertEqual(vocab.itos[1], BOS)
        self.assertIn(UNK, vocab)


class SplitTestCase(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.specs = [TaskSpec(name, seed=i) for i, name in enumerate(('parity', 'modsum', 'duplicate'))]
        cls.splits = make_splits(cls.specs, seed=42, n_train=12, n_test=6, n_demo=3)

    def test_sizes_and_membership(self):
        self.assertEqual(len(self.splits[TRAIN]), 24)
        self.assertEqual(len(self.splits[TEST_SEEN_TEMPLATE]), 12)
        self.assertEqual(len(self.splits[TEST_UNSEEN_TEMPLATE]), 12)
        self.assertEqual(len(self.splits[UNSEEN_TASK]), 6)
        self.assertEqual(len(self.splits[DEMO]), 3)
        self.assertEqual({ex.family for ex in self.splits[UNSEEN_TASK]}, {'duplicate'})
        self.assertNotIn('duplicate', {ex.family for ex in self.splits[TRAIN]})
        for split in EVAL_SPLITS + (TRAIN, DEMO):
            self.assertTrue(all(ex.split == split for ex in self.splits[split]))

    def test_splits_are_disjoint_and_checked(self):
        uids = [ex.uid for examples in self.splits.values() for ex in examples]
        self.assertEqual(len(uids), len(set(uids)))
        broken = dict(self.splits, **{TEST_SEEN_TEMPLATE: self.splits[TRAIN][:1]})
        with self.assertRaises(DataIntegrityError):
            check_disjoint(broken, 'duplicate')

    def test_splits_are_deterministic(self):
        again = make_splits(self.specs, seed=42, n_train=12, n_test=6, n_demo=3)
        self.assertEqual(again, self.splits)

    def test_needs_a_held_out_family(self):
        with self.assertRaises(ContractError):
            make_splits(self.specs[:2], seed=0)

    def test_vocab_covers_every_rendering(self):
        vocab = build_vocab(self.splits)
        for ex in self.splits[UNSEEN_TASK]:
            for t, p in template_set(ex.family).variants():
                self.assertNotIn(vocab.unk_id, tokenize(vocab, render_prompt(ex, t, p)[0]))
            for option in ex.options:
                self.assertEqual(len(vocab.encode(option, bos=False)), 1)
        self.assertGreater(prompt_token_count(vocab, ex, 0, 0), 10)

    def test_training_items_and_samplers(self):
        vocab = build_vocab(self.splits)
        items = training_items(vocab, self.splits[TRAIN])
        self.assertEqual(len(items[0].answer), 1)
        order = interleaved(items, np.random.default_rng(0))
        self.assertEqual(sorted(i.uid for i in order), sorted(i.uid for i in items))
        self.assertEqual([i.family for i in order[:4]], ['modsum', 'parity', 'modsum', 'parity'])
        corpus = pretraining_corpus(vocab, self.splits[TRAIN], self.specs, seed=0, statements=2)
        self.assertEqual(len(corpus), 24 + 3 * 2)
        self.assertEqual(corpus, pretraining_corpus(vocab, self.splits[TRAIN], self.specs, seed=0,
                                                    statements=2))
        self.assertEqual(len(pretraining_corpus(vocab, self.splits[TRAIN], self.specs, seed=0,
                                                statements=0)), 24)

    def test_jsonl_export(self):
        stream = io.StringIO()
        count = export_jsonl(self.splits, stream)
        lines = stream.getvalue().splitlines()
        self.assertEqual(count, 54)
        self.assertEqual(len(lines), 54)
        record = json.loads(lines[0])
        self.assertEqual(set(record), {'question', 'options', 'gold', 'family', 'split'})

    def test_every_split_example_keeps_its_rule(self):
        for split, examples in self.splits.items():
            for ex in examples:
                self.assertEqual(FAMILIES[ex.family].rule(ex.items), ex.gold, f'{split} {ex.uid}')


class PretrainingCorpusTestCase(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.specs = [TaskSpec(name, seed=i) for i, name in enumerate(('parity', 'contains', 'duplicate'))]
        cls.splits = make_splits(cls.specs, seed=3, n_train=24, n_test=2, n_demo=1)
        cls.vocab = build_vocab(cls.splits)
        cls.corpus = pretraining_corpus(cls.vocab, cls.splits[TRAIN], cls.specs, seed=3,
                                        statements=30)
        cls.cue = cls.vocab.stoi[STATEMENT_CUE]

    def test_vocab_covers_every_item_token_and_the_cue(self):
        self.assertNotIn(self.vocab.unk_id, tokenize(self.vocab, ' '.join(ITEM_TOKENS)))
        self.assertIn(STATEMENT_CUE, self.vocab)
        for sequence in self.corpus:
            self.assertNotIn(self.vocab.unk_id, sequence)

    def test_prompts_reach_every_template_and_prefix(self):
        prompts = [s for s in self.corpus if self.cue not in s]
        self.assertEqual(len(prompts), 48)
        seen = {w for s in prompts for w in s}
        for family in ('parity', 'contains'):
            for question in template_set(family).questions:
                words = split_words(question.format(items=''))
                self.assertTrue(all(self.vocab.stoi[w] in seen for w in words), question)
        for prefix in ANSWER_PREFIXES:
            self.assertTrue(all(self.vocab.stoi[w] in seen for w in split_words(prefix)), prefix)

    def test_statements_end_with_cue_and_gold(self):
        statements = [s for s in self.corpus if self.cue in s]
        self.assertEqual(len(statements), 3 * 30)
        options = {self.vocab.stoi[o] for spec in self.specs for o in spec.options}
        for sequence in statements:
            self.assertEqual(sequence[-2], self.cue)
            self.assertIn(sequence[-1], options)
        fresh = generate_dataset(self.specs[2].with_seed(STATEMENT_SEED_OFFSET + 3 + 2), 30)
        texts = {self.vocab.decode(s) for s in statements}
        for ex in fresh:
            self.assertTrue(any(self.vocab.decode(tokenize(self.vocab, render_statement(ex, t))) in texts
                                for t in range(3)), ex.uid)

    def test_statement_layout(self):
        ex = self.splits[UNSEEN_TASK][0]
        question, options, tail = render_statement(ex, 1).split(SEP)
        self.assertEqual(question, template_set(ex.family).questions[1].format(items=ex.question))
        self.assertEqual(options, render_prompt(ex, 1, 0)[0].split(SEP)[1])
        self.assertEqual(tail, f'{STATEMENT_CUE} {ex.answer}')
        for t, p in template_set(ex.family).variants():
            self.assertNotIn(STATEMENT_CUE, split_words(render_prompt(ex, t, p)[0]))
