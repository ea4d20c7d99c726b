"""
Train / test splits over the task families, the tokenised training items
built from them, and JSONL export.
"""
import json
import logging
from collections import namedtuple
from dataclasses import replace

import numpy as np

from numeric.exceptions import ContractError, DataIntegrityError

from .families import ITEM_TOKENS, generate_dataset
from .templates import (STATEMENT_CUE, render_prompt, render_statement, render_training,
                        template_set)
from .vocab import Vocab, tokenize

logger = logging.getLogger(__name__)

TRAIN = 'train'
TEST_SEEN_TEMPLATE = 'test_seen_template'
TEST_UNSEEN_TEMPLATE = 'test_unseen_template'
UNSEEN_TASK = 'unseen_task'
DEMO = 'demo'
SPLITS = (TRAIN, TEST_SEEN_TEMPLATE, TEST_UNSEEN_TEMPLATE, UNSEEN_TASK)
EVAL_SPLITS = (TEST_SEEN_TEMPLATE, TEST_UNSEEN_TEMPLATE, UNSEEN_TASK)

TrainingItem = namedtuple('TrainingItem', 'prompt answer family uid')


def make_splits(specs, seed, n_train=90, n_test=30, n_demo=4):
    """Disjoint per-family example sets.

    All specs but the last are in-domain and contribute ``train`` and both test
    buckets; the last is held out and only appears in ``unseen_task`` (plus a
    ``demo`` pool that the demonstration-based methods read at evaluation).
    """
    specs = list(specs)
    if len(specs) < 3:
        raise ContractError('make_splits needs at least 2 in-domain families and 1 held-out family')
    *in_domain, held_out = specs
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ContractError(f'duplicate families in {names}')

    splits = {name: [] for name in SPLITS + (DEMO,)}
    for spec in in_domain:
        examples = generate_dataset(spec.with_seed(seed + spec.seed), n_train + 2 * n_test)
        splits[TRAIN] += _tag(examples[:n_train], TRAIN)
        splits[TEST_SEEN_TEMPLATE] += _tag(examples[n_train:n_train + n_test], TEST_SEEN_TEMPLATE)
        splits[TEST_UNSEEN_TEMPLATE] += _tag(examples[n_train + n_test:], TEST_UNSEEN_TEMPLATE)
    examples = generate_dataset(held_out.with_seed(seed + held_out.seed), n_test + n_demo)
    splits[UNSEEN_TASK] = _tag(examples[:n_test], UNSEEN_TASK)
    splits[DEMO] = _tag(examples[n_test:], DEMO)
    check_disjoint(splits, held_out.name)
    logger.info('splits for seed %d: %s', seed,
                ', '.join(f'{k}={len(v)}' for k, v in splits.items()))
    return splits


def _tag(examples, split):
    return [replace(ex, split=split) for ex in examples]


def check_disjoint(splits, held_out):
    owner = {}
    for split, examples in splits.items():
        for ex in examples:
            if ex.uid in owner:
                raise DataIntegrityError(f'example {ex.uid} is in both {owner[ex.uid]} and {split}')
            owner[ex.uid] = split
    leaked = [ex.uid for ex in splits[TRAIN] if ex.family == held_out]
    if leaked:
        raise DataIntegrityError(f'held-out family {held_out} leaked into training: {leaked[:3]}')


def corpus_texts(splits):
    """Every rendering of every example with its answers, the cue and all item tokens."""
    yield STATEMENT_CUE
    yield ' '.join(ITEM_TOKENS)
    for examples in splits.values():
        for ex in examples:
            for t, p in template_set(ex.family).variants():
                prompt, answers = render_prompt(ex, t, p)
                yield prompt
                yield from answers


def build_vocab(splits):
    return Vocab.build(corpus_texts(splits))


def training_items(vocab, examples):
    items = []
    for ex in examples:
        prompt, answers = render_training(ex)
        items.append(TrainingItem(tokenize(vocab, prompt), vocab.encode(answers[ex.gold], bos=False),
                                  ex.family, ex.uid))
    return items


def interleaved(items, rng):
    """Shuffle within each family, then take families round-robin."""
    by_family = {}
    for item in items:
        by_family.setdefault(item.family, []).append(item)
    queues = [[group[i] for i in rng.permutation(len(group))]
              for _, group in sorted(by_family.items())]
    order = []
    for position in range(max(len(q) for q in queues)):
        order += [q[position] for q in queues if position < len(q)]
    return order


STATEMENT_SEED_OFFSET = 10_000


def pretraining_corpus(vocab, examples, specs, seed, statements=400):
    """Token sequences for language-model pretraining of the backbone.

    Each training example appears once in a random template x prefix variant,
    followed by a uniformly random option: every template is in-distribution
    but the answer prefixes carry no information about the gold option.
    ``statements`` fresh examples of every family in ``specs``, the held-out
    one included, appear as statements (``render_statement``) whose cue is
    followed by the gold answer. The backbone thus knows every rule, but only
    behind a cue that no evaluation prompt contains.
    """
    rng = np.random.default_rng(seed)
    sequences = []
    for ex in examples:
        variants = template_set(ex.family).variants()
        prompt, answers = render_prompt(ex, *variants[rng.integers(len(variants))])
        answer = answers[rng.integers(len(answers))]
        sequences.append(tokenize(vocab, prompt) + vocab.encode(answer, bos=False))
    for spec in specs if statements else ():
        fresh = generate_dataset(spec.with_seed(STATEMENT_SEED_OFFSET + seed + spec.seed), statements)
        n_templates = len(template_set(spec.name).questions)
        sequences += [tokenize(vocab, render_statement(ex, int(rng.integers(n_templates))))
                      for ex in fresh]
    logger.debug('pretraining corpus: %d prompts, %d statements', len(examples),
                 len(sequences) - len(examples))
    return sequences


def export_jsonl(splits, stream):
    count = 0
    for split in SPLITS:
        for ex in splits.get(split, ()):
            stream.write(json.dumps({
                'question': ex.question,
                'options': list(ex.options),
                'gold': ex.gold,
                'family': ex.family,
                'split': split,
            }) + '\n')
            count += 1
    return count


def prompt_token_count(vocab, example, template_id, prefix_id):
    return len(tokenize(vocab, render_prompt(example, template_id, prefix_id)[0]))

