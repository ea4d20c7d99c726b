"""
Synthetic task families. Every family draws its inputs from a seeded numpy
generator and labels them with a closed-form rule, so any example's gold
answer can be re-derived from its question items alone.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from numeric.exceptions import ConfigError, ContractError

logger = logging.getLogger(__name__)

LETTERS = tuple('abcdefghijklmnopqrstuvwyz')
SENTINEL = 'x'

# every token a family's sampler can emit
ITEM_TOKENS = tuple(str(n) for n in range(100)) + LETTERS + (SENTINEL,)


@dataclass(frozen=True)
class Example:
    uid: str
    family: str
    items: tuple
    options: tuple
    gold: int
    split: str = ''

    def __post_init__(self):
        if not 0 <= self.gold < len(self.options):
            raise ContractError(f'{self.uid}: gold {self.gold} outside {len(self.options)} options')
        if len(set(self.options)) != len(self.options):
            raise ContractError(f'{self.uid}: options {self.options} are not distinct')

    @property
    def question(self):
        return ' '.join(self.items)

    @property
    def answer(self):
        return self.options[self.gold]

    def to_dict(self):
        return {
            'uid': self.uid,
            'question': self.question,
            'options': list(self.options),
            'gold': self.gold,
            'family': self.family,
            'split': self.split,
        }


def parity_rule(items):
    return sum(int(b) for b in items) % 2


def modsum_rule(items):
    return sum(int(d) for d in items) % 3


def maxpos_rule(items):
    return int(np.argmax([int(n) for n in items]))


def contains_rule(items):
    return 0 if SENTINEL in items else 1


def duplicate_rule(items):
    return 0 if len(set(items)) < len(items) else 1


def _parity_items(rng):
    return tuple(str(b) for b in rng.integers(0, 2, size=6))


def _modsum_items(rng):
    return tuple(str(d) for d in rng.integers(0, 10, size=5))


def _maxpos_items(rng):
    return tuple(str(n) for n in rng.choice(np.arange(10, 100), size=3, replace=False))


def _contains_items(rng):
    items = list(rng.choice(LETTERS, size=8))
    if rng.random() < 0.5:
        items[rng.integers(0, 8)] = SENTINEL
    return tuple(str(t) for t in items)


def _duplicate_items(rng):
    return tuple(str(t) for t in rng.choice(LETTERS, size=6))


@dataclass(frozen=True)
class Family:
    name: str
    category: str
    options: tuple
    sample: object
    rule: object
    questions: tuple


FAMILIES = {
    'parity': Family(
        'parity', 'reasoning', ('even', 'odd'), _parity_items, parity_rule,
        ('Is the number of ones in {items} even or odd ?',
         'Bits : {items} . What is their parity ?',
         'Count the ones in {items} . Is the count even or odd ?')),
    'modsum': Family(
        'modsum', 'math', ('0', '1', '2'), _modsum_items, modsum_rule,
        ('What is the sum of {items} modulo 3 ?',
         'Digits : {items} . Sum them and take the remainder by 3 .',
         'Add up {items} . What remains after dividing by 3 ?')),
    'maxpos': Family(
        'maxpos', 'nlu', ('first', 'second', 'third'), _maxpos_items, maxpos_rule,
        ('Which of {items} is the largest ?',
         'Numbers : {items} . Where is the maximum ?',
         'Find the position of the biggest number in {items} .')),
    'contains': Family(
        'contains', 'knowledge', ('yes', 'no'), _contains_items, contains_rule,
        (f'Does {{items}} contain {SENTINEL} ?',
         f'Sequence : {{items}} . Is {SENTINEL} present ?',
         f'Look for {SENTINEL} in {{items}} . Is it there ?')),
    'duplicate': Family(
        'duplicate', 'safety', ('yes', 'no'), _duplicate_items, duplicate_rule,
        ('Does any token repeat in {items} ?',
         'Tokens : {items} . Is there a duplicate ?',
         'Check {items} for repeated tokens . Any repeats ?')),
}

IN_DOMAIN = ('parity', 'modsum', 'maxpos', 'contains')
UNSEEN = 'duplicate'


def get_family(name):
    try:
        return FAMILIES[name]
    except KeyError:
        raise ConfigError(f'unknown task family {name!r}',
                          {'family': [f'choose from {", ".join(sorted(FAMILIES))}']}) from None


@dataclass(frozen=True)
class TaskSpec:
    name: str
    seed: int = 0
    params: dict = field(default_factory=dict, hash=False)
    category: Optional[str] = None

    @property
    def family(self):
        return get_family(self.name)

    @property
    def options(self):
        return self.family.options

    def with_seed(self, seed):
        return replace(self, seed=seed)


def default_specs(seed=0):
    return [TaskSpec(name, seed=seed + i) for i, name in enumerate(IN_DOMAIN + (UNSEEN,))]


def generate_dataset(spec, n=90):
    """``n`` label-balanced examples of ``spec``'s family.

    Gold labels cycle through the options in a seeded random order and inputs
    are rejection-sampled until the family rule yields the wanted label.
    """
    if n < 1:
        raise ContractError(f'generate_dataset needs n >= 1, got {n}')
    family = spec.family
    rng = np.random.default_rng(spec.seed)
    n_options = len(family.options)
    labels = np.resize(np.arange(n_options), n)
    rng.shuffle(labels)
    examples = []
    for i, label in enumerate(labels):
        while True:
            items = family.sample(rng)
            if family.rule(items) == label:
                break
        examples.append(Example(uid=f'{family.name}-{spec.seed}-{i}', family=family.name,
                                items=items, options=family.options, gold=int(label)))
    logger.debug('generated %d %s examples (seed %d)', n, family.name, spec.seed)
    return examples


def label_counts(examples):
    counts = {}
    for ex in examples:
        counts[ex.gold] = counts.get(ex.gold, 0) + 1
    return counts
