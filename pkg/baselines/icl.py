"""In-context learning prompts built from k training-split demonstrations."""
from dataclasses import dataclass

import numpy as np

from numeric.exceptions import DataIntegrityError
from tasks.splits import DEMO, TRAIN
from tasks.templates import SEP, render_demonstration
from tasks.vocab import tokenize

DEMO_SOURCES = (TRAIN, DEMO)


@dataclass(frozen=True)
class IclPromptBuilder:
    k: int = 4
    separator: str = SEP
    seed: int = 0

    def demonstrations(self, pool, family):
        """``k`` examples of ``family`` drawn from ``pool`` with the builder's seed."""
        candidates = [ex for ex in pool if ex.family == family]
        foreign = [ex.uid for ex in candidates if ex.split not in DEMO_SOURCES]
        if foreign:
            raise DataIntegrityError(f'demonstrations must come from the training split: {foreign[:3]}')
        if len(candidates) < self.k:
            raise DataIntegrityError(
                f'{family}: need {self.k} demonstrations, only {len(candidates)} available')
        rng = np.random.default_rng(self.seed)
        picked = rng.choice(len(candidates), size=self.k, replace=False)
        return [candidates[i] for i in sorted(picked)]

    def demonstration_text(self, demos):
        return self.separator.join(render_demonstration(ex) for ex in demos)


def icl_prompt(builder, demos, query_prompt):
    if not demos:
        return query_prompt
    return builder.separator.join([builder.demonstration_text(demos), query_prompt])


def icl_token_count(vocab, builder, demos, query_prompt):
    return len(tokenize(vocab, icl_prompt(builder, demos, query_prompt)))
