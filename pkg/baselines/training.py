import logging

from numeric.exceptions import ContractError
from transformer.scoring import answer_loss
from transformer.training import fit, shuffled

from .lora import LoraAdapter
from .prefix import PrefixAdapter

logger = logging.getLogger(__name__)

LORA = 'lora'
PREFIX = 'prefix'
KINDS = (LORA, PREFIX)


def baseline_loss(kind, model, adapter, prompt, answer, rng=None):
    if kind == LORA:
        return answer_loss(model, prompt, answer, lora=adapter, training=True, rng=rng)
    return answer_loss(model, prompt, answer, prefix=adapter if adapter.length else None)


def train_baseline(kind, model, dataset, cfg, adapter, sampler=shuffled):
    """Same loop and answer-only loss as ATV training, over the adapter's parameters.

    LoRA runs with its dropout active. The learning rate is ``cfg.lr``; run configs
    take it from ``lora.lr``.
    """
    if kind not in KINDS:
        raise ContractError(f'unknown baseline {kind!r}; trainable baselines are {", ".join(KINDS)}')
    expected = LoraAdapter if kind == LORA else PrefixAdapter
    if not isinstance(adapter, expected):
        raise ContractError(f'{kind} training needs a {expected.__name__}')
    if not model.frozen:
        raise ContractError(f'train_baseline({kind}) requires a frozen base model')
    adapter.check_target(model)
    if not dataset:
        raise ContractError(f'train_baseline({kind}): empty dataset')
    report = fit(adapter.params,
                 lambda item, rng: baseline_loss(kind, model, adapter, item[0], item[1], rng),
                 dataset, cfg, method=kind, frozen=model.params, sampler=sampler)
    if report.steps:
        logger.info('%s trained for %d steps, loss reduced by %.1f%%', kind, report.steps,
                    100 * report.reduction())
    return report
