import logging

from numeric.exceptions import ContractError
from transformer.scoring import answer_loss
from transformer.training import fit, shuffled

from .adapter import atv_hook

logger = logging.getLogger(__name__)


def atv_loss(adapter, large, prompt, answer):
    """Cross-entropy of the answer tokens under the query's own injection."""
    return answer_loss(large, prompt, answer, atv_hook(adapter, prompt))


def train_atv(adapter, large, dataset, cfg, sampler=shuffled):
    """Jointly train the generator and expansion; the backbone stays frozen.

    ``dataset`` holds (prompt tokens, answer tokens) pairs.
    """
    if not large.frozen:
        raise ContractError('train_atv requires a frozen backbone')
    adapter.check_target(large)
    if not dataset:
        raise ContractError('train_atv: empty dataset')
    report = fit(adapter.params, lambda item, rng: atv_loss(adapter, large, item[0], item[1]),
                 dataset, cfg, method='atv', frozen=large.params, sampler=sampler,
                 lr_scales=adapter.lr_scales())
    logger.info('atv trained for %d steps, loss reduced by %.1f%%', report.steps,
                100 * report.reduction())
    return report
