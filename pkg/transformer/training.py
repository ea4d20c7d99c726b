"""
The optimisation loop shared by every trainable method, plus language-model
pretraining of the backbone.
"""
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from numeric import ops
from numeric.exceptions import ConfigError, ContractError
from numeric.optim import AdamState, adam_step
from numeric.tensor import backward

from .model import forward

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    lr: float = 5e-4
    weight_decay: float = 1e-5
    batch_size: int = 1
    seed: int = 42

    def __post_init__(self):
        errors = {}
        if self.epochs <= 0:
            errors['epochs'] = ['must be positive']
        if self.lr <= 0:
            errors['lr'] = ['must be positive']
        if self.weight_decay < 0:
            errors['weight_decay'] = ['must not be negative']
        if self.batch_size <= 0:
            errors['batch_size'] = ['must be positive']
        if errors:
            raise ConfigError('invalid train config', errors)

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainingReport:
    method: str
    epoch_losses: list = field(default_factory=list)
    steps: int = 0

    def reduction(self):
        """Relative drop of the last epoch's mean loss against the first."""
        if len(self.epoch_losses) < 2 or self.epoch_losses[0] == 0:
            return 0.0
        return 1.0 - self.epoch_losses[-1] / self.epoch_losses[0]


def shuffled(items, rng):
    return [items[i] for i in rng.permutation(len(items))]


def fit(trainable, example_loss, items, cfg, method, frozen=None, sampler=shuffled,
        lr_scales=None):
    """Minimise the mean of ``example_loss(item, rng)`` over ``items`` with Adam.

    Only ``trainable`` is updated. Every parameter of ``frozen`` is checked
    after each backward pass and must have received no gradient. ``lr_scales``
    multiplies the learning rate of the named parameters.
    """
    items = list(items)
    if not items:
        raise ContractError(f'{method}: empty training set')
    report = TrainingReport(method=method)
    if not trainable.trainable():
        logger.info('%s: no trainable parameters, nothing to fit', method)
        return report

    rng = np.random.default_rng(cfg.seed)
    state = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay, lr_scales=dict(lr_scales or {}))
    for epoch in range(cfg.epochs):
        order = sampler(items, rng)
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            trainable.zero_grad()
            loss = example_loss(batch[0], rng)
            for item in batch[1:]:
                loss = loss + example_loss(item, rng)
            if len(batch) > 1:
                loss = ops.scale(loss, 1.0 / len(batch))
            losses.append(loss.item())
            if not loss.requires_grad:
                # the loss never reached a trainable parameter (e.g. lam = 0)
                continue
            backward(loss)
            if frozen is not None:
                leaked = [n for n, t in frozen.items() if t.grad is not None and np.any(t.grad)]
                if leaked:
                    raise ContractError(f'{method}: frozen parameters received gradient: {leaked[:3]}')
            adam_step(trainable, state)
            report.steps += 1
        report.epoch_losses.append(float(np.mean(losses)))
        logger.info('%s epoch %d/%d mean loss %.6f', method, epoch + 1, cfg.epochs,
                    report.epoch_losses[-1])
    return report


def lm_loss(model, tokens):
    logits = forward(model, tokens).logits
    return ops.cross_entropy(logits[0:len(tokens) - 1], tokens[1:])


def pretrain_backbone(model, sequences, cfg):
    """Next-token training of ``model`` on token sequences of length >= 2."""
    sequences = [list(s) for s in sequences if len(s) >= 2]
    if model.frozen:
        raise ContractError('cannot pretrain a frozen model')
    return fit(model.params, lambda seq, rng: lm_loss(model, seq), sequences, cfg,
               method='pretrain')
