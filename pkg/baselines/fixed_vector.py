"""
Fixed task vectors: last-token states extracted once from a demonstration
prompt and injected unchanged for every query of that task.
"""
import logging
from dataclasses import dataclass

import numpy as np

from atv.adapter import DEFAULT_LAMBDA
from numeric.exceptions import ContractError
from numeric.tensor import ParamStore, Tensor
from transformer.model import CURRENT_LAST, InjectionHook, extract_task_vector

logger = logging.getLogger(__name__)

NAMESPACE = 'ftv'


@dataclass
class FixedTaskVector:
    task: str
    vectors: np.ndarray
    provenance: tuple
    lam: float = DEFAULT_LAMBDA
    layers: frozenset = None
    policy: str = CURRENT_LAST

    def hook(self):
        return InjectionHook(lam=self.lam, vectors=Tensor(self.vectors), layers=self.layers,
                             policy=self.policy)

    def injected(self):
        vectors = self.lam * self.vectors
        if self.layers is not None:
            keep = np.zeros(len(vectors), dtype=bool)
            keep[list(self.layers)] = True
            vectors[~keep] = 0.0
        return vectors


def build_fixed_task_vector(model, demonstration, lam=DEFAULT_LAMBDA, task='', layers=None,
                            policy=CURRENT_LAST):
    if not len(demonstration):
        raise ContractError('fixed task vector needs a non-empty demonstration prompt')
    hidden = extract_task_vector(model, demonstration)
    vectors = np.stack([h.data for h in hidden])
    logger.debug('fixed task vector for %r from %d demonstration tokens', task, len(demonstration))
    return FixedTaskVector(task=task, vectors=vectors, provenance=tuple(demonstration), lam=lam,
                           layers=layers, policy=policy)


def to_params(vectors_by_task):
    """``ftv.<task>`` entries for the checkpoint; never trainable."""
    store = ParamStore()
    for task, ftv in sorted(vectors_by_task.items()):
        store.add(f'{NAMESPACE}.{task}', ftv.vectors, trainable=False)
    return store


def from_params(store, lam=DEFAULT_LAMBDA, layers=None, policy=CURRENT_LAST):
    prefix = f'{NAMESPACE}.'
    return {name[len(prefix):]: FixedTaskVector(task=name[len(prefix):], vectors=tensor.data.copy(),
                                                provenance=(), lam=lam, layers=layers, policy=policy)
            for name, tensor in store.items() if name.startswith(prefix)}
