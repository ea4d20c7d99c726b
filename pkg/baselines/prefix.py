"""
Prefix-tuning: ``p`` trainable key and value rows per layer, placed before the
content positions and visible to every query.
"""
from dataclasses import dataclass

import numpy as np

from numeric.exceptions import ContractError
from numeric.tensor import ParamStore
from transformer.model import forward

NAMESPACE = 'prefix'


@dataclass
class PrefixAdapter:
    params: ParamStore
    n_layers: int
    d_model: int
    length: int

    def keys(self, layer):
        return self.params[f'{NAMESPACE}.layer{layer}.keys']

    def values(self, layer):
        return self.params[f'{NAMESPACE}.layer{layer}.values']

    def check_target(self, model):
        if (model.config.n_layers, model.config.d_model) != (self.n_layers, self.d_model):
            raise ContractError(
                f'prefix built for L={self.n_layers}, d={self.d_model}; model has '
                f'L={model.config.n_layers}, d={model.config.d_model}')


def init_prefix(config, length=4, seed=0):
    if length < 0:
        raise ContractError(f'prefix length must be >= 0, got {length}')
    rng = np.random.default_rng(seed)
    params = ParamStore()
    for layer in range(config.n_layers if length else 0):
        params.add(f'{NAMESPACE}.layer{layer}.keys', rng.normal(0.0, 0.02, size=(length, config.d_model)))
        params.add(f'{NAMESPACE}.layer{layer}.values', rng.normal(0.0, 0.02, size=(length, config.d_model)))
    return PrefixAdapter(params, config.n_layers, config.d_model, length)


def prefix_forward(model, adapter, tokens, hook=None):
    adapter.check_target(model)
    return forward(model, tokens, hook, prefix=adapter if adapter.length else None)
