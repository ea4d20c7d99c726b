"""
LoRA on the query and value projections of every attention layer:
``x W + (alpha / r) * dropout(x) W_down W_up`` with W_up starting at zero.
"""
from dataclasses import dataclass

import numpy as np

from numeric import ops
from numeric.exceptions import ContractError
from numeric.tensor import ParamStore
from transformer.model import forward

NAMESPACE = 'lora'
TARGETS = ('q', 'v')


@dataclass
class LoraAdapter:
    params: ParamStore
    n_layers: int
    d_model: int
    rank: int = 8
    alpha: float = 32.0
    dropout: float = 0.05

    @property
    def scale(self):
        return self.alpha / self.rank

    def down(self, layer, which):
        return self.params[f'{NAMESPACE}.layer{layer}.{which}.down']

    def up(self, layer, which):
        return self.params[f'{NAMESPACE}.layer{layer}.{which}.up']

    def delta(self, layer, which, x, training=False, rng=None):
        if which not in TARGETS:
            return None
        x = ops.dropout(x, self.dropout, rng, training)
        return ops.scale((x @ self.down(layer, which)) @ self.up(layer, which), self.scale)

    def check_target(self, model):
        if (model.config.n_layers, model.config.d_model) != (self.n_layers, self.d_model):
            raise ContractError(
                f'LoRA built for L={self.n_layers}, d={self.d_model}; model has '
                f'L={model.config.n_layers}, d={model.config.d_model}')


def init_lora(config, rank=8, alpha=32.0, dropout=0.05, seed=0):
    """W_down ~ N(0, 1/r) per entry, W_up = 0, so the adapted model starts as the base."""
    if rank < 1:
        raise ContractError(f'LoRA rank must be >= 1, got {rank}')
    rng = np.random.default_rng(seed)
    params = ParamStore()
    d = config.d_model
    for layer in range(config.n_layers):
        for which in TARGETS:
            params.add(f'{NAMESPACE}.layer{layer}.{which}.down',
                       rng.normal(0.0, 1.0 / np.sqrt(rank), size=(d, rank)))
            params.add(f'{NAMESPACE}.layer{layer}.{which}.up', np.zeros((rank, d)))
    return LoraAdapter(params, config.n_layers, d, rank=rank, alpha=alpha, dropout=dropout)


def lora_forward(model, adapter, tokens, hook=None, training=False, rng=None):
    adapter.check_target(model)
    if training and adapter.dropout > 0 and rng is None:
        raise ContractError('LoRA dropout in training mode needs an rng')
    return forward(model, tokens, hook, lora=adapter, training=training, rng=rng)
