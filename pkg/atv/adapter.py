"""
Adaptive task vectors: a small generator reads the query, its last-layer
last-token state ``v_small`` is expanded by a bias-free linear map into one
vector per backbone layer, and those vectors are injected into the frozen
backbone's last-token hidden states.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from numeric import ops
from numeric.exceptions import ContractError
from numeric.tensor import ParamStore, Tensor
from transformer.config import ModelConfig
from transformer.model import CURRENT_LAST, InjectionHook, forward, init_params

logger = logging.getLogger(__name__)

NAMESPACE = 'atv'
DEFAULT_LAMBDA = 0.001
# per-entry std of the initial injection lam * v_small @ W_exp for a unit-RMS v_small
EXPANSION_INIT = 0.1


def expansion_scale(lam):
    """W_exp lives in units of 1 / lam; the injected lam * W_exp does not depend on lam."""
    return 1.0 / abs(lam) if lam else 1.0


@dataclass
class AtvExpansion:
    """W_exp of shape (d_s, L * d_l); block l is columns [l*d_l, (l+1)*d_l)."""
    weight: Tensor
    n_layers: int
    d_model: int

    @property
    def d_small(self):
        return self.weight.shape[0]

    def block(self, layer):
        if not 0 <= layer < self.n_layers:
            raise ContractError(f'no expansion block for layer {layer}')
        return self.weight.data[:, layer * self.d_model:(layer + 1) * self.d_model]


@dataclass
class AtvAdapter:
    generator: object
    expansion: AtvExpansion
    lam: float = DEFAULT_LAMBDA
    layers: Optional[frozenset] = None
    policy: str = CURRENT_LAST

    def __post_init__(self):
        if self.generator.config.d_model != self.expansion.d_small:
            raise ContractError(
                f'generator hidden size {self.generator.config.d_model} does not match '
                f'expansion input {self.expansion.d_small}')

    @property
    def params(self):
        return ParamStore.merge(self.generator.params, _expansion_store(self.expansion))

    def num_parameters(self):
        return self.generator.num_parameters() + self.expansion.weight.size

    def lr_scales(self):
        """Adam step multipliers: the expansion moves at the configured rate in injection units."""
        return {f'{NAMESPACE}.expansion.weight': expansion_scale(self.lam)}

    def check_target(self, large):
        if (large.config.n_layers, large.config.d_model) != (self.expansion.n_layers, self.expansion.d_model):
            raise ContractError(
                f'expansion targets L={self.expansion.n_layers}, d={self.expansion.d_model}; '
                f'model has L={large.config.n_layers}, d={large.config.d_model}')


def _expansion_store(expansion):
    store = ParamStore()
    store.add(f'{NAMESPACE}.expansion.weight', expansion.weight,
              trainable=expansion.weight.requires_grad)
    return store


def build_adapter(generator_config, large_config, seed, lam=DEFAULT_LAMBDA, layers=None,
                  policy=CURRENT_LAST):
    """Generator weights from ``seed``; W_exp from ``seed + 1``, scaled so that every
    entry of the initial injection has std ``EXPANSION_INIT`` whatever lam is.
    """
    if generator_config.output_head:
        generator_config = ModelConfig(**{**generator_config.to_dict(), 'output_head': False})
    generator = init_params(generator_config, seed, prefix=f'{NAMESPACE}.generator')
    rng = np.random.default_rng(seed + 1)
    d_small = generator_config.d_model
    std = EXPANSION_INIT * expansion_scale(lam) / np.sqrt(d_small)
    weight = Tensor(rng.normal(0.0, std, size=(d_small, large_config.n_layers * large_config.d_model)),
                    requires_grad=True)
    expansion = AtvExpansion(weight, large_config.n_layers, large_config.d_model)
    return AtvAdapter(generator, expansion, lam=lam, layers=layers, policy=policy)


def generate_v_small(adapter, query):
    """Last-layer, last-token hidden state of the generator on the raw query."""
    if not len(query):
        raise ContractError('empty query')
    return forward(adapter.generator, query).hidden[-1]


def expand(adapter, v_small):
    """v_ATV as an (L, d_l) tensor whose row l is ``v_small @ A_l``."""
    v_small = v_small if isinstance(v_small, Tensor) else Tensor(v_small)
    exp = adapter.expansion
    if v_small.shape != (exp.d_small,):
        raise ContractError(f'v_small has shape {v_small.shape}, expected ({exp.d_small},)')
    flat = v_small.reshape(1, exp.d_small) @ exp.weight
    return flat.reshape(exp.n_layers, exp.d_model)


def atv_hook(adapter, query):
    return InjectionHook(lam=adapter.lam, vectors=expand(adapter, generate_v_small(adapter, query)),
                         layers=adapter.layers, policy=adapter.policy)


def steered_forward(adapter, large, query):
    if not large.frozen:
        raise ContractError('the backbone must be frozen before steering')
    adapter.check_target(large)
    return forward(large, query, atv_hook(adapter, query))


def injected_vectors(adapter, query):
    """lam * v^l for every layer as an (L, d_l) array; masked-out layers are 0."""
    vectors = adapter.lam * expand(adapter, generate_v_small(adapter, query)).data
    if adapter.layers is not None:
        keep = np.zeros(adapter.expansion.n_layers, dtype=bool)
        keep[list(adapter.layers)] = True
        vectors[~keep] = 0.0
    return vectors


def rank_profile(adapter, queries):
    """Per layer, singular values of the stacked injections over ``queries``.

    Row l of every query's injection lies in the row space of A_l, so at most
    d_s of these values are non-negligible.
    """
    stacked = np.stack([injected_vectors(adapter, q) for q in queries])
    return [np.linalg.svd(stacked[:, layer, :], compute_uv=False)
            for layer in range(stacked.shape[1])]


def with_layers(adapter, layers):
    return AtvAdapter(adapter.generator, adapter.expansion, lam=adapter.lam, layers=layers,
                      policy=adapter.policy)


def with_lambda(adapter, lam):
    return AtvAdapter(adapter.generator, adapter.expansion, lam=lam, layers=adapter.layers,
                      policy=adapter.policy)


def adapter_from_state(arrays, generator_config, large_config, lam=DEFAULT_LAMBDA, layers=None,
                       policy=CURRENT_LAST):
    adapter = build_adapter(generator_config, large_config, seed=0, lam=lam, layers=layers,
                            policy=policy)
    adapter.params.load_state_dict(arrays)
    return adapter
