"""
Decoder-only post-LN transformer used both as the frozen backbone and as the
small trainable generator.

A layer computes ``h~ = LN(h + Attn(h))`` then ``h = LN(h~ + MLP(h~))``. The
per-layer hidden state that is captured (and, when a hook is active, injected
into) is that second layer-norm output at the last position.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from numeric import ops
from numeric.exceptions import CapacityError, ContractError
from numeric.tensor import ParamStore, Tensor

from .config import ModelConfig

logger = logging.getLogger(__name__)

CURRENT_LAST = 'current_last'
PROMPT_FINAL = 'prompt_final'
POSITION_POLICIES = (CURRENT_LAST, PROMPT_FINAL)

INIT_STD = 0.02


@dataclass
class InjectionHook:
    """Adds ``lam * vectors[l]`` to the injected position's state at layer l.

    ``vectors`` is an (L, d) tensor or a per-layer sequence (entries may be
    None); ``layers`` of None means every layer.
    """
    lam: float
    vectors: object
    layers: Optional[frozenset] = None
    policy: str = CURRENT_LAST
    anchor: Optional[int] = None

    def active_layers(self, n_layers):
        if self.lam == 0.0:
            return frozenset()
        layers = frozenset(range(n_layers)) if self.layers is None else self.layers
        return frozenset(l for l in layers if self._vector(l) is not None)

    def _vector(self, layer):
        if isinstance(self.vectors, Tensor):
            return self.vectors
        return self.vectors[layer]

    def vector(self, layer):
        if isinstance(self.vectors, Tensor):
            return self.vectors[layer]
        vec = self.vectors[layer]
        return vec if isinstance(vec, Tensor) else Tensor(vec)

    def row(self, length):
        if self.policy == PROMPT_FINAL and self.anchor is not None:
            return self.anchor
        return length - 1

    def validate(self, config):
        if self.policy not in POSITION_POLICIES:
            raise ContractError(f'unknown position policy {self.policy!r}')
        if self.layers is not None:
            outside = sorted(l for l in self.layers if not 0 <= l < config.n_layers)
            if outside:
                raise ContractError(f'layer mask {outside} outside 0..{config.n_layers - 1}')
        if isinstance(self.vectors, Tensor):
            if self.vectors.shape != (config.n_layers, config.d_model):
                raise ContractError(
                    f'hook vectors {self.vectors.shape} do not match '
                    f'({config.n_layers}, {config.d_model})')
            return
        if len(self.vectors) != config.n_layers:
            raise ContractError(f'hook has {len(self.vectors)} vectors for {config.n_layers} layers')
        for layer, vec in enumerate(self.vectors):
            if vec is not None and np.shape(getattr(vec, 'data', vec)) != (config.d_model,):
                raise ContractError(
                    f'hook vector for layer {layer} has shape '
                    f'{np.shape(getattr(vec, "data", vec))}, expected ({config.d_model},)')


@dataclass
class ForwardTrace:
    hidden: list
    logits: Optional[Tensor] = None
    attention: list = field(default_factory=list)


class TransformerModel:

    def __init__(self, config, params, prefix):
        self.config = config
        self.params = params
        self.prefix = prefix

    def __repr__(self):
        return f'TransformerModel({self.prefix!r}, layers={self.config.n_layers}, d={self.config.d_model})'

    def p(self, name):
        return self.params[f'{self.prefix}.{name}']

    @property
    def frozen(self):
        return self.params.is_frozen()

    def freeze(self):
        self.params.freeze()
        return self

    def num_parameters(self):
        return self.params.num_parameters()


def _param_shapes(config):
    d, f = config.d_model, config.ffn_dim
    shapes = {
        'tok_emb': (config.vocab_size, d),
        'pos_emb': (config.max_seq_len, d),
    }
    for l in range(config.n_layers):
        layer = f'layer{l}'
        for name in ('wq', 'wk', 'wv', 'wo'):
            shapes[f'{layer}.{name}'] = (d, d)
        shapes[f'{layer}.ln1.gain'] = (d,)
        shapes[f'{layer}.ln1.bias'] = (d,)
        shapes[f'{layer}.mlp.w1'] = (d, f)
        shapes[f'{layer}.mlp.b1'] = (f,)
        shapes[f'{layer}.mlp.w2'] = (f, d)
        shapes[f'{layer}.mlp.b2'] = (d,)
        shapes[f'{layer}.ln2.gain'] = (d,)
        shapes[f'{layer}.ln2.bias'] = (d,)
    if config.output_head and not config.tie_embeddings:
        shapes['lm_head'] = (d, config.vocab_size)
    return shapes


def init_params(config, seed, prefix='large', trainable=True):
    """Weights ~ N(0, 0.02^2); biases 0; layer-norm gains 1."""
    rng = np.random.default_rng(seed)
    params = ParamStore()
    for name, shape in _param_shapes(config).items():
        if name.endswith('.gain'):
            value = np.ones(shape)
        elif name.endswith('.bias') or name.endswith('.b1') or name.endswith('.b2'):
            value = np.zeros(shape)
        else:
            value = rng.normal(0.0, INIT_STD, size=shape)
        params.add(f'{prefix}.{name}', value, trainable=trainable)
    return TransformerModel(config, params, prefix)


def freeze(model):
    return model.freeze()


def causal_mask(length, n_prefix=0):
    visible = np.tril(np.ones((length, length), dtype=bool))
    if n_prefix:
        visible = np.concatenate([np.ones((length, n_prefix), dtype=bool), visible], axis=1)
    return visible


def _check_tokens(config, tokens):
    if not tokens:
        raise ContractError('empty token sequence')
    if len(tokens) > config.max_seq_len:
        raise CapacityError(f'sequence of {len(tokens)} tokens exceeds max_seq_len={config.max_seq_len}')
    bad = [t for t in tokens if not 0 <= t < config.vocab_size]
    if bad:
        raise ContractError(f'token ids {bad[:5]} outside vocabulary of {config.vocab_size}')


def forward(model, tokens, hook=None, *, lora=None, prefix=None, training=False, rng=None):
    """Causal forward pass with optional last-token injection and adapters.

    ``lora`` supplies ``delta(layer, which, x, training, rng)`` for the query and
    value projections; ``prefix`` supplies ``length`` and per-layer
    ``keys(layer)`` / ``values(layer)``.
    """
    config = model.config
    tokens = [int(t) for t in tokens]
    _check_tokens(config, tokens)
    T = len(tokens)

    inject_layers = frozenset()
    row = T - 1
    if hook is not None:
        hook.validate(config)
        inject_layers = hook.active_layers(config.n_layers)
        row = hook.row(T)
        if not 0 <= row < T:
            raise ContractError(f'injection position {row} outside sequence of {T}')

    n_prefix = prefix.length if prefix is not None else 0
    mask = causal_mask(T, n_prefix)

    x = model.p('tok_emb')[tokens] + model.p('pos_emb')[0:T]
    hidden = []
    attention = []
    for l in range(config.n_layers):
        layer = f'layer{l}'
        q = x @ model.p(f'{layer}.wq')
        k = x @ model.p(f'{layer}.wk')
        v = x @ model.p(f'{layer}.wv')
        if lora is not None:
            dq = lora.delta(l, 'q', x, training, rng)
            dv = lora.delta(l, 'v', x, training, rng)
            if dq is not None:
                q = q + dq
            if dv is not None:
                v = v + dv
        if n_prefix:
            k = ops.concat([prefix.keys(l), k])
            v = ops.concat([prefix.values(l), v])
        attended, weights = ops.multi_head_attention(q, k, v, config.n_heads, mask)
        attention.append(weights)
        x = ops.layer_norm(x + attended @ model.p(f'{layer}.wo'),
                           model.p(f'{layer}.ln1.gain'), model.p(f'{layer}.ln1.bias'))
        mlp = ops.gelu(x @ model.p(f'{layer}.mlp.w1') + model.p(f'{layer}.mlp.b1'))
        mlp = mlp @ model.p(f'{layer}.mlp.w2') + model.p(f'{layer}.mlp.b2')
        x = ops.layer_norm(x + mlp, model.p(f'{layer}.ln2.gain'), model.p(f'{layer}.ln2.bias'))
        if l in inject_layers:
            x = ops.add_row(x, row, ops.scale(hook.vector(l), hook.lam))
        hidden.append(x[T - 1])

    logits = None
    if config.output_head:
        head = model.p('tok_emb').T if config.tie_embeddings else model.p('lm_head')
        logits = x @ head
    return ForwardTrace(hidden=hidden, logits=logits, attention=attention)


def extract_task_vector(model, tokens):
    """Last-token hidden state of every layer from an uninjected pass."""
    if not len(tokens):
        raise ContractError('cannot extract a task vector from an empty prompt')
    return forward(model, tokens).hidden
