"""
Every compared method behind one interface: build it on a frozen backbone,
train it when it has parameters, restore it from a checkpoint, and produce
the prompt, options, hook and adapters used to score one rendered example.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

from atv.adapter import AtvAdapter, adapter_from_state, atv_hook, build_adapter
from atv.training import train_atv
from baselines import fixed_vector
from baselines.fixed_vector import build_fixed_task_vector
from baselines.icl import IclPromptBuilder, icl_prompt
from baselines.lora import LoraAdapter, init_lora
from baselines.prefix import PrefixAdapter, init_prefix
from baselines.training import train_baseline
from numeric.exceptions import ContractError, DataIntegrityError
from numeric.tensor import ParamStore
from tasks.families import TaskSpec
from tasks.splits import (DEMO, TRAIN, build_vocab, interleaved, make_splits, pretraining_corpus,
                          training_items)
from tasks.templates import render_prompt
from tasks.vocab import SPECIALS, Vocab, tokenize
from transformer.model import TransformerModel, init_params
from transformer.training import TrainingReport, pretrain_backbone

from .config import config_from_text

logger = logging.getLogger(__name__)

ZERO_SHOT, ICL, FTV, LORA, PREFIX, ATV = 'zero_shot', 'icl', 'ftv', 'lora', 'prefix', 'atv'
VECTOR_METHODS = (FTV, ATV)

_BACKBONES = {}


@dataclass
class Steering:
    prompt: list
    options: list
    hook: object = None
    adapters: dict = field(default_factory=dict)


@dataclass
class MethodState:
    method: str
    config: object
    seed: int
    vocab: Vocab
    splits: dict
    large: TransformerModel
    atv: Optional[AtvAdapter] = None
    lora: Optional[LoraAdapter] = None
    prefix: Optional[PrefixAdapter] = None
    ftv: dict = field(default_factory=dict)
    icl: Optional[IclPromptBuilder] = None
    demos: dict = field(default_factory=dict)

    @property
    def trainable_params(self):
        if self.method == ATV:
            return self.atv.params
        if self.method == LORA:
            return self.lora.params
        if self.method == PREFIX:
            return self.prefix.params
        if self.method == FTV:
            return fixed_vector.to_params(self.ftv)
        return ParamStore()

    def arrays(self):
        """Everything a checkpoint stores, backbone first."""
        return {**self.large.params.state_dict(), **self.trainable_params.state_dict()}

    def steering(self, example, template_id, prefix_id):
        text, answers = render_prompt(example, template_id, prefix_id)
        query = tokenize(self.vocab, text)
        steering = Steering(prompt=query, options=[self.vocab.encode(a, bos=False) for a in answers])
        if self.method == ICL:
            steering.prompt = tokenize(self.vocab, icl_prompt(self.icl, self.demos[example.family], text))
        elif self.method == FTV:
            steering.hook = self.ftv[example.family].hook()
        elif self.method == ATV:
            steering.hook = atv_hook(self.atv, query)
        elif self.method == LORA:
            steering.adapters = {'lora': self.lora}
        elif self.method == PREFIX and self.prefix.length:
            steering.adapters = {'prefix': self.prefix}
        return steering


def task_specs(config):
    return [TaskSpec(name, seed=i) for i, name in enumerate(config.families)]


def prepare_data(config, seed):
    splits = make_splits(task_specs(config), seed, n_train=config['data.n_train'], n_test=config['data.n_test'],
                         n_demo=max(config['icl.k'], 1))
    return splits, build_vocab(splits)


def _backbone_key(config, vocab, seed):
    keys = sorted(k for k in config.values if k.startswith(('large.', 'pretrain.', 'data.')))
    keys += ['train.weight_decay', 'train.batch_size']
    return (seed, len(vocab), tuple((k, str(config[k])) for k in keys))


def build_backbone(config, vocab, splits, seed):
    """Backbone pretrained on the task corpus (see ``pretraining_corpus``), then frozen.

    Pretrained weights are cached per process so that several methods or
    ladder rungs of one seed share an identical backbone.
    """
    large_config = config.model_config('large', len(vocab))
    key = _backbone_key(config, vocab, seed)
    model = init_params(large_config, seed, prefix='large')
    if key in _BACKBONES:
        model.params.load_state_dict(_BACKBONES[key])
        return model.freeze()
    if config['pretrain.epochs'] > 0:
        corpus = pretraining_corpus(vocab, splits[TRAIN], task_specs(config), seed,
                                    statements=config['pretrain.statements'])
        pretrain_backbone(model, corpus, config.train_config(seed, prefix='pretrain'))
    _BACKBONES[key] = model.params.state_dict()
    return model.freeze()


def clear_backbone_cache():
    _BACKBONES.clear()


def _demonstrations(builder, splits, families):
    pool = splits[TRAIN] + splits[DEMO]
    return {family: builder.demonstrations(pool, family) for family in families}


def build_method(config, seed, large, vocab, splits, method=None):
    method = method or config.method
    if not large.frozen:
        raise ContractError('methods are built on a frozen backbone')
    state = MethodState(method=method, config=config, seed=seed, vocab=vocab, splits=splits,
                        large=large)
    if method in (ICL, FTV):
        state.icl = IclPromptBuilder(k=config['icl.k'], seed=seed)
        state.demos = _demonstrations(state.icl, splits, config.families)
    if method == FTV:
        state.ftv = {
            family: build_fixed_task_vector(
                large, tokenize(vocab, state.icl.demonstration_text(demos)),
                lam=config['ftv.lambda'], task=family)
            for family, demos in state.demos.items()}
    elif method == ATV:
        state.atv = build_adapter(config.model_config('generator', len(vocab)), large.config,
                                  seed=seed + 1, lam=config['atv.lambda'],
                                  layers=config.atv_layers(), policy=config['atv.policy'])
    elif method == LORA:
        state.lora = init_lora(large.config, rank=config['lora.rank'], alpha=config['lora.alpha'],
                               dropout=config['lora.dropout'], seed=seed + 1)
    elif method == PREFIX:
        state.prefix = init_prefix(large.config, length=config['prefix.length'], seed=seed + 1)
    return state


def train_method(state):
    """Trains the method's own parameters; demonstration methods return an empty report."""
    items = training_items(state.vocab, state.splits[TRAIN])
    cfg = state.config.train_config(state.seed)
    if state.method == ATV:
        return train_atv(state.atv, state.large, items, cfg, sampler=interleaved)
    if state.method == LORA:
        return train_baseline(LORA, state.large, items, cfg, state.lora, sampler=interleaved)
    if state.method == PREFIX:
        return train_baseline(PREFIX, state.large, items, cfg, state.prefix, sampler=interleaved)
    logger.info('%s has no trainable parameters', state.method)
    return TrainingReport(method=state.method)


def state_from_checkpoint(checkpoint):
    meta = checkpoint.meta
    try:
        method, seed = meta['method'], int(meta['seed'])
        config = config_from_text(meta['config'])
        vocab = Vocab(meta['vocab'][len(SPECIALS):])
    except KeyError as exc:
        raise DataIntegrityError(f'checkpoint meta lacks {exc}') from None
    splits, rebuilt = prepare_data(config, seed)
    if rebuilt.itos != vocab.itos:
        raise DataIntegrityError('checkpoint vocabulary does not match the regenerated task corpus')
    large = init_params(config.model_config('large', len(vocab)), seed, prefix='large')
    large.params.load_state_dict(checkpoint.subset('large'))
    large.freeze()
    state = MethodState(method=method, config=config, seed=seed, vocab=vocab, splits=splits,
                        large=large)
    if method in (ICL, FTV):
        state.icl = IclPromptBuilder(k=config['icl.k'], seed=seed)
        state.demos = _demonstrations(state.icl, splits, config.families)
    if method == FTV:
        state.ftv = fixed_vector.from_params(
            _store(checkpoint.subset(fixed_vector.NAMESPACE)),
            lam=config['ftv.lambda'])
        missing = set(config.families) - set(state.ftv)
        if missing:
            raise DataIntegrityError(f'checkpoint has no fixed vectors for {sorted(missing)}')
    elif method == ATV:
        state.atv = adapter_from_state(checkpoint.subset('atv'),
                                       config.model_config('generator', len(vocab)), large.config,
                                       lam=config['atv.lambda'], layers=config.atv_layers(),
                                       policy=config['atv.policy'])
    elif method == LORA:
        state.lora = init_lora(large.config, rank=config['lora.rank'], alpha=config['lora.alpha'],
                               dropout=config['lora.dropout'])
        state.lora.params.load_state_dict(checkpoint.subset('lora'))
    elif method == PREFIX:
        state.prefix = init_prefix(large.config, length=config['prefix.length'])
        state.prefix.params.load_state_dict(checkpoint.subset('prefix'))
    return state


def _store(arrays):
    store = ParamStore()
    for name, value in arrays.items():
        store.add(name, value, trainable=False)
    return store
