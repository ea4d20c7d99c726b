"""
Run configuration: flat ``key=value`` files with dotted keys, validated by a
Django form before any compute happens.

    method=atv
    seeds=42,100,10
    atv.lambda=0.001
    atv.layers=bottom_third
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from django import forms
from django.conf import settings

from numeric.exceptions import ConfigError
from tasks.families import FAMILIES
from transformer.config import ModelConfig
from transformer.model import POSITION_POLICIES
from transformer.training import TrainConfig

logger = logging.getLogger(__name__)

METHODS = ('zero_shot', 'icl', 'ftv', 'lora', 'prefix', 'atv')
MASK_SPECS = ('all', 'bottom_third', 'middle_third', 'top_third', 'none')


def defaults():
    d = settings.ATVLAB
    return {
        'method': 'atv',
        'seeds': ','.join(str(s) for s in d['SEEDS']),
        'out': 'runs',
        **{f'large.{k}': v for k, v in d['LARGE'].items()},
        **{f'generator.{k}': v for k, v in d['GENERATOR'].items()},
        **{f'train.{k}': v for k, v in d['TRAIN'].items()},
        **{f'pretrain.{k}': v for k, v in d['PRETRAIN'].items()},
        **{f'atv.{k}': v for k, v in d['ATV'].items()},
        **{f'ftv.{k}': v for k, v in d['FTV'].items()},
        **{f'lora.{k}': v for k, v in d['LORA'].items()},
        **{f'prefix.{k}': v for k, v in d['PREFIX'].items()},
        **{f'icl.{k}': v for k, v in d['ICL'].items()},
        'data.families': ','.join(d['DATA']['families']),
        'data.n_train': d['DATA']['n_train'],
        'data.n_test': d['DATA']['n_test'],
        'capacity.ladder': ','.join(str(n) for n in d['CAPACITY_LADDER']),
    }


def parse_kv(text):
    """Dotted ``key=value`` lines; blank lines and ``#`` comments are skipped."""
    values, errors = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith('#'):
            continue
        if '=' not in line:
            errors.setdefault(f'line {lineno}', []).append(f'expected key=value, got {line!r}')
            continue
        key, value = (part.strip() for part in line.split('=', 1))
        if not key:
            errors.setdefault(f'line {lineno}', []).append('empty key')
        elif key in values:
            errors.setdefault(key, []).append(f'set twice (line {lineno})')
        else:
            values[key] = value
    if errors:
        raise ConfigError('malformed config file', errors)
    return values


def _field(key):
    return key.replace('.', '__')


def _key(field_name):
    return field_name.replace('__', '.')


def _int_list(value):
    try:
        return [int(v) for v in str(value).split(',') if v.strip()]
    except ValueError:
        raise forms.ValidationError('expected a comma separated list of integers') from None


def _positive(**kwargs):
    return forms.IntegerField(min_value=1, **kwargs)


class RunConfigForm(forms.Form):
    method = forms.ChoiceField(choices=[(m, m) for m in METHODS])
    seeds = forms.CharField()
    out = forms.CharField()

    large__n_layers = _positive()
    large__d_model = _positive()
    large__n_heads = _positive()
    large__ffn_dim = _positive()
    large__max_seq_len = _positive()
    large__tie_embeddings = forms.BooleanField(required=False)

    generator__n_layers = _positive()
    generator__d_model = _positive()
    generator__n_heads = _positive()
    generator__ffn_dim = _positive()

    train__epochs = _positive()
    train__lr = forms.FloatField(min_value=0.0)
    train__weight_decay = forms.FloatField(min_value=0.0)
    train__batch_size = _positive()
    pretrain__epochs = forms.IntegerField(min_value=0)
    pretrain__lr = forms.FloatField(min_value=0.0)
    pretrain__statements = forms.IntegerField(min_value=0)

    atv__lambda = forms.FloatField()
    atv__layers = forms.CharField()
    atv__policy = forms.ChoiceField(choices=[(p, p) for p in POSITION_POLICIES])
    ftv__lambda = forms.FloatField()
    lora__rank = _positive()
    lora__alpha = forms.FloatField()
    lora__dropout = forms.FloatField(min_value=0.0, max_value=0.99)
    lora__lr = forms.FloatField(min_value=0.0)
    prefix__length = forms.IntegerField(min_value=0)
    icl__k = forms.IntegerField(min_value=0)

    data__families = forms.CharField()
    data__n_train = _positive()
    data__n_test = _positive()
    capacity__ladder = forms.CharField()

    def clean_seeds(self):
        seeds = _int_list(self.cleaned_data['seeds'])
        if not seeds:
            raise forms.ValidationError('at least one seed is required')
        if len(set(seeds)) != len(seeds):
            raise forms.ValidationError('seeds must be distinct')
        return seeds

    def clean_capacity__ladder(self):
        ladder = _int_list(self.cleaned_data['capacity__ladder'])
        if not ladder or any(n < 1 for n in ladder):
            raise forms.ValidationError('ladder entries must be positive widths')
        return ladder

    def clean_data__families(self):
        names = [n.strip() for n in self.cleaned_data['data__families'].split(',') if n.strip()]
        unknown = [n for n in names if n not in FAMILIES]
        if unknown:
            raise forms.ValidationError(f'unknown families: {", ".join(unknown)}')
        if len(names) < 3 or len(set(names)) != len(names):
            raise forms.ValidationError(
                'need at least 2 distinct in-domain families followed by 1 held-out family')
        return names

    def clean(self):
        data = super().clean()
        for model in ('large', 'generator'):
            d, heads = data.get(f'{model}__d_model'), data.get(f'{model}__n_heads')
            if d and heads and d % heads:
                self.add_error(f'{model}__d_model', f'{d} is not divisible by n_heads={heads}')
        n_layers = data.get('large__n_layers')
        mask = data.get('atv__layers')
        if n_layers and mask:
            try:
                data['atv__layers'] = mask_spec_label(mask)
                layer_mask(mask, n_layers)
            except ConfigError as exc:
                self.add_error('atv__layers', str(exc))
        heads = data.get('generator__n_heads')
        for width in data.get('capacity__ladder') or ():
            if heads and width % heads:
                self.add_error('capacity__ladder', f'width {width} is not divisible by n_heads={heads}')
        return data


def mask_spec_label(spec):
    return str(spec).replace(' ', '')


def layer_mask(spec, n_layers):
    """None for every layer, otherwise a frozenset of layer indices.

    Thirds follow ``numpy.array_split`` so that for L = 6 they are {0, 1},
    {2, 3} and {4, 5}. ``none`` is the empty mask.
    """
    spec = mask_spec_label(spec)
    if spec == 'all':
        return None
    if spec == 'none':
        return frozenset()
    thirds = np.array_split(np.arange(n_layers), 3)
    if spec in MASK_SPECS:
        return frozenset(int(l) for l in thirds[MASK_SPECS.index(spec) - 1])
    try:
        layers = frozenset(int(l) for l in spec.split(',') if l)
    except ValueError:
        raise ConfigError(f'layer mask {spec!r} is neither one of {", ".join(MASK_SPECS)} '
                          'nor a list of layer indices') from None
    outside = sorted(l for l in layers if not 0 <= l < n_layers)
    if outside:
        raise ConfigError(f'layers {outside} outside 0..{n_layers - 1}')
    return layers


@dataclass(frozen=True)
class RunConfig:
    values: dict
    source: str = ''
    overrides: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    @property
    def method(self):
        return self.values['method']

    @property
    def seeds(self):
        return list(self.values['seeds'])

    @property
    def families(self):
        return list(self.values['data.families'])

    def model_config(self, which, vocab_size):
        extra = {'output_head': False} if which == 'generator' else {
            'tie_embeddings': self.values['large.tie_embeddings']}
        return ModelConfig(
            n_layers=self.values[f'{which}.n_layers'],
            d_model=self.values[f'{which}.d_model'],
            n_heads=self.values[f'{which}.n_heads'],
            ffn_dim=self.values[f'{which}.ffn_dim'],
            vocab_size=vocab_size,
            max_seq_len=self.values['large.max_seq_len'],
            **extra)

    def train_config(self, seed, prefix='train'):
        if prefix == 'pretrain':
            return TrainConfig(epochs=self.values['pretrain.epochs'], lr=self.values['pretrain.lr'],
                               weight_decay=self.values['train.weight_decay'],
                               batch_size=self.values['train.batch_size'], seed=seed)
        lr = self.values['lora.lr'] if self.method == 'lora' else self.values['train.lr']
        return TrainConfig(epochs=self.values['train.epochs'], lr=lr,
                           weight_decay=self.values['train.weight_decay'],
                           batch_size=self.values['train.batch_size'], seed=seed)

    def atv_layers(self):
        return layer_mask(self.values['atv.layers'], self.values['large.n_layers'])

    def with_values(self, **changes):
        values = dict(self.values)
        values.update({_key(k): v for k, v in changes.items()})
        return RunConfig(values, self.source, self.overrides)

    def to_text(self, exclude=()):
        """The resolved configuration, one sorted ``key=value`` per line."""
        lines = []
        for key in sorted(k for k in self.values if k not in exclude):
            value = self.values[key]
            if isinstance(value, (list, tuple)):
                value = ','.join(str(v) for v in value)
            lines.append(f'{key}={value}')
        return '\n'.join(lines) + '\n'

    def to_json(self):
        return json.dumps(self.values, sort_keys=True)


def validate(raw):
    unknown = sorted(k for k in raw if _field(k) not in RunConfigForm.base_fields)
    if unknown:
        raise ConfigError('unknown config keys', {k: ['not a recognised key'] for k in unknown})
    merged = {**defaults(), **raw}
    form = RunConfigForm(data={_field(k): v for k, v in merged.items()})
    if not form.is_valid():
        errors = {_key(name): [str(m) for m in messages] for name, messages in form.errors.items()}
        raise ConfigError('invalid run config', errors)
    return {_key(name): value for name, value in form.cleaned_data.items()}


def load_run_config(path=None, text=None, overrides=None):
    """Parse and validate a config file (or its text) plus CLI overrides."""
    if text is None:
        if path is None:
            text = ''
        else:
            try:
                text = Path(path).read_text(encoding='utf-8')
            except OSError as exc:
                raise ConfigError(f'cannot read config {path}', {'config': [str(exc)]}) from exc
    raw = parse_kv(text)
    overrides = {k: str(v) for k, v in (overrides or {}).items()}
    config = RunConfig(validate({**raw, **overrides}), source=text, overrides=overrides)
    logger.debug('loaded run config %s', config.to_json())
    return config


def config_from_text(resolved_text):
    return load_run_config(text=resolved_text)
