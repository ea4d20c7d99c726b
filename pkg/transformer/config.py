from dataclasses import asdict, dataclass

from numeric.exceptions import ConfigError


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int
    d_model: int
    n_heads: int
    ffn_dim: int
    vocab_size: int
    max_seq_len: int
    tie_embeddings: bool = False
    output_head: bool = True

    def __post_init__(self):
        errors = {}
        for name in ('n_layers', 'd_model', 'n_heads', 'ffn_dim', 'vocab_size', 'max_seq_len'):
            if getattr(self, name) <= 0:
                errors[name] = ['must be positive']
        if not errors and self.d_model % self.n_heads:
            errors['n_heads'] = [f'must divide d_model={self.d_model}']
        if errors:
            raise ConfigError('invalid model config', errors)

    @property
    def head_dim(self):
        return self.d_model // self.n_heads

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)
