"""Closed word-level vocabulary over the rendered task corpus."""
import json
import logging

from .templates import NEWLINE

logger = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = '<pad>', '<bos>', '<eos>', '<unk>'
SPECIALS = (PAD, BOS, EOS, UNK)


def split_words(text):
    """Single spaces separate tokens; the newline is a token of its own."""
    return [w for w in text.split(' ') if w]


class Vocab:

    def __init__(self, tokens):
        self.itos = list(SPECIALS) + [t for t in tokens if t not in SPECIALS]
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError('duplicate tokens in vocabulary')

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    @property
    def bos_id(self):
        return self.stoi[BOS]

    @property
    def unk_id(self):
        return self.stoi[UNK]

    @classmethod
    def build(cls, texts):
        seen = {}
        for text in texts:
            for word in split_words(text):
                seen.setdefault(word, None)
        seen.setdefault(NEWLINE, None)
        vocab = cls(sorted(seen))
        logger.debug('built vocabulary of %d tokens', len(vocab))
        return vocab

    def encode(self, text, bos=True):
        ids = [self.stoi.get(w, self.unk_id) for w in split_words(text)]
        return [self.bos_id] + ids if bos else ids

    def decode(self, ids):
        return ' '.join(self.itos[i] for i in ids if self.itos[i] not in (PAD, BOS, EOS))

    def to_json(self):
        return json.dumps({'tokens': self.itos}, indent=1, ensure_ascii=False)

    @classmethod
    def from_json(cls, text):
        return cls(json.loads(text)['tokens'][len(SPECIALS):])


def tokenize(vocab, text):
    """BOS followed by one id per word; unknown words map to UNK."""
    return vocab.encode(text, bos=True)
