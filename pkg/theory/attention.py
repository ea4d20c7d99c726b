"""
Linear attention ``Attn(Q, K, V) ~ Q K^T V`` and the exact eight-term
expansion of attention over a last-token-steered input.

With P'_q = e_T v^T W_q, P'_k = e_m v^T W_k and P'_v = e_m v^T W_v the
steered product ``(xW_q + P'_q)(CW_k + P'_k)^T (CW_v + P'_v)`` splits into
T1 (base) and T2 (prefix-style) plus six cross terms T3..T8.
"""
from dataclasses import dataclass

import numpy as np

from numeric.exceptions import DimensionError

TERM_NAMES = ('T1', 'T2', 'T3', 'T4', 'T5', 'T6', 'T7', 'T8')
PREFIX_TERMS = ('T1', 'T2')
CROSS_TERMS = TERM_NAMES[2:]


def _matrix(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f'{name} must be a matrix, got shape {a.shape}')
    return a


def linear_attn(q, k, v):
    q, k, v = _matrix(q, 'Q'), _matrix(k, 'K'), _matrix(v, 'V')
    if q.shape[1] != k.shape[1]:
        raise DimensionError(f'Q {q.shape} and K {k.shape} disagree on the key width')
    if k.shape[0] != v.shape[0]:
        raise DimensionError(f'K {k.shape} and V {v.shape} disagree on the number of slots')
    return q @ k.T @ v


def prefix_linear(x, c, p_k, p_v, w_q, w_k, w_v):
    """x W_q P_k^T P_v + x W_q (C W_k)^T C W_v."""
    x, c = _matrix(x, 'x'), _matrix(c, 'C')
    q = x @ w_q
    return linear_attn(q, p_k, p_v) + linear_attn(q, c @ w_k, c @ w_v)


def basis_column(n):
    e = np.zeros((n, 1))
    if n:
        e[-1, 0] = 1.0
    return e


@dataclass
class TermDecomposition:
    terms: dict
    p_q: np.ndarray
    p_k: np.ndarray
    p_v: np.ndarray

    def __getitem__(self, name):
        return self.terms[name]

    def total(self):
        return sum(self.terms[name] for name in TERM_NAMES)

    def prefix_part(self):
        return self.terms['T1'] + self.terms['T2']

    @property
    def delta_cross(self):
        return sum(self.terms[name] for name in CROSS_TERMS)


def steered_inputs(x, c, v_atv):
    x, c = _matrix(x, 'x'), _matrix(c, 'C')
    v_atv = np.asarray(v_atv, dtype=np.float64).reshape(1, -1)
    return x + basis_column(x.shape[0]) @ v_atv, c + basis_column(c.shape[0]) @ v_atv


def full_steered_attention(x, c, v_atv, w_q, w_k, w_v):
    x_s, c_s = steered_inputs(x, c, v_atv)
    return linear_attn(x_s @ w_q, c_s @ w_k, c_s @ w_v)


def decompose_atv_attention(x, c, v_atv, w_q, w_k, w_v):
    x, c = _matrix(x, 'x'), _matrix(c, 'C')
    v_atv = np.asarray(v_atv, dtype=np.float64).reshape(1, -1)
    if v_atv.shape[1] != x.shape[1] or c.shape[1] != x.shape[1]:
        raise DimensionError(
            f'x {x.shape}, C {c.shape} and v {v_atv.shape} must share the hidden width')
    q, k, v = x @ w_q, c @ w_k, c @ w_v
    p_q = basis_column(x.shape[0]) @ v_atv @ w_q
    p_k = basis_column(c.shape[0]) @ v_atv @ w_k
    p_v = basis_column(c.shape[0]) @ v_atv @ w_v
    terms = {
        'T1': q @ k.T @ v,
        'T2': q @ p_k.T @ p_v,
        'T3': q @ p_k.T @ v,
        'T4': q @ k.T @ p_v,
        'T5': p_q @ k.T @ v,
        'T6': p_q @ p_k.T @ v,
        'T7': p_q @ k.T @ p_v,
        'T8': p_q @ p_k.T @ p_v,
    }
    return TermDecomposition(terms=terms, p_q=p_q, p_k=p_k, p_v=p_v)


def term_roles():
    """What each term does and whether prefix-tuning can produce it."""
    return [
        {'term': 'T1', 'role': 'base attention of the frozen model', 'prefix_representable': True},
        {'term': 'T2', 'role': 'query reads prefix keys and values only', 'prefix_representable': True},
        {'term': 'T3', 'role': 'prefix key reweights content values', 'prefix_representable': False},
        {'term': 'T4', 'role': 'content keys select a prefix value', 'prefix_representable': False},
        {'term': 'T5', 'role': 'shifted query over content keys and values',
         'prefix_representable': False},
        {'term': 'T6', 'role': 'shifted query and prefix key over content values',
         'prefix_representable': False},
        {'term': 'T7', 'role': 'shifted query, content keys, prefix value',
         'prefix_representable': False},
        {'term': 'T8', 'role': 'fully synthetic query, key and value path',
         'prefix_representable': False},
    ]


def leave_one_out_residuals(decomposition, full):
    """Per term, |full - (sum of the other seven)| / |full|."""
    full = np.asarray(full, dtype=np.float64)
    total = decomposition.total()
    scale = np.linalg.norm(full) or 1.0
    return {name: float(np.linalg.norm(full - (total - decomposition[name])) / scale)
            for name in TERM_NAMES}
