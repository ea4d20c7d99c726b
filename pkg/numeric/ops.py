"""
Differentiable operations on ``Tensor``.

Each op computes its output with numpy and hands ``make_result`` a closure that
maps the upstream gradient to one gradient per input (``None`` for inputs that
need none).
"""
import math

import numpy as np

from .exceptions import ContractError, DimensionError
from .tensor import Tensor, as_tensor, make_result

LAYER_NORM_EPS = 1e-5


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f'{op}: shapes {a.shape} and {b.shape} do not broadcast') from None


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('add', a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result('add', a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('sub', a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result('sub', a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('mul', a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_result('mul', a.data * b.data, (a, b), backward)


def scale(a, factor):
    a = as_tensor(a)
    factor = float(factor)

    def backward(g):
        return (g * factor,)

    return make_result('scale', a.data * factor, (a,), backward)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f'matmul: cannot multiply {a.shape} by {b.shape}')

    def backward(g):
        grad_a = g @ b.data.T if a.requires_grad else None
        grad_b = a.data.T @ g if b.requires_grad else None
        return grad_a, grad_b

    return make_result('matmul', a.data @ b.data, (a, b), backward)


def transpose(a):
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise DimensionError(f'transpose needs a matrix, got shape {a.shape}')

    def backward(g):
        return (g.T,)

    return make_result('transpose', a.data.T.copy(), (a,), backward)


def reshape(a, shape):
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.size:
        raise DimensionError(f'reshape: cannot view {a.shape} as {shape}')

    def backward(g):
        return (g.reshape(a.shape),)

    return make_result('reshape', a.data.reshape(shape).copy(), (a,), backward)


def index(a, key):
    """Row/element selection, also used as an embedding lookup."""
    a = as_tensor(a)
    if isinstance(key, (list, tuple)) and all(isinstance(k, (int, np.integer)) for k in key):
        key = np.asarray(key, dtype=np.int64)
    try:
        data = a.data[key]
    except IndexError as exc:
        raise DimensionError(f'index: {exc} for shape {a.shape}') from None

    def backward(g):
        grad = np.zeros_like(a.data)
        np.add.at(grad, key, g)
        return (grad,)

    return make_result('index', np.array(data, dtype=np.float64), (a,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError('concat needs at least one tensor')
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f'concat: {exc}') from None
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(
            np.take(g, np.arange(start, stop), axis=axis) for start, stop in zip(bounds[:-1], bounds[1:]))

    return make_result('concat', data, tuple(tensors), backward)


def add_row(h, row, v):
    """``h`` with ``v`` added to a single row: h + e_row v^T."""
    h, v = as_tensor(h), as_tensor(v)
    if h.data.ndim != 2 or v.shape != (h.shape[1],):
        raise DimensionError(f'add_row: cannot add {v.shape} to a row of {h.shape}')
    data = h.data.copy()
    data[row] += v.data

    def backward(g):
        return g, g[row].copy()

    return make_result('add_row', data, (h, v), backward)


def total(a):
    a = as_tensor(a)

    def backward(g):
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_result('sum', np.array(a.data.sum()), (a,), backward)


def mean(a):
    return scale(total(a), 1.0 / as_tensor(a).size)


def _masked(x, mask):
    if mask is None:
        return x
    return np.where(mask, x, -np.inf)


def softmax_rows(a, mask=None):
    """Row softmax with max-shift. ``mask`` (bool, same shape) hides entries."""
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise DimensionError(f'softmax_rows needs a matrix, got shape {a.shape}')
    x = _masked(a.data, mask)
    x = x - x.max(axis=1, keepdims=True)
    e = np.exp(x)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return make_result('softmax_rows', out, (a,), backward)


def log_softmax_rows(a):
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise DimensionError(f'log_softmax_rows needs a matrix, got shape {a.shape}')
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=1, keepdims=True),)

    return make_result('log_softmax_rows', out, (a,), backward)


def layer_norm(x, gain, bias, eps=LAYER_NORM_EPS):
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(
            f'layer_norm: last extent {d} does not match gain {gain.shape} / bias {bias.shape}')
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    normed = centered * inv_std

    def backward(g):
        g_norm = g * gain.data
        grad_x = inv_std * (
            g_norm - g_norm.mean(axis=-1, keepdims=True)
            - normed * (g_norm * normed).mean(axis=-1, keepdims=True))
        reduce_axes = tuple(range(g.ndim - 1))
        return grad_x, (g * normed).sum(axis=reduce_axes), g.sum(axis=reduce_axes)

    return make_result('layer_norm', normed * gain.data + bias.data, (x, gain, bias), backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x):
    """tanh approximation, as in GPT-2."""
    x = as_tensor(x)
    u = _GELU_C * (x.data + 0.044715 * x.data ** 3)
    t = np.tanh(u)
    out = 0.5 * x.data * (1.0 + t)

    def backward(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x.data ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t ** 2) * du),)

    return make_result('gelu', out, (x,), backward)


def dropout(x, rate, rng, training):
    """Inverted dropout; the identity outside training."""
    x = as_tensor(x)
    if not training or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, Tensor(keep))


def cross_entropy(logits, targets):
    """Mean over rows of -log softmax(logits)[target]."""
    logits = as_tensor(logits)
    targets = np.asarray(list(targets), dtype=np.int64)
    if logits.data.ndim != 2 or targets.shape != (logits.shape[0],):
        raise DimensionError(
            f'cross_entropy: logits {logits.shape} vs {targets.shape[0]} targets')
    vocab = logits.shape[1]
    if np.any(targets < 0) or np.any(targets >= vocab):
        raise IndexError(f'cross_entropy: target index out of range for {vocab} classes')
    rows = np.arange(len(targets))
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    loss = -log_probs[rows, targets].mean()

    def backward(g):
        grad = np.exp(log_probs)
        grad[rows, targets] -= 1.0
        return (grad * (g / len(targets)),)

    return make_result('cross_entropy', np.array(loss), (logits,), backward)


def multi_head_attention(q, k, v, n_heads, mask=None):
    """Scaled dot-product attention split over heads.

    q is (T, d); k and v are (S, d); ``mask`` is a (T, S) boolean array of
    visible slots. Returns the (T, d) output and the (heads, T, S) weights,
    the latter as a plain array.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    T, d = q.shape
    S = k.shape[0]
    if k.shape != (S, d) or v.shape != (S, d) or d % n_heads:
        raise DimensionError(
            f'attention: q {q.shape}, k {k.shape}, v {v.shape} with {n_heads} heads')
    dk = d // n_heads
    factor = 1.0 / math.sqrt(dk)
    q_h = q.data.reshape(T, n_heads, dk)
    k_h = k.data.reshape(S, n_heads, dk)
    v_h = v.data.reshape(S, n_heads, dk)
    scores = np.einsum('thd,shd->hts', q_h, k_h) * factor
    if mask is not None:
        scores = np.where(mask[None, :, :], scores, -np.inf)
    scores = scores - scores.max(axis=2, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=2, keepdims=True)
    out = np.einsum('hts,shd->thd', weights, v_h).reshape(T, d)

    def backward(g):
        g_h = g.reshape(T, n_heads, dk)
        grad_w = np.einsum('thd,shd->hts', g_h, v_h)
        grad_scores = weights * (grad_w - (weights * grad_w).sum(axis=2, keepdims=True))
        grad_q = factor * np.einsum('hts,shd->thd', grad_scores, k_h)
        grad_k = factor * np.einsum('hts,thd->shd', grad_scores, q_h)
        grad_v = np.einsum('hts,thd->shd', weights, g_h)
        return grad_q.reshape(T, d), grad_k.reshape(S, d), grad_v.reshape(S, d)

    return make_result('attention', out, (q, k, v), backward), weights
