from dataclasses import dataclass, field

import numpy as np

from .exceptions import ContractError


@dataclass
class AdamState:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-5
    t: int = 0
    # parameter name -> multiplier of lr
    lr_scales: dict = field(default_factory=dict)
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(store, state):
    """One Adam update with decoupled weight decay, then clear gradients.

    Frozen entries of ``store`` are never touched.
    """
    params = store.trainable()
    missing = [name for name, tensor in params if tensor.grad is None]
    if missing:
        raise ContractError(f'no gradient for trainable parameters: {", ".join(missing)}')

    state.t += 1
    correction1 = 1.0 - state.beta1 ** state.t
    correction2 = 1.0 - state.beta2 ** state.t
    for name, tensor in params:
        grad = tensor.grad
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(tensor.data)
            v = np.zeros_like(tensor.data)
        if m.shape != tensor.shape:
            raise ContractError(f'{name}: optimizer moments {m.shape} do not match {tensor.shape}')
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.m[name], state.v[name] = m, v
        m_hat = m / correction1
        v_hat = v / correction2
        update = m_hat / (np.sqrt(v_hat) + state.eps)
        if state.weight_decay:
            update = update + state.weight_decay * tensor.data
        tensor.data = tensor.data - state.lr * state.lr_scales.get(name, 1.0) * update
        tensor.grad = None
