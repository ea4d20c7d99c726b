"""
Exact conversions between a per-layer ATV increment ``lam * v @ A`` and a
LoRA increment ``s * x^T @ W_down @ W_up`` on a fixed input x, with the
rank budget r equal to the generator width d_s.
"""
import logging
from dataclasses import dataclass

import numpy as np

from numeric.exceptions import ContractError, DimensionError

from .linalg import row_pseudoinverse, row_svd

logger = logging.getLogger(__name__)


@dataclass
class LoraFactors:
    w_down: np.ndarray
    w_up: np.ndarray
    s: float = 1.0

    def __post_init__(self):
        self.w_down = np.asarray(self.w_down, dtype=np.float64)
        self.w_up = np.asarray(self.w_up, dtype=np.float64)
        if self.w_down.ndim != 2 or self.w_up.ndim != 2:
            raise DimensionError('LoRA factors must be matrices')
        if self.w_down.shape[1] != self.w_up.shape[0]:
            raise DimensionError(
                f'W_down {self.w_down.shape} and W_up {self.w_up.shape} disagree on the rank')
        if self.rank < 1:
            raise ContractError('LoRA rank must be >= 1')

    @property
    def rank(self):
        return self.w_down.shape[1]


@dataclass
class AtvFactors:
    lam: float
    v: np.ndarray
    a: np.ndarray

    @property
    def d_small(self):
        return self.v.size


def lora_increment(x, factors):
    return factors.s * (np.asarray(x) @ factors.w_down) @ factors.w_up


def atv_increment(factors):
    return factors.lam * factors.v @ factors.a


def atv_to_lora(x, v_small, a, lam, tol=None):
    """W_down = x^+ (lam v_small) as a d_l x d_s outer product, W_up = A, s = 1.

    Since x^T x^+ = 1 the LoRA increment on x is exactly lam * v_small @ A.
    """
    v_small = np.asarray(v_small, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if a.shape[0] != v_small.size:
        raise DimensionError(f'A has {a.shape[0]} rows but v_small has {v_small.size} entries')
    pinv = row_pseudoinverse(x, tol)
    if pinv.size != a.shape[1]:
        raise DimensionError(f'x has {pinv.size} entries but A maps to {a.shape[1]}')
    return LoraFactors(w_down=np.outer(pinv, lam * v_small), w_up=a.copy(), s=1.0)


def lora_to_atv(x, factors):
    """lam = |s x^T W_down|, v its direction, A = W_up.

    A zero row gives lam = 0 with v the first standard basis vector; both
    increments are then zero.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size != factors.w_down.shape[0]:
        raise DimensionError(f'x has {x.size} entries, W_down expects {factors.w_down.shape[0]}')
    rowvec = factors.s * x @ factors.w_down
    svd = row_svd(rowvec)
    lam = svd.norm
    v = svd.v_r[:, 0].copy()
    if lam == 0.0:
        logger.debug('lora_to_atv: x^T W_down vanishes, returning the zero increment')
    return AtvFactors(lam=lam, v=v, a=factors.w_up.copy())


def random_atv_instance(rng, d_l, d_s, lam=0.001):
    x = rng.normal(size=d_l)
    v_small = rng.normal(size=d_s)
    a = rng.normal(0.0, 0.02, size=(d_s, d_l))
    return x, v_small, a, lam


def random_lora_instance(rng, d_l, r, s=4.0):
    x = rng.normal(size=d_l)
    factors = LoraFactors(w_down=rng.normal(0.0, 1.0 / np.sqrt(r), size=(d_l, r)),
                          w_up=rng.normal(0.0, 0.02, size=(r, d_l)), s=s)
    return x, factors
