import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ContractError
from .tensor import backward

logger = logging.getLogger(__name__)


@dataclass
class GradCheckReport:
    max_rel_err: float
    tolerance: float
    per_leaf: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.max_rel_err <= self.tolerance


def _rel_err(analytic, numeric):
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / denom)


def grad_check(build_loss, leaves, tolerance=1e-5, step=1e-5):
    """Compare tape gradients against central finite differences.

    ``build_loss`` rebuilds the graph from the current leaf values and returns a
    scalar tensor; ``leaves`` maps a name to each leaf under test.
    """
    leaves = dict(leaves)
    if not any(t.requires_grad for t in leaves.values()):
        raise ContractError('grad_check needs at least one trainable leaf')
    for tensor in leaves.values():
        tensor.grad = None
    backward(build_loss())

    report = GradCheckReport(max_rel_err=0.0, tolerance=tolerance)
    for name, tensor in leaves.items():
        if not tensor.requires_grad:
            continue
        analytic = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        numeric = np.zeros_like(tensor.data)
        flat = tensor.data.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            plus = build_loss().item()
            flat[i] = original - step
            minus = build_loss().item()
            flat[i] = original
            numeric.reshape(-1)[i] = (plus - minus) / (2.0 * step)
        err = _rel_err(analytic, numeric)
        report.per_leaf[name] = err
        report.max_rel_err = max(report.max_rel_err, err)
        tensor.grad = None
    if not report.passed:
        logger.warning('grad check failed: max relative error %.3e > %.1e',
                       report.max_rel_err, tolerance)
    return report
