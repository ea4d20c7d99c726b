"""
Randomised numerical verification of the ATV/LoRA equivalence and of the
prefix-containment decomposition. Every trial draws from
``default_rng([seed, trial])`` so a failing trial can be replayed alone.
"""
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from numeric.exceptions import DegenerateInputError, DimensionError

from .attention import (decompose_atv_attention, full_steered_attention,
                        leave_one_out_residuals, prefix_linear, term_roles)
from .conversions import (AtvFactors, atv_increment, atv_to_lora, lora_increment, lora_to_atv,
                          random_atv_instance, random_lora_instance)
from .linalg import numerical_rank, project_to_rank, rel_err, tail_ratio

logger = logging.getLogger(__name__)

EQUIVALENCE_TOL = 1e-8
DECOMPOSITION_TOL = 1e-10
CONTAINMENT_TOL = 1e-12
RANK_TOL = 1e-10
WITNESS_RATIO = 1e-6

THEOREM1_DIMS = {'d_l': 64, 'd_s': 8}
THEOREM2_DIMS = {'T': 6, 'm': 5, 'd_l': 16}


@dataclass
class CheckRecord:
    trial: int
    check: str
    max_rel_err: float
    passed: bool

    def to_dict(self):
        data = asdict(self)
        data['pass'] = data.pop('passed')
        return data


@dataclass
class VerificationReport:
    name: str
    seed: int
    trials: int
    dims: dict
    records: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def add(self, trial, check, err, passed):
        record = CheckRecord(trial, check, float(err), bool(passed))
        self.records.append(record)
        if not record.passed:
            logger.warning('%s trial %d: %s failed (rel. err %.3e)', self.name, trial, check, err)
        return record

    @property
    def failures(self):
        return [r for r in self.records if not r.passed]

    @property
    def passed(self):
        return not self.failures

    def max_rel_err(self, checks=None):
        errs = [r.max_rel_err for r in self.records if checks is None or r.check in checks]
        return max(errs, default=0.0)

    def to_dict(self):
        return {
            'name': self.name,
            'seed': self.seed,
            'trials': self.trials,
            'dims': self.dims,
            'passed': self.passed,
            'failures': len(self.failures),
            'records': [r.to_dict() for r in self.records],
            **self.extra,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _trial_rng(seed, trial):
    return np.random.default_rng([seed, trial])


def _check_dims(name, dims, keys):
    bad = {k: dims.get(k) for k in keys
           if not isinstance(dims.get(k), (int, np.integer)) or dims[k] < 1}
    if bad:
        raise DimensionError(f'{name}: dims must be positive integers, got {bad}')


def verify_theorem1(trials=100, seed=42, dims=None, tol=EQUIVALENCE_TOL):
    """ATV -> LoRA and LoRA -> ATV on random instances with r = d_s.

    Per trial: both conversions reproduce the increment, the round trip
    preserves the original ATV increment, and a batch of LoRA increments has
    numerical rank <= r. A batch of ATV increments over many queries is
    reproduced exactly by its rank-d_s projection, and its rank-(d_s // 2)
    projection leaves exactly the tail singular energy, the part a smaller
    LoRA budget cannot match. Trial 0 additionally checks that x = 0 is rejected.
    """
    dims = {**THEOREM1_DIMS, **(dims or {})}
    _check_dims('theorem1', dims, ('d_l', 'd_s'))
    d_l, d_s = dims['d_l'], dims['d_s']
    if d_s > d_l:
        raise DimensionError(f'theorem1 needs d_s <= d_l, got d_s={d_s}, d_l={d_l}')
    report = VerificationReport('theorem1', seed, trials, dims, extra={'tol': tol})
    for trial in range(trials):
        rng = _trial_rng(seed, trial)
        x, v_small, a, lam = random_atv_instance(rng, d_l, d_s)
        target = atv_increment(AtvFactors(lam, v_small, a))
        lora = atv_to_lora(x, v_small, a, lam)
        err = rel_err(lora_increment(x, lora), target)
        report.add(trial, 'atv_to_lora', err, err <= tol)

        back = lora_to_atv(x, lora)
        err = rel_err(atv_increment(back), target)
        report.add(trial, 'round_trip', err, err <= tol)

        x2, factors = random_lora_instance(rng, d_l, d_s)
        atv = lora_to_atv(x2, factors)
        err = rel_err(atv_increment(atv), lora_increment(x2, factors))
        unit = abs(np.linalg.norm(atv.v) - 1.0)
        report.add(trial, 'lora_to_atv', max(err, unit), err <= tol and unit <= 1e-12)

        batch = rng.normal(size=(2 * d_s + 1, d_l))
        ratio = tail_ratio(lora_increment(batch, factors), d_s)
        report.add(trial, 'rank_bound', ratio, ratio <= RANK_TOL)

        increments = lam * rng.normal(size=(2 * d_s, d_s)) @ a
        err = rel_err(project_to_rank(increments, d_s), increments)
        report.add(trial, 'rank_projection', err, err <= tol)
        budget = d_s // 2
        truncated = project_to_rank(increments, budget)
        sigma = np.linalg.svd(increments, compute_uv=False)
        gap = abs(np.linalg.norm(increments - truncated) - np.sqrt(np.sum(sigma[budget:] ** 2)))
        gap /= np.linalg.norm(increments)
        report.add(trial, 'truncated_projection', gap,
                   gap <= tol and numerical_rank(truncated) <= budget)

        if trial == 0:
            try:
                atv_to_lora(np.zeros(d_l), v_small, a, lam)
            except DegenerateInputError:
                report.add(trial, 'degenerate_rejected', 0.0, True)
            else:
                report.add(trial, 'degenerate_rejected', 1.0, False)
    logger.info('theorem1: %d trials, max rel. err %.3e, %d failures', trials,
                report.max_rel_err({'atv_to_lora', 'round_trip', 'lora_to_atv'}),
                len(report.failures))
    return report


def verify_theorem2(trials=100, seed=42, dims=None):
    """Per trial: (a) the eight terms sum to the full product, (b) T1 + T2 is
    prefix attention with the steered rows as prefix, (c) the cross terms do
    not vanish for a generic vector. The last trial uses v = 0 and checks
    that everything but T1 vanishes exactly instead of (c).
    """
    dims = {**THEOREM2_DIMS, **(dims or {})}
    _check_dims('theorem2', dims, ('T', 'm', 'd_l'))
    t, m, d_l = dims['T'], dims['m'], dims['d_l']
    report = VerificationReport('theorem2', seed, trials, dims, extra={'term_roles': term_roles()})
    for trial in range(trials):
        rng = _trial_rng(seed, trial)
        x = rng.normal(size=(t, d_l))
        c = rng.normal(size=(m, d_l))
        w_q, w_k, w_v = (rng.normal(0.0, 1.0 / np.sqrt(d_l), size=(d_l, d_l)) for _ in range(3))
        null_trial = trials > 1 and trial == trials - 1
        v_atv = np.zeros(d_l) if null_trial else rng.normal(size=d_l)

        dec = decompose_atv_attention(x, c, v_atv, w_q, w_k, w_v)
        full = full_steered_attention(x, c, v_atv, w_q, w_k, w_v)
        err = rel_err(dec.total(), full)
        report.add(trial, 'decomposition', err, err <= DECOMPOSITION_TOL)

        err = rel_err(dec.prefix_part(), prefix_linear(x, c, dec.p_k, dec.p_v, w_q, w_k, w_v))
        report.add(trial, 'prefix_containment', err, err <= CONTAINMENT_TOL)

        if null_trial:
            rest = max(float(np.abs(dec[name]).max()) for name in dec.terms if name != 'T1')
            report.add(trial, 'null_vector', rest, rest == 0.0)
            continue
        base = np.linalg.norm(dec['T1'])
        ratio = np.linalg.norm(dec.delta_cross) / base if base else np.inf
        report.add(trial, 'cross_witness', ratio, ratio > WITNESS_RATIO)
        residuals = leave_one_out_residuals(dec, full)
        smallest = min(residuals.values())
        report.add(trial, 'leave_one_out', smallest, smallest > 0.0)
    logger.info('theorem2: %d trials, %d failures', trials, len(report.failures))
    return report
