"""
Option-scoring evaluation over every template x answer-prefix variant, with
the per-example prediction log every accuracy can be recomputed from.
"""
import csv
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from numeric.exceptions import DataIntegrityError
from tasks.splits import EVAL_SPLITS
from tasks.templates import template_group, template_set
from transformer.scoring import predict

logger = logging.getLogger(__name__)

ROW_FIELDS = ('method', 'family', 'split', 'template_id', 'prefix_id', 'seed', 'n', 'accuracy',
              'mean_prompt_tokens')


@dataclass
class EvalRow:
    method: str
    family: str
    split: str
    template_id: int
    prefix_id: int
    seed: int
    n: int
    accuracy: float
    mean_prompt_tokens: float

    @property
    def template_group(self):
        return template_group(self.template_id)


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    predictions: list = field(default_factory=list)

    def extend(self, other):
        self.rows += other.rows
        self.predictions += other.predictions
        return self

    def pooled_accuracy(self, **filters):
        """Equal-weight mean of the matching per-variant accuracies."""
        rows = [r for r in self.rows if all(getattr(r, k) == v for k, v in filters.items())]
        if not rows:
            return float('nan')
        return float(np.mean([r.accuracy for r in rows]))

    def write_csv(self, path):
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f)
            writer.writerow(ROW_FIELDS)
            for row in self.rows:
                writer.writerow([getattr(row, name) for name in ROW_FIELDS])

    def write_predictions(self, path):
        with open(path, 'w', encoding='utf-8') as f:
            for record in self.predictions:
                f.write(json.dumps(record, sort_keys=True) + '\n')


def check_splits(state, split_names):
    missing = [s for s in split_names if s not in state.splits or not state.splits[s]]
    if missing:
        raise DataIntegrityError(f'no such evaluation split: {", ".join(missing)}; '
                                 f'available: {", ".join(EVAL_SPLITS)}')


def evaluate(state, split_names=EVAL_SPLITS, variants=None):
    """One row per (family, split, template, prefix) of ``state``'s method."""
    split_names = list(split_names)
    check_splits(state, split_names)
    report = EvalReport()
    for split in split_names:
        by_family = defaultdict(list)
        for ex in state.splits[split]:
            by_family[ex.family].append(ex)
        for family, examples in sorted(by_family.items()):
            for template_id, prefix_id in variants or template_set(family).variants():
                correct, tokens = 0, []
                for ex in examples:
                    steering = state.steering(ex, template_id, prefix_id)
                    pred, scores = predict(state.large, steering.prompt, steering.options,
                                           steering.hook, **steering.adapters)
                    correct += int(pred == ex.gold)
                    tokens.append(len(steering.prompt))
                    report.predictions.append({
                        'method': state.method, 'seed': state.seed, 'split': split,
                        'family': family, 'uid': ex.uid, 'template_id': template_id,
                        'prefix_id': prefix_id, 'gold': ex.gold, 'pred': pred,
                        'scores': scores, 'prompt_tokens': len(steering.prompt),
                    })
                report.rows.append(EvalRow(
                    method=state.method, family=family, split=split, template_id=template_id,
                    prefix_id=prefix_id, seed=state.seed, n=len(examples),
                    accuracy=correct / len(examples), mean_prompt_tokens=float(np.mean(tokens))))
        logger.info('%s seed %d on %s: pooled accuracy %.3f', state.method, state.seed, split,
                    report.pooled_accuracy(split=split))
    return report


def accuracy_from_predictions(predictions):
    """Rebuild (method, family, split, template, prefix, seed) -> accuracy from the log."""
    hits = defaultdict(list)
    for p in predictions:
        key = (p['method'], p['family'], p['split'], p['template_id'], p['prefix_id'], p['seed'])
        hits[key].append(p['pred'] == p['gold'])
    return {key: sum(v) / len(v) for key, v in hits.items()}


def summarize(report):
    """Mean and std over seeds of the pooled accuracy per (method, split, template group)."""
    per_seed = defaultdict(list)
    for row in report.rows:
        per_seed[(row.method, row.split, row.template_group, row.seed)].append(row.accuracy)
    grouped = defaultdict(list)
    for (method, split, group, seed), accs in sorted(per_seed.items()):
        grouped[(method, split, group)].append(float(np.mean(accs)))
    return [{'method': m, 'split': s, 'template_group': g, 'seeds': len(accs),
             'mean': float(np.mean(accs)), 'std': float(np.std(accs))}
            for (m, s, g), accs in sorted(grouped.items())]


def _finite_mean(values):
    values = [v for v in values if not np.isnan(v)]
    return float(np.mean(values)) if values else float('nan')


def comparison_table(report, methods=('lora', 'atv')):
    """In-domain, unseen-task and average accuracy per method, mean over seeds."""
    rows = []
    for method in methods:
        seeds = sorted({r.seed for r in report.rows if r.method == method})
        if not seeds:
            continue
        in_domain = [report.pooled_accuracy(method=method, seed=s, split=split)
                     for s in seeds for split in EVAL_SPLITS[:2]]
        unseen = [report.pooled_accuracy(method=method, seed=s, split=EVAL_SPLITS[2]) for s in seeds]
        in_domain, unseen = _finite_mean(in_domain), _finite_mean(unseen)
        rows.append({'method': method, 'in_domain': in_domain, 'unseen': unseen,
                     'average': _finite_mean([in_domain, unseen])})
    return rows


def write_dict_rows(path, rows, fields=None):
    fields = fields or (list(rows[0]) if rows else [])
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
