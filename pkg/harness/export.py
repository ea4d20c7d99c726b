"""
Injected-vector export: the per-layer norm profile and per-query vectors with
a two-dimensional PCA projection.
"""
import csv
import logging
from dataclasses import dataclass

import numpy as np

from atv.adapter import injected_vectors
from numeric.exceptions import ContractError
from tasks.templates import render_training
from tasks.vocab import tokenize

from .methods import ATV, VECTOR_METHODS

logger = logging.getLogger(__name__)


@dataclass
class QueryVectors:
    uids: list
    families: list
    vectors: np.ndarray

    @property
    def flat(self):
        return self.vectors.reshape(len(self.uids), -1)


def query_vectors(state, examples):
    """lam * v^l for each example's training-template rendering, shape (n, L, d)."""
    if state.method not in VECTOR_METHODS:
        raise ContractError(f'vector export needs an ATV or fixed-vector checkpoint, got {state.method!r}')
    stacked = []
    for ex in examples:
        if state.method == ATV:
            stacked.append(injected_vectors(state.atv, tokenize(state.vocab, render_training(ex)[0])))
        else:
            stacked.append(state.ftv[ex.family].injected())
    return QueryVectors(uids=[ex.uid for ex in examples], families=[ex.family for ex in examples],
                        vectors=np.stack(stacked))


def norm_profile(qv, method):
    norms = np.linalg.norm(qv.vectors, axis=2)
    return [{'layer': layer, 'mean_l2': float(norms[:, layer].mean()),
             'std_l2': float(norms[:, layer].std()), 'method': method}
            for layer in range(norms.shape[1])]


def pca_2d(matrix):
    """Projection onto the top two principal axes; each axis' largest loading is positive."""
    matrix = np.asarray(matrix, dtype=np.float64)
    centered = matrix - matrix.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    axes = np.zeros((2, matrix.shape[1]))
    k = min(2, vt.shape[0])
    axes[:k] = vt[:k]
    for axis in axes:
        pivot = np.argmax(np.abs(axis))
        if axis[pivot] < 0:
            axis *= -1
    return centered @ axes.T


def within_family_variance(qv):
    """Total per-coordinate variance of the flattened vectors inside each family."""
    flat = qv.flat
    families = np.array(qv.families)
    return {family: float(flat[families == family].var(axis=0).sum())
            for family in sorted(set(qv.families))}


def write_exports(qv, method, out_dir):
    out_dir.mkdir(parents=True, exist_ok=True)
    profile = norm_profile(qv, method)
    with open(out_dir / 'norm_profile.csv', 'w', newline='', encoding='utf-8') as f:
        writer = csv.DictWriter(f, fieldnames=['layer', 'mean_l2', 'std_l2', 'method'])
        writer.writeheader()
        writer.writerows(profile)
    flat = qv.flat
    with open(out_dir / 'vectors.csv', 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(['uid', 'family'] + [f'v{i}' for i in range(flat.shape[1])])
        for uid, family, row in zip(qv.uids, qv.families, flat):
            writer.writerow([uid, family] + [repr(float(x)) for x in row])
    coords = pca_2d(flat)
    with open(out_dir / 'pca.csv', 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(['uid', 'family', 'method', 'pc1', 'pc2'])
        for uid, family, (pc1, pc2) in zip(qv.uids, qv.families, coords):
            writer.writerow([uid, family, method, repr(float(pc1)), repr(float(pc2))])
    logger.info('exported %d %s vectors to %s', len(qv.uids), method, out_dir)
    return profile, coords

