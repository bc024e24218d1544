"""Initial alignment: structure-enhanced similarity plus Sinkhorn assignment.

The similarity between two graphs sums feature inner products across
propagation depths 0..L, where depth-l features are the depth-(l-1)
features multiplied by the weighted adjacency.  Powers of the adjacency
are never materialized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linear_sum_assignment

from .errors import KgAlignError

# Row-block size for the similarity products; bounds peak memory at large scale.
BLOCK_ROWS = 2048


@dataclass(frozen=True)
class SinkhornParams:
    temperature: float = 0.05
    iterations: int = 10

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


def _block_product(a, b_t) -> np.ndarray:
    """a @ b_t as a dense f32 matrix, computed in row blocks of `a`."""
    n = a.shape[0]
    m = b_t.shape[1]
    out = np.empty((n, m), dtype=np.float32)
    for start in range(0, n, BLOCK_ROWS):
        stop = min(start + BLOCK_ROWS, n)
        blk = a[start:stop] @ b_t
        if sparse.issparse(blk):
            blk = blk.toarray()
        out[start:stop] = np.asarray(blk, dtype=np.float32)
    return out


def structure_similarity(adj_s, feat_s, adj_t, feat_t, depth: int) -> np.ndarray:
    """Sum over l = 0..depth of (adj_s^l feat_s)(adj_t^l feat_t)^T."""
    if adj_s.shape[0] != feat_s.shape[0] or adj_t.shape[0] != feat_t.shape[0]:
        raise KgAlignError(
            f"adjacency/feature shape mismatch: {adj_s.shape[0]}x{feat_s.shape[0]} "
            f"vs {adj_t.shape[0]}x{feat_t.shape[0]}")
    if feat_s.shape[1] != feat_t.shape[1]:
        raise KgAlignError("feature dimensionality differs between graphs")
    prop_s, prop_t = feat_s, feat_t
    sim = _block_product(prop_s, prop_t.T)
    for _ in range(depth):
        prop_s = adj_s @ prop_s
        prop_t = adj_t @ prop_t
        sim += _block_product(prop_s, prop_t.T)
    return sim


def sinkhorn(profit: np.ndarray, params: SinkhornParams) -> np.ndarray:
    """Temperature-scaled Sinkhorn normalization of a profit matrix.

    exp(profit/tau) is stabilized by per-row max subtraction, then run
    through `iterations` rounds of row-then-column normalization, with a
    final row normalization so rows sum to 1.
    """
    x = np.asarray(profit, dtype=np.float64)
    if not np.isfinite(x).all():
        raise KgAlignError("sinkhorn input contains non-finite values")
    logits = x / params.temperature
    logits = logits - logits.max(axis=1, keepdims=True)
    m = np.exp(logits)
    for _ in range(params.iterations):
        m = _normalize(m, axis=1)
        m = _normalize(m, axis=0)
    m = _normalize(m, axis=1)
    if not np.isfinite(m).all():
        raise KgAlignError("sinkhorn overflowed despite stabilization")
    return m.astype(np.float32)


def _normalize(m: np.ndarray, axis: int) -> np.ndarray:
    sums = m.sum(axis=axis, keepdims=True)
    sums[sums == 0] = 1.0
    m /= sums
    return m


def hungarian(profit: np.ndarray) -> np.ndarray:
    """Maximum-profit one-to-one assignment; entry i is the column of row i."""
    profit = np.asarray(profit, dtype=np.float64)
    rows, cols = linear_sum_assignment(profit, maximize=True)
    out = np.empty(profit.shape[0], dtype=np.int64)
    out[rows] = cols
    return out


def initial_alignments(adj_ent_s, feat_ent_s, adj_ent_t, feat_ent_t,
                       adj_rel_s, feat_rel_s, adj_rel_t, feat_rel_t,
                       depth: int, params: SinkhornParams) -> tuple[np.ndarray, np.ndarray]:
    """Entity- and relation-level Sinkhorn scores from structure-enhanced features."""
    x_ent = sinkhorn(structure_similarity(adj_ent_s, feat_ent_s, adj_ent_t, feat_ent_t, depth), params)
    x_rel = sinkhorn(structure_similarity(adj_rel_s, feat_rel_s, adj_rel_t, feat_rel_t, depth), params)
    return x_ent, x_rel
