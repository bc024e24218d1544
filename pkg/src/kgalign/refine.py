"""Iterative score refinement by 1-hop neighbor triple matching.

Each iteration mixes the previous score of a candidate pair with a
softmax-weighted aggregate over all pairs of neighbor triples, where the
weights come from the other alignment level (relation scores for entity
pairs, entity scores for relation pairs).  Candidate pairs are the top-C
columns per row, rebuilt every iteration; everything else just decays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import KgAlignError
from .graph import KnowledgeGraph
from .scores import top_k_columns

NeighborArrays = list[tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class RefinementParams:
    lam: float = 0.5
    iterations: int = 2
    candidates: int = 50
    hub_cap: int = 64

    def __post_init__(self):
        if not 0 < self.lam <= 1:
            raise ValueError("lam must be in (0, 1]")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.candidates < 1:
            raise ValueError("candidates must be >= 1")
        if self.hub_cap < 1:
            raise ValueError("hub_cap must be >= 1")


def neighbor_arrays(kg: KnowledgeGraph, rel_weights, hub_cap: int) -> NeighborArrays:
    """Per node: (relation ids, neighbor ids) of its reverse-augmented triples,
    sorted by descending inverse-frequency weight and truncated to hub_cap."""
    tables = []
    for e in range(kg.num_entities):
        trips = sorted(kg.neighbor_triples(e),
                       key=lambda t: (-rel_weights[t.relation], t.relation, t.tail))
        trips = trips[:hub_cap]
        tables.append((np.array([t.relation for t in trips], dtype=np.int64),
                       np.array([t.tail for t in trips], dtype=np.int64)))
    return tables


def build_candidates(scores: np.ndarray, per_row: int) -> list[np.ndarray]:
    """Top-`per_row` columns of each row; ties broken by lower column id."""
    if scores.shape[1] == 0:
        raise KgAlignError("cannot build candidates: score matrix has no columns")
    return [top_k_columns(scores[i], per_row) for i in range(scores.shape[0])]


def _refine_level(level_prev: np.ndarray, other_prev: np.ndarray,
                  nbrs_src: NeighborArrays, nbrs_tgt: NeighborArrays,
                  lam: float, cand: list[np.ndarray]) -> np.ndarray:
    new = (lam * level_prev).astype(np.float32)
    level64 = level_prev.astype(np.float64)
    other64 = other_prev.astype(np.float64)
    for i, cols in enumerate(cand):
        ps, i2 = nbrs_src[i]
        if ps.size == 0:
            new[i, cols] = level_prev[i, cols]
            continue
        for j in cols:
            qs, j2 = nbrs_tgt[j]
            if qs.size == 0:
                new[i, j] = level_prev[i, j]
                continue
            w = np.exp(other64[np.ix_(ps, qs)])
            agg = (w * level64[np.ix_(i2, j2)]).sum() / w.sum()
            new[i, j] = lam * level64[i, j] + (1.0 - lam) * agg
    return new


def refine_step(s_ent: np.ndarray, s_rel: np.ndarray,
                nbr_ent_s: NeighborArrays, nbr_ent_t: NeighborArrays,
                nbr_rel_s: NeighborArrays, nbr_rel_t: NeighborArrays,
                lam: float, cand_ent: list[np.ndarray],
                cand_rel: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """One fusion iteration; both outputs read only the previous matrices."""
    if lam == 1.0:
        return s_ent.copy(), s_rel.copy()
    new_ent = _refine_level(s_ent, s_rel, nbr_ent_s, nbr_ent_t, lam, cand_ent)
    new_rel = _refine_level(s_rel, s_ent, nbr_rel_s, nbr_rel_t, lam, cand_rel)
    return new_ent, new_rel


def refine(x_ent: np.ndarray, x_rel: np.ndarray,
           nbr_ent_s: NeighborArrays, nbr_ent_t: NeighborArrays,
           nbr_rel_s: NeighborArrays, nbr_rel_t: NeighborArrays,
           params: RefinementParams, sinkhorn_params) -> tuple[np.ndarray, np.ndarray]:
    """N refinement iterations followed by a Sinkhorn pass on both levels."""
    from .assign import sinkhorn

    s_ent = np.array(x_ent, dtype=np.float32)
    s_rel = np.array(x_rel, dtype=np.float32)
    for _ in range(params.iterations):
        cand_ent = build_candidates(s_ent, params.candidates)
        cand_rel = build_candidates(s_rel, params.candidates)
        s_ent, s_rel = refine_step(s_ent, s_rel, nbr_ent_s, nbr_ent_t,
                                   nbr_rel_s, nbr_rel_t, params.lam,
                                   cand_ent, cand_rel)
    return sinkhorn(s_ent, sinkhorn_params), sinkhorn(s_rel, sinkhorn_params)
