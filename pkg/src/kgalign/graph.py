"""Knowledge-graph model: triple stores, dual graphs, weighted adjacency.

Entity and relation ids are dense 0-based integers, independent per graph.
All structures are immutable after construction and safe to share across
threads.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy import sparse

from .errors import DataFormatError

DUAL_PAIR_CAP = 32


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


class KnowledgeGraph:
    """A directed triple store with per-entity in/out indexes.

    Duplicate triples are removed at construction; otherwise triple order
    is preserved.
    """

    def __init__(self, entity_names: Sequence[str], relation_names: Sequence[str],
                 triples: Sequence[Triple], name: str = ""):
        self.name = name
        self.entity_names = list(entity_names)
        self.relation_names = list(relation_names)
        seen = set()
        kept = []
        for t in triples:
            t = Triple(*t)
            if t in seen:
                continue
            seen.add(t)
            kept.append(t)
        self.triples = kept
        n_ent, n_rel = len(self.entity_names), len(self.relation_names)
        self.out_index: list[list[int]] = [[] for _ in range(n_ent)]
        self.in_index: list[list[int]] = [[] for _ in range(n_ent)]
        for idx, (h, r, t) in enumerate(self.triples):
            if not (0 <= h < n_ent and 0 <= t < n_ent):
                raise DataFormatError(f"triple {idx} references entity outside [0, {n_ent})")
            if not (0 <= r < n_rel):
                raise DataFormatError(f"triple {idx} references relation outside [0, {n_rel})")
            self.out_index[h].append(idx)
            self.in_index[t].append(idx)
        self._augmented: list[Triple] | None = None
        self._neighbors: list[list[Triple]] | None = None

    @property
    def num_entities(self) -> int:
        return len(self.entity_names)

    @property
    def num_relations(self) -> int:
        return len(self.relation_names)

    @property
    def num_triples(self) -> int:
        return len(self.triples)

    def relation_counts(self) -> list[int]:
        """Number of triples per relation id."""
        counts = [0] * self.num_relations
        for _, r, _ in self.triples:
            counts[r] += 1
        return counts

    def augmented_triples(self) -> list[Triple]:
        if self._augmented is None:
            self._augmented = reverse_augment(self)
        return self._augmented

    def neighbor_triples(self, entity: int) -> list[Triple]:
        """All reverse-augmented triples with `entity` as head, in stable order."""
        if self._neighbors is None:
            buckets: list[list[Triple]] = [[] for _ in range(self.num_entities)]
            for t in self.augmented_triples():
                buckets[t.head].append(t)
            self._neighbors = buckets
        return self._neighbors[entity]


def reverse_augment(kg: KnowledgeGraph) -> list[Triple]:
    """T' = T plus every (t, r, h) for (h, r, t) in T, deduplicated."""
    seen = set(kg.triples)
    out = list(kg.triples)
    for h, r, t in kg.triples:
        rev = Triple(t, r, h)
        if rev not in seen:
            seen.add(rev)
            out.append(rev)
    return out


def _read_lines(path: Path) -> list[str]:
    if not path.exists():
        raise DataFormatError(f"missing file: {path}")
    return path.read_text(encoding="utf-8").splitlines()


def _load_name_file(path: Path) -> tuple[list[str], dict[int, int]]:
    """Read `<id>\\t<name>` lines; remap possibly sparse ids to dense ones."""
    names = []
    id_map: dict[int, int] = {}
    for lineno, line in enumerate(_read_lines(path), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataFormatError(f"{path}:{lineno}: expected 2 tab-separated columns, got {len(parts)}")
        try:
            raw_id = int(parts[0])
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: non-integer id {parts[0]!r}") from None
        if raw_id in id_map:
            raise DataFormatError(f"{path}:{lineno}: duplicate id {raw_id}")
        id_map[raw_id] = len(names)
        names.append(parts[1])
    return names, id_map


def load_kg(entity_name_file, relation_name_file, triple_file, name: str = "") -> KnowledgeGraph:
    """Load a DBP15K/OpenEA-layout graph, remapping ids to dense ones.

    The raw-to-dense id maps are kept on the returned graph as
    ``entity_id_map`` / ``relation_id_map``.
    """
    ent_names, ent_map = _load_name_file(Path(entity_name_file))
    rel_names, rel_map = _load_name_file(Path(relation_name_file))
    triples = []
    tpath = Path(triple_file)
    for lineno, line in enumerate(_read_lines(tpath), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataFormatError(f"{tpath}:{lineno}: expected 3 tab-separated columns, got {len(parts)}")
        try:
            h, r, t = (int(p) for p in parts)
        except ValueError:
            raise DataFormatError(f"{tpath}:{lineno}: non-integer id in {line!r}") from None
        for raw, table, kind in ((h, ent_map, "entity"), (r, rel_map, "relation"), (t, ent_map, "entity")):
            if raw not in table:
                raise DataFormatError(f"{tpath}:{lineno}: unknown {kind} id {raw}")
        triples.append(Triple(ent_map[h], rel_map[r], ent_map[t]))
    kg = KnowledgeGraph(ent_names, rel_names, triples, name=name)
    kg.entity_id_map = ent_map
    kg.relation_id_map = rel_map
    return kg


def build_dual(kg: KnowledgeGraph, pair_cap: int = DUAL_PAIR_CAP) -> KnowledgeGraph:
    """Derive the graph whose nodes are relations and edge labels are entities.

    For every entity e, each unordered pair {r, r'} of relations incident to e
    (in either direction) yields the two symmetric dual triples (r, e, r') and
    (r', e, r).  A self-pair (r, e, r) is emitted only when r has at least two
    distinct incident triples at e.  Hub entities contribute at most
    `pair_cap` relations, keeping the lowest-frequency ones.
    """
    counts = kg.relation_counts()
    # incident[e][r] = number of triples touching e with relation r
    incident: list[Counter] = [Counter() for _ in range(kg.num_entities)]
    for h, r, t in kg.triples:
        incident[h][r] += 1
        if t != h:
            incident[t][r] += 1
    dual_triples = []
    for e in range(kg.num_entities):
        rels = sorted(incident[e], key=lambda r: (counts[r], r))
        if len(rels) > pair_cap:
            rels = rels[:pair_cap]
        for a_idx, r in enumerate(rels):
            if incident[e][r] >= 2:
                dual_triples.append(Triple(r, e, r))
            for r2 in rels[a_idx + 1:]:
                dual_triples.append(Triple(r, e, r2))
                dual_triples.append(Triple(r2, e, r))
    return KnowledgeGraph(kg.relation_names, kg.entity_names, dual_triples,
                          name=f"dual({kg.name})" if kg.name else "dual")


def build_adjacency(kg: KnowledgeGraph, pooled_triple_count: int,
                    per_relation_counts: Sequence[int]) -> sparse.csr_matrix:
    """Row-normalized inverse-frequency adjacency.

    Entry (i, j) sums log(|T| / |T_r|) over the set of relations connecting
    i and j in either direction, divided by the same sum over all neighbors
    of i.  Rows of isolated nodes are zero.
    """
    weights = []
    for r, cnt in enumerate(per_relation_counts):
        if cnt == 0:
            weights.append(0.0)
        else:
            weights.append(math.log(pooled_triple_count / cnt))
    pair_rels: dict[tuple[int, int], set[int]] = defaultdict(set)
    for h, r, t in kg.triples:
        if per_relation_counts[r] == 0:
            raise DataFormatError(f"relation {r} appears in triples but has zero count")
        key = (h, t) if h <= t else (t, h)
        pair_rels[key].add(r)
    n = kg.num_entities
    rows, cols, vals = [], [], []
    for (i, j), rels in pair_rels.items():
        w = sum(weights[r] for r in rels)
        rows.append(i)
        cols.append(j)
        vals.append(w)
        if i != j:
            rows.append(j)
            cols.append(i)
            vals.append(w)
    adj = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n), dtype=np.float64)
    row_sums = np.asarray(adj.sum(axis=1)).ravel()
    scale = np.divide(1.0, row_sums, out=np.zeros_like(row_sums), where=row_sums > 0)
    adj = sparse.diags(scale) @ adj
    return adj.tocsr()


def pooled_triple_count(kg_a: KnowledgeGraph, kg_b: KnowledgeGraph) -> int:
    """Size of the combined triple pool of two graphs (disjoint id spaces)."""
    return kg_a.num_triples + kg_b.num_triples


def relation_log_weights(kg: KnowledgeGraph, pooled: int) -> list[float]:
    """log(|T| / |T_r|) per relation; the inverse-frequency edge weight."""
    return [math.log(pooled / c) if c > 0 else 0.0 for c in kg.relation_counts()]
