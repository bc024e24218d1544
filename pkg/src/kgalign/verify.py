"""Detect, rerank, and correct suspicious alignments.

Low-confidence or low-consistency source entities are selected, their
neighbor triples linearized into sentences, candidate targets reranked by a
pluggable text scorer, and a correction applied only when both directions
of the reranking agree on the pair.
"""

from __future__ import annotations

import json
import subprocess
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import KgAlignError, ScorerProcessError
from .graph import KnowledgeGraph, Triple
from .scores import top_k_columns

LINEARIZE_CAP = 32


@dataclass(frozen=True)
class VerificationParams:
    target_fraction: float = 0.2
    candidates: int = 20
    linearize_cap: int = LINEARIZE_CAP

    def __post_init__(self):
        if not 0 < self.target_fraction < 1:
            raise ValueError("target_fraction must be in (0, 1)")
        if self.candidates < 1:
            raise ValueError("candidates must be >= 1")
        if self.linearize_cap < 1:
            raise ValueError("linearize_cap must be >= 1")


@dataclass
class DetectionScores:
    conf: np.ndarray
    cons: np.ndarray
    zero_norm: list[int] = field(default_factory=list)


@dataclass
class VerificationVerdict:
    source: int
    old_top: int
    proposed: int
    accepted: bool
    scorer_scores: list[tuple[int, float]]


def detection_scores(x_init, s_refined) -> DetectionScores:
    """Per source entity: row max of the refined scores, and the cosine
    between initial and refined rows.  Zero-norm rows get cosine 0.

    Inputs may be dense arrays or ScoreMatrix objects; candidate-sparse
    matrices are compared over the union of their stored supports per row,
    which equals the dense cosine since unstored entries are zero.
    """
    from .scores import ScoreMatrix

    if isinstance(x_init, ScoreMatrix) or isinstance(s_refined, ScoreMatrix):
        x_m = x_init if isinstance(x_init, ScoreMatrix) else ScoreMatrix(dense=x_init)
        s_m = s_refined if isinstance(s_refined, ScoreMatrix) else ScoreMatrix(dense=s_refined)
        if x_m.shape != s_m.shape:
            raise KgAlignError(f"shape mismatch: {x_m.shape} vs {s_m.shape}")
        if x_m.dense is not None and s_m.dense is not None:
            return _detection_dense(x_m.dense, s_m.dense)
        return _detection_supports(x_m, s_m)
    if x_init.shape != s_refined.shape:
        raise KgAlignError(f"shape mismatch: {x_init.shape} vs {s_refined.shape}")
    return _detection_dense(x_init, s_refined)


def _detection_dense(x_init: np.ndarray, s_refined: np.ndarray) -> DetectionScores:
    x = x_init.astype(np.float64)
    s = s_refined.astype(np.float64)
    conf = s.max(axis=1)
    nx = np.linalg.norm(x, axis=1)
    ns = np.linalg.norm(s, axis=1)
    denom = nx * ns
    zero = denom == 0
    denom = np.where(zero, 1.0, denom)
    cons = (x * s).sum(axis=1) / denom
    cons[zero] = 0.0
    return DetectionScores(conf=conf, cons=cons, zero_norm=np.flatnonzero(zero).tolist())


def _detection_supports(x_m, s_m) -> DetectionScores:
    rows = x_m.shape[0]
    conf = np.zeros(rows)
    cons = np.zeros(rows)
    flagged = []
    for i in range(rows):
        support = np.union1d(x_m.row_support(i), s_m.row_support(i))
        xv = x_m.row_lookup(i, support)
        sv = s_m.row_lookup(i, support)
        conf[i] = sv.max() if sv.size else 0.0
        denom = np.linalg.norm(xv) * np.linalg.norm(sv)
        if denom == 0:
            flagged.append(i)
        else:
            cons[i] = float(xv @ sv) / denom
    return DetectionScores(conf=conf, cons=cons, zero_norm=flagged)


def select_for_verification(det: DetectionScores, target_fraction: float) -> np.ndarray:
    """Entities below a shared quantile threshold on either metric.

    The shared quantile q is found by bisection so the union is the smallest
    one of size >= target_fraction * n.  The union only changes at the knots
    q = k/(n-1), where the interpolated thresholds pass the k-th order
    statistics, so the bisection runs over k exactly; tied metric values
    enter as a group.  At the q=1 boundary everything is returned.
    """
    n = det.conf.size
    need = target_fraction * n
    conf_sorted = np.sort(det.conf)
    cons_sorted = np.sort(det.cons)

    def union(k: int) -> np.ndarray:
        if k < 0:
            return np.empty(0, dtype=np.int64)
        return np.flatnonzero((det.conf <= conf_sorted[k]) | (det.cons <= cons_sorted[k]))

    if n < 2 or union(n - 2).size < need:
        return np.arange(n)
    lo, hi = -1, n - 2  # invariant: |union(lo)| < need <= |union(hi)|
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if union(mid).size >= need:
            hi = mid
        else:
            lo = mid
    return union(hi)


def linearize(kg: KnowledgeGraph, entity: int, ordered_triples: list[Triple]) -> str:
    """Render neighbor triples as one sentence focusing on the entity."""
    name = kg.entity_names[entity]
    if not ordered_triples:
        return f"{name}."
    segments = ", ".join(
        f"{kg.relation_names[t.relation]} is {kg.entity_names[t.tail]}" for t in ordered_triples)
    return f"{name}, which {segments}."


def order_source_triples(kg: KnowledgeGraph, entity: int, rel_weights) -> list[Triple]:
    """Neighbor triples sorted by descending inverse-frequency weight,
    ties by relation id then tail id."""
    return sorted(kg.neighbor_triples(entity),
                  key=lambda t: (-rel_weights[t.relation], t.relation, t.tail))


def order_target_triples(kg_t: KnowledgeGraph, target: int, source_order: list[Triple],
                         s_rel: np.ndarray, s_ent: np.ndarray,
                         rel_weights_t) -> list[Triple]:
    """Greedily reorder the target's neighbor triples to track the source order.

    For each source triple (i, p, i') in turn, the unused target triple
    (j, q, j') maximizing s_rel[p, q] * s_ent[i', j'] is taken; leftovers are
    appended in their own inverse-frequency order.
    """
    pool = order_source_triples(kg_t, target, rel_weights_t)
    used = [False] * len(pool)
    out: list[Triple] = []
    for src in source_order:
        best_idx, best_score = -1, -np.inf
        for idx, tgt in enumerate(pool):
            if used[idx]:
                continue
            score = float(s_rel[src.relation, tgt.relation]) * float(s_ent[src.tail, tgt.tail])
            if score > best_score:
                best_idx, best_score = idx, score
        if best_idx < 0:
            break
        used[best_idx] = True
        out.append(pool[best_idx])
    out.extend(t for idx, t in enumerate(pool) if not used[idx])
    return out


class TripleTextBuilder:
    """Caches linearized neighbor-triple sentences for both graphs."""

    def __init__(self, kg_s: KnowledgeGraph, kg_t: KnowledgeGraph,
                 rel_weights_s, rel_weights_t,
                 s_rel: np.ndarray, s_ent: np.ndarray, cap: int = LINEARIZE_CAP):
        self.kg_s = kg_s
        self.kg_t = kg_t
        self.w_s = rel_weights_s
        self.w_t = rel_weights_t
        self.s_rel = s_rel
        self.s_ent = s_ent
        self.cap = cap
        self._src_order: dict[int, list[Triple]] = {}
        self._src_text: dict[int, str] = {}
        self._tgt_text: dict[tuple[int, int], str] = {}

    def source_order(self, i: int) -> list[Triple]:
        if i not in self._src_order:
            self._src_order[i] = order_source_triples(self.kg_s, i, self.w_s)[:self.cap]
        return self._src_order[i]

    def source_text(self, i: int) -> str:
        if i not in self._src_text:
            self._src_text[i] = linearize(self.kg_s, i, self.source_order(i))
        return self._src_text[i]

    def target_text(self, i: int, j: int) -> str:
        key = (i, j)
        if key not in self._tgt_text:
            order = order_target_triples(self.kg_t, j, self.source_order(i),
                                         self.s_rel, self.s_ent, self.w_t)[:self.cap]
            self._tgt_text[key] = linearize(self.kg_t, j, order)
        return self._tgt_text[key]


class LexicalNgramScorer:
    """Cosine over character trigram counts; the no-dependency default."""

    kind = "lexical-ngram"

    @staticmethod
    def _trigrams(text: str) -> Counter:
        return Counter(text[i:i + 3] for i in range(len(text) - 2))

    def score(self, src_id: int, tgt_id: int, a: str, b: str) -> float:
        ca, cb = self._trigrams(a), self._trigrams(b)
        if not ca or not cb:
            return 0.0
        dot = sum(v * cb[k] for k, v in ca.items())
        na = np.sqrt(sum(v * v for v in ca.values()))
        nb = np.sqrt(sum(v * v for v in cb.values()))
        return float(dot / (na * nb))


class TableScorer:
    """Scores looked up from (src_id, tgt_id) pairs; unknown pairs score 0."""

    kind = "precomputed-table"

    def __init__(self, table: dict[tuple[int, int], float]):
        self.table = table

    @classmethod
    def from_tsv(cls, path) -> "TableScorer":
        table = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise KgAlignError(f"{path}:{lineno}: expected 3 columns")
                table[(int(parts[0]), int(parts[1]))] = float(parts[2])
        return cls(table)

    def score(self, src_id: int, tgt_id: int, a: str, b: str) -> float:
        return self.table.get((src_id, tgt_id), 0.0)


class ProcessScorer:
    """Talks to a worker process over newline-delimited JSON on stdio.

    Requests are {"id", "a", "b"}; responses carry the same id and may
    arrive out of order.  The worker announces itself with {"ready": true}.
    """

    kind = "external-process"

    def __init__(self, command: list[str]):
        self.command = command
        self._next_id = 0
        self._pending: dict[int, float] = {}
        try:
            self.proc = subprocess.Popen(
                command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                text=True, encoding="utf-8", bufsize=1)
        except OSError as exc:
            raise ScorerProcessError(f"failed to spawn scorer worker: {exc}") from exc
        line = self.proc.stdout.readline()
        try:
            msg = json.loads(line)
        except (json.JSONDecodeError, TypeError):
            msg = {}
        if not msg.get("ready"):
            raise ScorerProcessError(f"scorer worker did not signal readiness, got {line!r}")

    def _read_until(self, want_id: int) -> float:
        while want_id not in self._pending:
            line = self.proc.stdout.readline()
            if not line:
                raise ScorerProcessError("scorer worker closed its output")
            try:
                msg = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ScorerProcessError(f"scorer worker sent invalid JSON: {line!r}") from exc
            if "error" in msg:
                raise ScorerProcessError(f"scorer worker error for id {msg.get('id')}: {msg['error']}")
            try:
                self._pending[int(msg["id"])] = float(msg["score"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ScorerProcessError(f"scorer worker response malformed: {line!r}") from exc
        return self._pending.pop(want_id)

    def _send(self, req_id: int, a: str, b: str):
        try:
            self.proc.stdin.write(json.dumps({"id": req_id, "a": a, "b": b}) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ScorerProcessError(f"scorer worker pipe broken: {exc}") from exc

    def score(self, src_id: int, tgt_id: int, a: str, b: str) -> float:
        req_id = self._next_id
        self._next_id += 1
        self._send(req_id, a, b)
        return self._read_until(req_id)

    def score_many(self, jobs) -> list[float]:
        """Pipeline all requests, then collect responses (any arrival order)."""
        ids = []
        for (_src, _tgt, a, b) in jobs:
            req_id = self._next_id
            self._next_id += 1
            self._send(req_id, a, b)
            ids.append(req_id)
        out = []
        for pos, req_id in enumerate(ids):
            try:
                out.append(self._read_until(req_id))
            except ScorerProcessError as exc:
                raise ScorerProcessError(f"{exc} (resolved {pos} of {len(ids)} requests)") from exc
        return out

    def close(self):
        if self.proc.poll() is None:
            try:
                self.proc.stdin.close()
            except OSError:
                pass
            try:
                self.proc.wait(timeout=10)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _score_pairs(pairs, scorer, builder: TripleTextBuilder, cache: dict, what: str):
    """Fill the cache for (source, target) pairs, batching when supported."""
    jobs, keys = [], []
    queued = set()
    for key in pairs:
        if key in cache or key in queued:
            continue
        queued.add(key)
        jobs.append((key[0], key[1], builder.source_text(key[0]),
                     builder.target_text(key[0], key[1])))
        keys.append(key)
    if not jobs:
        return
    try:
        if hasattr(scorer, "score_many"):
            vals = scorer.score_many(jobs)
        else:
            vals = [scorer.score(*job) for job in jobs]
    except ScorerProcessError as exc:
        done = len(pairs) - len(jobs)
        raise ScorerProcessError(
            f"scorer failed while reranking {what} (candidate index reached: {done}): {exc}") from exc
    for key, val in zip(keys, vals):
        cache[key] = val


def rerank(i: int, candidates: np.ndarray, scorer, builder: TripleTextBuilder,
           prior: np.ndarray, cache: dict | None = None) -> list[tuple[int, float]]:
    """Candidates sorted by descending scorer score, ties by prior score.

    `candidates` must already be ordered by descending prior score; a stable
    sort then realizes the tie rule for free.
    """
    cache = {} if cache is None else cache
    pairs = [(i, int(j)) for j in candidates]
    _score_pairs(pairs, scorer, builder, cache, what=f"source {i}")
    scored = [(j, cache[(i, j)]) for (i, j) in pairs]
    order = sorted(range(len(scored)), key=lambda k: -scored[k][1])
    # sorted() is stable, so equal scores keep the descending-prior input order
    return [scored[k] for k in order]


def cross_verify_and_correct(s_ent: np.ndarray, ever: np.ndarray, scorer,
                             builder: TripleTextBuilder,
                             k: int) -> tuple[np.ndarray, list[VerificationVerdict]]:
    """Apply reranked corrections that survive verification from both sides.

    For each flagged source i, the best reranked target j is adopted only
    when i is itself the best reranked source among the top-k column
    candidates of j; accepted rows get j promoted to their argmax.
    """
    corrected = s_ent.copy()
    verdicts: list[VerificationVerdict] = []
    cache: dict[tuple[int, int], float] = {}
    for i in sorted(int(e) for e in ever):
        row = s_ent[i]
        cand = top_k_columns(row, k)
        ranked = rerank(i, cand, scorer, builder, row[cand], cache)
        j = ranked[0][0]
        back_cand = [int(i2) for i2 in top_k_columns(s_ent[:, j], k)]
        back_pairs = [(i2, j) for i2 in back_cand]
        _score_pairs(back_pairs, scorer, builder, cache, what=f"target {j}")
        back_scored = [(i2, cache[(i2, j)]) for i2 in back_cand]
        back_order = sorted(range(len(back_scored)), key=lambda m: -back_scored[m][1])
        accepted = back_scored[back_order[0]][0] == i
        old_top = int(np.argmax(row))
        if accepted:
            corrected[i, j] = corrected[i].max() + 1.0
        verdicts.append(VerificationVerdict(source=i, old_top=old_top, proposed=j,
                                            accepted=accepted, scorer_scores=ranked))
    return corrected, verdicts
