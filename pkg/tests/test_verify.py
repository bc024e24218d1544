import math
import sys
import textwrap

import numpy as np
import pytest

from kgalign.errors import ScorerProcessError
from kgalign.graph import KnowledgeGraph, Triple, relation_log_weights
from kgalign.verify import (DetectionScores, LexicalNgramScorer, ProcessScorer,
                            TableScorer, TripleTextBuilder, VerificationParams,
                            cross_verify_and_correct, detection_scores, linearize,
                            order_source_triples, order_target_triples, rerank,
                            select_for_verification)

from oracles import greedy_target_order_bruteforce, selection_bruteforce


def make_kg(entity_names, relation_names, triples):
    return KnowledgeGraph(entity_names, relation_names, [Triple(*t) for t in triples])


class TestDetection:
    def test_one_hot_confidence(self):
        s = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=np.float32)
        det = detection_scores(s, s)
        assert np.allclose(det.conf, 1.0)

    def test_identical_rows_full_consistency(self):
        x = np.array([[0.2, 0.8]], dtype=np.float32)
        det = detection_scores(x, x)
        assert det.cons[0] == pytest.approx(1.0)

    def test_orthogonal_rows_zero_consistency(self):
        x = np.array([[1.0, 0.0]], dtype=np.float32)
        s = np.array([[0.0, 1.0]], dtype=np.float32)
        det = detection_scores(x, s)
        assert det.cons[0] == pytest.approx(0.0)

    def test_zero_norm_row_flagged(self):
        x = np.array([[0.0, 0.0]], dtype=np.float32)
        s = np.array([[0.5, 0.5]], dtype=np.float32)
        det = detection_scores(x, s)
        assert det.cons[0] == 0.0
        assert det.zero_norm == [0]

    def test_candidate_sparse_matches_dense(self):
        from kgalign.scores import ScoreMatrix

        rng = np.random.default_rng(0)
        x = rng.uniform(size=(6, 8)).astype(np.float32)
        s = rng.uniform(size=(6, 8)).astype(np.float32)
        dense = detection_scores(x, s)
        sparse = detection_scores(ScoreMatrix(dense=x).to_candidate_sparse(8),
                                  ScoreMatrix(dense=s).to_candidate_sparse(8))
        assert np.allclose(dense.conf, sparse.conf, atol=1e-7)
        assert np.allclose(dense.cons, sparse.cons, atol=1e-7)

    def test_sparse_support_union(self):
        from kgalign.scores import ScoreMatrix

        # supports {0} and {1}: union-based cosine is 0
        x = ScoreMatrix(row_entries=[(np.array([0], dtype=np.uint32),
                                      np.array([1.0], dtype=np.float32))], shape=(1, 3))
        s = ScoreMatrix(row_entries=[(np.array([1], dtype=np.uint32),
                                      np.array([0.8], dtype=np.float32))], shape=(1, 3))
        det = detection_scores(x, s)
        assert det.conf[0] == pytest.approx(0.8)
        assert det.cons[0] == 0.0


class TestSelection:
    def test_boundary_returns_all(self):
        # identical metric values: the strict-< union can never reach the
        # target, so the q=1 boundary returns everything
        det = DetectionScores(conf=np.ones(5), cons=np.ones(5))
        assert select_for_verification(det, 0.5).tolist() == [0, 1, 2, 3, 4]

    def test_rank_correlated_metrics(self):
        vals = np.array([0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0])
        det = DetectionScores(conf=vals, cons=vals)
        got = select_for_verification(det, 0.2)
        assert got.tolist() == [0, 1]

    def test_hand_set_matches_bruteforce(self):
        conf = np.array([0.95, 0.10, 0.90, 0.85, 0.97, 0.88, 0.92, 0.15, 0.93, 0.91])
        cons = np.array([0.90, 0.80, 0.98, 0.70, 0.95, 0.85, 0.92, 0.60, 0.94, 0.99])
        det = DetectionScores(conf=conf, cons=cons)
        got = select_for_verification(det, 0.2)
        expected = selection_bruteforce(conf, cons, 0.2)
        assert got.tolist() == expected.tolist()
        assert got.size == 2

    def test_random_instances_match_bruteforce(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            conf = rng.uniform(size=15)
            cons = rng.uniform(size=15)
            det = DetectionScores(conf=conf, cons=cons)
            got = select_for_verification(det, 0.3)
            expected = selection_bruteforce(conf, cons, 0.3)
            assert got.tolist() == expected.tolist()

    def test_high_fraction_uses_topmost_achievable_union(self):
        # the largest union reachable below q=1 excludes only the top entity;
        # a 0.75 target on 5 entities must select exactly the bottom four
        vals = np.array([0.1, 0.2, 0.3, 0.4, 0.5])
        det = DetectionScores(conf=vals, cons=vals)
        got = select_for_verification(det, 0.75)
        assert got.tolist() == [0, 1, 2, 3]
        assert got.tolist() == selection_bruteforce(vals, vals, 0.75).tolist()

    def test_size_within_tie_slack(self):
        rng = np.random.default_rng(1)
        conf = rng.uniform(size=50)
        cons = rng.uniform(size=50)
        det = DetectionScores(conf=conf, cons=cons)
        got = select_for_verification(det, 0.2)
        assert got.size >= 10
        assert got.size <= 12  # no ties in uniform draws; slack stays tiny


FOOTBALL_ENTITIES = ["Football League One", "Football League Championship",
                     "Football League Two", "Sheffield United F.C."]
FOOTBALL_RELATIONS = ["relegation", "promotion", "league"]
FOOTBALL_TRIPLES = [(0, 0, 1), (0, 1, 1), (0, 1, 2), (0, 0, 2), (0, 2, 3)]


class TestLinearize:
    def test_football_league_sentence(self):
        kg = make_kg(FOOTBALL_ENTITIES, FOOTBALL_RELATIONS, FOOTBALL_TRIPLES)
        text = linearize(kg, 0, kg.neighbor_triples(0))
        assert text == ("Football League One, which relegation is Football League "
                        "Championship, promotion is Football League Championship, "
                        "promotion is Football League Two, relegation is Football "
                        "League Two, league is Sheffield United F.C..")

    def test_no_neighbors(self):
        kg = make_kg(["X"], ["r"], [])
        assert linearize(kg, 0, []) == "X."

    def test_single_triple(self):
        kg = make_kg(["X", "Y"], ["likes"], [(0, 0, 1)])
        assert linearize(kg, 0, kg.neighbor_triples(0)) == "X, which likes is Y."

    def test_deterministic_bytes(self):
        kg = make_kg(FOOTBALL_ENTITIES, FOOTBALL_RELATIONS, FOOTBALL_TRIPLES)
        weights = relation_log_weights(kg, 10)
        order = order_source_triples(kg, 0, weights)
        a = linearize(kg, 0, order).encode()
        b = linearize(kg, 0, order_source_triples(kg, 0, weights)).encode()
        assert a == b


class TestOrdering:
    def test_rarer_relation_first(self):
        kg = make_kg(["a", "b", "c"], ["rare", "common"], [(0, 0, 1), (0, 1, 2)])
        # counts: rare 1, common 10 within a pooled set of 11
        weights = [math.log(11 / 1), math.log(11 / 10)]
        order = order_source_triples(kg, 0, weights)
        assert order[0].relation == 0

    def test_equal_weights_stable_tie_rule(self):
        kg = make_kg(["a", "b", "c"], ["r0", "r1"], [(0, 1, 2), (0, 0, 1)])
        weights = [1.0, 1.0]
        order = order_source_triples(kg, 0, weights)
        assert [(t.relation, t.tail) for t in order] == [(0, 1), (1, 2)]

    def test_five_triples_match_sort_oracle(self):
        kg = make_kg([f"e{i}" for i in range(6)], [f"r{i}" for i in range(5)],
                     [(0, r, r + 1) for r in range(5)])
        weights = [math.log(31 / c) for c in (1, 5, 2, 8, 3)]
        order = order_source_triples(kg, 0, weights)
        expected = sorted(kg.neighbor_triples(0),
                          key=lambda t: (-weights[t.relation], t.relation, t.tail))
        assert order == expected

    def test_target_single_triple(self):
        kg_t = make_kg(["x", "y"], ["q"], [(0, 0, 1)])
        weights_t = [1.0]
        src = [Triple(0, 0, 1)]
        s_rel = np.ones((1, 1), dtype=np.float32)
        s_ent = np.ones((2, 2), dtype=np.float32)
        order = order_target_triples(kg_t, 0, src, s_rel, s_ent, weights_t)
        assert order == kg_t.neighbor_triples(0)

    def test_greedy_follows_scores(self):
        # two target triples; the source's first triple matches target triple B
        kg_t = make_kg(["j", "a", "b"], ["qa", "qb"], [(0, 0, 1), (0, 1, 2)])
        weights_t = [1.0, 1.0]
        source_order = [Triple(0, 1, 2), Triple(0, 0, 1)]
        s_rel = np.array([[1.0, 0.0], [0.0, 1.0]], dtype=np.float32)
        s_ent = np.eye(3, dtype=np.float32)
        order = order_target_triples(kg_t, 0, source_order, s_rel, s_ent, weights_t)
        assert [(t.relation, t.tail) for t in order] == [(1, 2), (0, 1)]
        expected = greedy_target_order_bruteforce(
            [(0, t.relation, t.tail) for t in source_order],
            [(0, t.relation, t.tail) for t in kg_t.neighbor_triples(0)],
            s_rel, s_ent)
        assert [(0, t.relation, t.tail) for t in order] == expected

    def test_extra_target_triples_appended(self):
        kg_t = make_kg(["j", "a", "b", "c"], ["q"], [(0, 0, 1), (0, 0, 2), (0, 0, 3)])
        weights_t = [1.0]
        src = [Triple(0, 0, 1)]
        s_rel = np.ones((1, 1), dtype=np.float32)
        s_ent = np.eye(4, dtype=np.float32)
        order = order_target_triples(kg_t, 0, src, s_rel, s_ent, weights_t)
        assert len(order) == 3
        assert order[0].tail == 1  # matched
        assert [t.tail for t in order[1:]] == [2, 3]  # leftovers in own order

    def test_exhaustive_small_cases(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            kg_t = make_kg(["j", "a", "b", "c"], ["q0", "q1"],
                           [(0, 0, 1), (0, 1, 2), (0, 0, 3)])
            weights_t = [0.5, 0.4]
            src = [Triple(0, 0, 1), Triple(0, 1, 2)]
            s_rel = rng.uniform(size=(2, 2)).astype(np.float32)
            s_ent = rng.uniform(size=(4, 4)).astype(np.float32)
            order = order_target_triples(kg_t, 0, src, s_rel, s_ent, weights_t)
            pool = order_source_triples(kg_t, 0, weights_t)
            expected = greedy_target_order_bruteforce(
                [(0, t.relation, t.tail) for t in src],
                [(0, t.relation, t.tail) for t in pool], s_rel, s_ent)
            assert [(0, t.relation, t.tail) for t in order] == expected


def toy_builder(s_rel=None, s_ent=None):
    kg_s = make_kg(["alpha", "beta", "gamma"], ["r"], [(0, 0, 1), (1, 0, 2)])
    kg_t = make_kg(["alpha", "beta", "gamma"], ["r"], [(0, 0, 1), (1, 0, 2)])
    w = relation_log_weights(kg_s, 4)
    if s_rel is None:
        s_rel = np.ones((1, 1), dtype=np.float32)
    if s_ent is None:
        s_ent = np.eye(3, dtype=np.float32)
    return TripleTextBuilder(kg_s, kg_t, w, w, s_rel, s_ent)


class TestRerank:
    def test_prior_consistent_scorer_keeps_order(self):
        builder = toy_builder()
        prior = np.array([0.9, 0.5, 0.1])
        scorer = TableScorer({(0, j): p for j, p in enumerate(prior)})
        out = rerank(0, np.array([0, 1, 2]), scorer, builder, prior)
        assert [j for j, _ in out] == [0, 1, 2]

    def test_oracle_scorer_promotes_true_target(self):
        builder = toy_builder()
        scorer = TableScorer({(0, 2): 1.0})
        out = rerank(0, np.array([0, 1, 2]), scorer, builder, np.array([0.9, 0.5, 0.1]))
        assert out[0][0] == 2

    def test_tie_falls_back_to_prior(self):
        builder = toy_builder()
        scorer = TableScorer({})  # all scores 0.0
        out = rerank(0, np.array([1, 2, 0]), scorer, builder, np.array([0.9, 0.5, 0.1]))
        assert [j for j, _ in out] == [1, 2, 0]


class TestCrossVerify:
    def setup_scores(self):
        # row 0 misaligned: argmax points at 1, truth is 0
        s = np.array([[0.3, 0.6, 0.1],
                      [0.2, 0.7, 0.1],
                      [0.1, 0.2, 0.7]], dtype=np.float32)
        return s

    def test_both_directions_agree(self):
        s = self.setup_scores()
        builder = toy_builder(s_ent=s)
        scorer = TableScorer({(0, 0): 1.0, (1, 1): 1.0, (2, 2): 1.0})
        corrected, verdicts = cross_verify_and_correct(s, np.array([0]), scorer, builder, 3)
        assert verdicts[0].accepted
        assert verdicts[0].proposed == 0
        assert corrected[0].argmax() == 0
        assert np.array_equal(corrected[1:], s[1:])  # untouched rows bit-identical

    def test_one_sided_failure_leaves_row(self):
        s = self.setup_scores()
        builder = toy_builder(s_ent=s)
        # forward says 0 -> 0, but backward says best source for 0 is 1
        scorer = TableScorer({(0, 0): 0.9, (1, 0): 1.0})
        corrected, verdicts = cross_verify_and_correct(s, np.array([0]), scorer, builder, 3)
        assert not verdicts[0].accepted
        assert np.array_equal(corrected, s)

    def test_rank_surgery_preserves_other_entries(self):
        s = self.setup_scores()
        builder = toy_builder(s_ent=s)
        scorer = TableScorer({(0, 0): 1.0})
        corrected, _ = cross_verify_and_correct(s, np.array([0]), scorer, builder, 3)
        assert corrected[0, 0] == pytest.approx(s[0].max() + 1.0)
        assert corrected[0, 1] == s[0, 1]
        assert corrected[0, 2] == s[0, 2]


WORKER_SOURCE = textwrap.dedent("""
    import json
    import sys

    print(json.dumps({"ready": True}), flush=True)
    held = []
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            req = json.loads(line)
            score = 1.0 if req["a"] == req["b"] else 1.0 / (1 + abs(len(req["a"]) - len(req["b"])) + 0.5)
            held.append({"id": req["id"], "score": score})
        except (json.JSONDecodeError, KeyError) as exc:
            print(json.dumps({"id": None, "error": str(exc)}), flush=True)
            continue
        if len(held) >= 2:
            held.reverse()          # exercise out-of-order delivery
            for msg in held:
                print(json.dumps(msg), flush=True)
            held = []
    for msg in held:
        print(json.dumps(msg), flush=True)
""")


@pytest.fixture
def worker_script(tmp_path):
    path = tmp_path / "scorer_worker.py"
    path.write_text(WORKER_SOURCE)
    return path


class TestProcessScorer:
    def test_identical_texts_score_one(self, worker_script):
        with ProcessScorer([sys.executable, str(worker_script)]) as scorer:
            assert scorer.score_many([(0, 0, "same", "same"), (0, 1, "same", "same")]) \
                == [1.0, 1.0]

    def test_pipelined_ids_matched_out_of_order(self, worker_script):
        with ProcessScorer([sys.executable, str(worker_script)]) as scorer:
            jobs = [(0, j, "a" * (j + 1), "a") for j in range(100)]
            got = scorer.score_many(jobs)
            assert len(got) == 100
            expect = [1.0 if j == 0 else 1.0 / (1 + j + 0.5) for j in range(100)]
            assert got == pytest.approx(expect)

    def test_dead_worker_raises(self, tmp_path):
        script = tmp_path / "dead.py"
        script.write_text("import json\nprint(json.dumps({'ready': True}), flush=True)\n")
        scorer = ProcessScorer([sys.executable, str(script)])
        with pytest.raises(ScorerProcessError, match="closed its output"):
            scorer.score(0, 0, "a", "b")

    def test_not_ready_raises(self, tmp_path):
        script = tmp_path / "silent.py"
        script.write_text("print('hello')\n")
        with pytest.raises(ScorerProcessError, match="readiness"):
            ProcessScorer([sys.executable, str(script)])

    def test_rerank_reports_candidate_index(self, tmp_path):
        script = tmp_path / "dies.py"
        script.write_text(textwrap.dedent("""
            import json, sys
            print(json.dumps({"ready": True}), flush=True)
            sys.stdin.readline()
            sys.exit(1)
        """))
        builder = toy_builder()
        scorer = ProcessScorer([sys.executable, str(script)])
        with pytest.raises(ScorerProcessError, match="candidate index reached"):
            rerank(0, np.array([0, 1, 2]), scorer, builder, np.array([0.9, 0.5, 0.1]))


class TestLexicalScorer:
    def test_identical_texts(self):
        scorer = LexicalNgramScorer()
        assert scorer.score(0, 0, "hello world", "hello world") == pytest.approx(1.0)

    def test_disjoint_texts(self):
        scorer = LexicalNgramScorer()
        assert scorer.score(0, 0, "aaaa", "bbbb") == 0.0

    def test_short_text(self):
        assert LexicalNgramScorer().score(0, 0, "ab", "ab") == 0.0


class TestTableScorer:
    def test_from_tsv(self, tmp_path):
        path = tmp_path / "scores.tsv"
        path.write_text("0\t1\t0.75\n2\t3\t0.5\n")
        scorer = TableScorer.from_tsv(path)
        assert scorer.score(0, 1, "", "") == 0.75
        assert scorer.score(9, 9, "", "") == 0.0


class TestParams:
    def test_validation(self):
        with pytest.raises(ValueError):
            VerificationParams(target_fraction=0.0)
        with pytest.raises(ValueError):
            VerificationParams(candidates=0)
