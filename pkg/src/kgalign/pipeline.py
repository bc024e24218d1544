"""Batch orchestration: staged runs with persisted, self-describing artifacts.

Stages communicate through ALN1/TSV files in the output directory; each
artifact is recorded in manifest.json with the config hash that produced
it, and resumption with a different config is refused.
"""

from __future__ import annotations

import json
import shlex
from pathlib import Path

import numpy as np

from . import assign, features, graph, metrics, perturb, refine, verify
from .config import PipelineConfig
from .errors import ConfigError
from .scores import ScoreMatrix, top_k_columns

STAGES = ("init", "refine", "verify", "eval")

DATASET_FILES = ("ent_ids_1", "rel_ids_1", "triples_1",
                 "ent_ids_2", "rel_ids_2", "triples_2")


class Manifest:
    def __init__(self, out_dir: Path):
        self.path = out_dir / "manifest.json"
        self.data = {"artifacts": {}}
        if self.path.exists():
            self.data = json.loads(self.path.read_text(encoding="utf-8"))

    def record(self, name: str, config_hash: str):
        self.data["artifacts"][name] = config_hash
        self.path.write_text(json.dumps(self.data, sort_keys=True, indent=2) + "\n",
                             encoding="utf-8")

    def check(self, name: str, config_hash: str):
        # artifacts without a manifest entry were placed externally (import path)
        stored = self.data["artifacts"].get(name)
        if stored is not None and stored != config_hash:
            raise ConfigError([
                f"artifact {name!r} was produced by config {stored}, current config is "
                f"{config_hash}; refusing to resume"])


def preflight(cfg: PipelineConfig) -> list[str]:
    """Path-existence checks deferred from schema validation."""
    problems = []
    dataset = cfg["dataset.dir"]
    if dataset:
        base = Path(dataset)
        if not base.is_dir():
            problems.append(f"dataset.dir does not exist: {base}")
        else:
            for fname in DATASET_FILES + (cfg["dataset.truth"],):
                if fname and not (base / fname).exists():
                    problems.append(f"dataset file missing: {base / fname}")
    for key in ("features.source_entity_emb", "features.target_entity_emb",
                "features.source_relation_emb", "features.target_relation_emb",
                "init.import_entity", "init.import_relation"):
        path = cfg[key]
        if path and not Path(path).exists():
            problems.append(f"{key} does not exist: {path}")
    if cfg["verify.scorer"] == "table" and not cfg["verify.scorer_table"]:
        problems.append("verify.scorer = table requires verify.scorer_table")
    if cfg["verify.scorer"] == "process" and not cfg["verify.scorer_command"]:
        problems.append("verify.scorer = process requires verify.scorer_command")
    return problems


class PipelineData:
    """Graphs, duals, adjacencies, features, and truth for one run."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        if cfg["dataset.dir"]:
            base = Path(cfg["dataset.dir"])
            self.kg_s = graph.load_kg(base / "ent_ids_1", base / "rel_ids_1",
                                      base / "triples_1", name="source")
            self.kg_t = graph.load_kg(base / "ent_ids_2", base / "rel_ids_2",
                                      base / "triples_2", name="target")
            self.entity_truth = metrics.load_ground_truth(base / cfg["dataset.truth"])
            self.relation_truth = None
            rel_truth = cfg["dataset.relation_truth"]
            if rel_truth and (base / rel_truth).exists():
                self.relation_truth = metrics.load_ground_truth(base / rel_truth)
        else:
            spec = perturb.SynthSpec(entities=cfg["synth.entities"],
                                     relations=cfg["synth.relations"],
                                     mean_degree=cfg["synth.degree"],
                                     seed=cfg["synth.seed"],
                                     permute=cfg["synth.permute"])
            result = perturb.synth_kg_pair(spec)
            self.kg_s = result.source
            self.kg_t = result.target
            self.entity_truth = result.entity_pairs
            self.relation_truth = result.relation_pairs

        if cfg["drop.ratio"] > 0:
            self.kg_t = perturb.drop_triples(self.kg_t, cfg["drop.ratio"], cfg["drop.seed"])
        if cfg["noise.level"] > 0:
            spec = perturb.NoiseSpec(level=cfg["noise.level"],
                                     categories=tuple(cfg["noise.categories"]),
                                     seed=cfg["noise.seed"])
            ent_names = perturb.inject_text_noise(self.kg_t.entity_names, spec)
            rel_spec = perturb.NoiseSpec(level=spec.level, categories=spec.categories,
                                         seed=spec.seed + 1)
            rel_names = perturb.inject_text_noise(self.kg_t.relation_names, rel_spec)
            self.kg_t = graph.KnowledgeGraph(ent_names, rel_names, self.kg_t.triples,
                                             name=self.kg_t.name)

        self.dual_s = graph.build_dual(self.kg_s, pair_cap=cfg["dual.pair_cap"])
        self.dual_t = graph.build_dual(self.kg_t, pair_cap=cfg["dual.pair_cap"])

        pooled = graph.pooled_triple_count(self.kg_s, self.kg_t)
        self.adj_ent_s = graph.build_adjacency(self.kg_s, pooled, self.kg_s.relation_counts())
        self.adj_ent_t = graph.build_adjacency(self.kg_t, pooled, self.kg_t.relation_counts())
        pooled_dual = graph.pooled_triple_count(self.dual_s, self.dual_t)
        self.adj_rel_s = graph.build_adjacency(self.dual_s, pooled_dual, self.dual_s.relation_counts())
        self.adj_rel_t = graph.build_adjacency(self.dual_t, pooled_dual, self.dual_t.relation_counts())

        self.ent_weights_s = graph.relation_log_weights(self.kg_s, pooled)
        self.ent_weights_t = graph.relation_log_weights(self.kg_t, pooled)
        self.rel_weights_s = graph.relation_log_weights(self.dual_s, pooled_dual)
        self.rel_weights_t = graph.relation_log_weights(self.dual_t, pooled_dual)

        self.feat_ent_s, self.feat_ent_t = self._features(
            self.kg_s.entity_names, self.kg_t.entity_names,
            cfg["features.source_entity_emb"], cfg["features.target_entity_emb"])
        self.feat_rel_s, self.feat_rel_t = self._features(
            self.kg_s.relation_names, self.kg_t.relation_names,
            cfg["features.source_relation_emb"], cfg["features.target_relation_emb"])

    def _features(self, names_s, names_t, emb_s_path, emb_t_path):
        lex_s = lex_t = sem_s = sem_t = None
        if self.cfg["features.bigram"]:
            vocab = features.BigramVocab.build(names_s, names_t)
            lex_s = features.bigram_features(names_s, vocab)
            lex_t = features.bigram_features(names_t, vocab)
        if emb_s_path:
            sem_s = features.load_embeddings(emb_s_path, len(names_s))
        if emb_t_path:
            sem_t = features.load_embeddings(emb_t_path, len(names_t))
        if (sem_s is None) != (sem_t is None):
            raise ConfigError(["semantic embeddings must be given for both graphs or neither"])
        if sem_s is None and lex_s is None:
            raise ConfigError(["no feature source: enable features.bigram or provide EMB1 files"])
        return (features.concat_features(sem_s, lex_s),
                features.concat_features(sem_t, lex_t))

    def sinkhorn_params(self) -> assign.SinkhornParams:
        return assign.SinkhornParams(temperature=self.cfg["sinkhorn.temperature"],
                                     iterations=self.cfg["sinkhorn.iterations"])

    def refinement_params(self) -> refine.RefinementParams:
        return refine.RefinementParams(lam=self.cfg["refine.lambda"],
                                       iterations=self.cfg["refine.iterations"],
                                       candidates=self.cfg["refine.candidates"],
                                       hub_cap=self.cfg["refine.hub_cap"])

    def make_scorer(self):
        kind = self.cfg["verify.scorer"]
        if kind == "lexical":
            return verify.LexicalNgramScorer()
        if kind == "table":
            return verify.TableScorer.from_tsv(self.cfg["verify.scorer_table"])
        return verify.ProcessScorer(shlex.split(self.cfg["verify.scorer_command"]))


def run_pipeline(cfg: PipelineConfig, stages, out_dir) -> dict:
    """Execute the requested stages, persisting artifacts under out_dir."""
    stages = list(stages)
    unknown = [s for s in stages if s not in STAGES]
    if unknown:
        raise ConfigError([f"unknown stage {s!r}" for s in unknown])
    problems = preflight(cfg)
    if problems:
        raise ConfigError(problems)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(out)
    chash = cfg.hash()
    data = PipelineData(cfg)
    produced: dict = {"out_dir": str(out)}

    def save_matrix(name: str, matrix: np.ndarray):
        ScoreMatrix(dense=matrix).save(out / name)
        manifest.record(name, chash)

    def load_matrix(name: str) -> np.ndarray:
        path = out / name
        if not path.exists():
            raise ConfigError([f"stage dependency missing: {path} (run earlier stages first)"])
        manifest.check(name, chash)
        return ScoreMatrix.load(path).to_dense()

    x_ent = x_rel = None
    if "init" in stages:
        if cfg["init.import_entity"]:
            x_ent = ScoreMatrix.load(cfg["init.import_entity"]).to_dense()
        else:
            x_ent = assign.sinkhorn(
                assign.structure_similarity(data.adj_ent_s, data.feat_ent_s,
                                            data.adj_ent_t, data.feat_ent_t,
                                            cfg["init.depth"]),
                data.sinkhorn_params())
        if cfg["init.import_relation"]:
            x_rel = ScoreMatrix.load(cfg["init.import_relation"]).to_dense()
        else:
            x_rel = assign.sinkhorn(
                assign.structure_similarity(data.adj_rel_s, data.feat_rel_s,
                                            data.adj_rel_t, data.feat_rel_t,
                                            cfg["init.depth"]),
                data.sinkhorn_params())
        save_matrix("x_ent.aln1", x_ent)
        save_matrix("x_rel.aln1", x_rel)

    s_ent = s_rel = None
    if "refine" in stages:
        if x_ent is None:
            x_ent = load_matrix("x_ent.aln1")
            x_rel = load_matrix("x_rel.aln1")
        nbr_ent_s = refine.neighbor_arrays(data.kg_s, data.ent_weights_s, cfg["refine.hub_cap"])
        nbr_ent_t = refine.neighbor_arrays(data.kg_t, data.ent_weights_t, cfg["refine.hub_cap"])
        nbr_rel_s = refine.neighbor_arrays(data.dual_s, data.rel_weights_s, cfg["refine.hub_cap"])
        nbr_rel_t = refine.neighbor_arrays(data.dual_t, data.rel_weights_t, cfg["refine.hub_cap"])
        s_ent, s_rel = refine.refine(x_ent, x_rel, nbr_ent_s, nbr_ent_t,
                                     nbr_rel_s, nbr_rel_t,
                                     data.refinement_params(), data.sinkhorn_params())
        save_matrix("s_ent.aln1", s_ent)
        save_matrix("s_rel.aln1", s_rel)

    corrected = None
    if "verify" in stages:
        if x_ent is None:
            x_ent = load_matrix("x_ent.aln1")
        if s_ent is None:
            s_ent = load_matrix("s_ent.aln1")
            s_rel = load_matrix("s_rel.aln1")
        det = verify.detection_scores(x_ent, s_ent)
        ever = verify.select_for_verification(det, cfg["verify.target_fraction"])
        builder = verify.TripleTextBuilder(data.kg_s, data.kg_t,
                                           data.ent_weights_s, data.ent_weights_t,
                                           s_rel, s_ent, cap=cfg["verify.linearize_cap"])
        scorer = data.make_scorer()
        try:
            corrected, verdicts = verify.cross_verify_and_correct(
                s_ent, ever, scorer, builder, cfg["verify.candidates"])
        finally:
            if hasattr(scorer, "close"):
                scorer.close()
        save_matrix("corrected.aln1", corrected)
        ever_set = set(int(e) for e in ever)
        with open(out / "detection.tsv", "w", encoding="utf-8") as fh:
            for i in range(det.conf.size):
                fh.write(f"{i}\t{det.conf[i]:.8f}\t{det.cons[i]:.8f}\t{int(i in ever_set)}\n")
        manifest.record("detection.tsv", chash)
        with open(out / "verdicts.tsv", "w", encoding="utf-8") as fh:
            for v in verdicts:
                fh.write(f"{v.source}\t{v.old_top}\t{v.proposed}\t{int(v.accepted)}\n")
        manifest.record("verdicts.tsv", chash)

    if "eval" in stages:
        produced["report"] = _evaluate(cfg, data, out, manifest, chash)

    return produced


def _read_verdicts(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            src, old_top, proposed, accepted = line.rstrip("\n").split("\t")
            rows.append((int(src), int(old_top), int(proposed), bool(int(accepted))))
    return rows


def _read_detection(path):
    detected = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            ent, _conf, _cons, selected = line.rstrip("\n").split("\t")
            if int(selected):
                detected.append(int(ent))
    return detected


def _evaluate(cfg: PipelineConfig, data: PipelineData, out: Path,
              manifest: Manifest, chash: str) -> dict:
    ks = cfg["eval.hits"]
    report: dict = {"config_hash": chash, "steps": {}}

    def add_step(step: str, matrix: np.ndarray, truth, level: str):
        m = metrics.hits_mrr(matrix, truth, ks)
        entry = {f"hits.{k}": v for k, v in m.hits.items()}
        entry["mrr"] = m.mrr
        report["steps"].setdefault(step, {})[level] = entry
        return m

    available: dict[str, np.ndarray] = {}
    for step, fname in (("init", "x_ent.aln1"), ("refine", "s_ent.aln1"),
                        ("verify", "corrected.aln1")):
        path = out / fname
        if path.exists():
            manifest.check(fname, chash)
            available[step] = ScoreMatrix.load(path).to_dense()
            add_step(step, available[step], data.entity_truth, "entity")
    if not available:
        raise ConfigError(["stage dependency missing: no score matrices to evaluate"])
    if data.relation_truth:
        for step, fname in (("init", "x_rel.aln1"), ("refine", "s_rel.aln1")):
            path = out / fname
            if path.exists():
                manifest.check(fname, chash)
                add_step(step, ScoreMatrix.load(path).to_dense(), data.relation_truth, "relation")

    truth_map = dict(data.entity_truth)
    if "refine" in available and "init" in available:
        det = verify.detection_scores(available["init"], available["refine"])
        before = available["refine"].argmax(axis=1)
        labeled = sorted(truth_map)
        errors = np.array([int(before[s]) != truth_map[s] for s in labeled], dtype=bool)
        if errors.any() and not errors.all():
            auroc_conf, aupr_conf = metrics.detection_quality(det.conf[labeled], errors)
            auroc_cons, aupr_cons = metrics.detection_quality(det.cons[labeled], errors)
            report["auroc.conf"] = auroc_conf
            report["aupr.conf"] = aupr_conf
            report["auroc.cons"] = auroc_cons
            report["aupr.cons"] = aupr_cons

    if "verify" in available and "refine" in available:
        verdicts = _read_verdicts(out / "verdicts.tsv")
        detected = _read_detection(out / "detection.tsv")
        corrected_ids = [v[0] for v in verdicts if v[3]]
        vm = metrics.verification_matrix(available["refine"].argmax(axis=1),
                                         available["verify"].argmax(axis=1),
                                         detected, corrected_ids, data.entity_truth)
        report["vmatrix"] = {
            "wrong_to_wrong": vm.wrong_to_wrong,
            "correct_to_wrong": vm.correct_to_wrong,
            "wrong_to_correct": vm.wrong_to_correct,
            "correct_to_correct": vm.correct_to_correct,
            "non_corrected": vm.non_corrected,
            "non_corrected_wrong": vm.non_corrected_wrong,
            "non_corrected_correct": vm.non_corrected_correct,
            "non_detected": vm.non_detected,
            "non_detected_wrong": vm.non_detected_wrong,
            "non_detected_correct": vm.non_detected_correct,
            "pct": vm.percentages(),
        }

    final_step = ("verify" if "verify" in available
                  else "refine" if "refine" in available else "init")
    final = available[final_step]
    k_dump = max(ks)
    with open(out / "alignment.tsv", "w", encoding="utf-8") as fh:
        for i in range(final.shape[0]):
            cols = top_k_columns(final[i], k_dump)
            for rank, j in enumerate(cols, start=1):
                fh.write(f"{i}\t{int(j)}\t{final[i, j]:.8f}\t{rank}\n")
    manifest.record("alignment.tsv", chash)

    (out / "report.json").write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    manifest.record("report.json", chash)
    lines = [f"config {chash}"]
    for step in ("init", "refine", "verify"):
        if step in report["steps"]:
            for level, entry in sorted(report["steps"][step].items()):
                metrics_str = "  ".join(f"{k}={v:.4f}" for k, v in sorted(entry.items()))
                lines.append(f"{step:7s} {level:8s} {metrics_str}")
    if "vmatrix" in report:
        vmx = report["vmatrix"]
        lines.append(
            "vmatrix corrected: "
            f"x->x={vmx['wrong_to_wrong']} v->x={vmx['correct_to_wrong']} "
            f"x->v={vmx['wrong_to_correct']} v->v={vmx['correct_to_correct']}; "
            f"non-corrected={vmx['non_corrected']} non-detected={vmx['non_detected']}")
    (out / "report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    manifest.record("report.txt", chash)
    return report


def write_dataset(out_dir, result: perturb.SynthResult):
    """Write a synthetic pair in the standard on-disk layout."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def write_names(path, names):
        with open(path, "w", encoding="utf-8") as fh:
            for i, name in enumerate(names):
                fh.write(f"{i}\t{name}\n")

    def write_triples(path, kg):
        with open(path, "w", encoding="utf-8") as fh:
            for h, r, t in kg.triples:
                fh.write(f"{h}\t{r}\t{t}\n")

    write_names(out / "ent_ids_1", result.source.entity_names)
    write_names(out / "rel_ids_1", result.source.relation_names)
    write_triples(out / "triples_1", result.source)
    write_names(out / "ent_ids_2", result.target.entity_names)
    write_names(out / "rel_ids_2", result.target.relation_names)
    write_triples(out / "triples_2", result.target)
    with open(out / "ref_ent_ids", "w", encoding="utf-8") as fh:
        for s, t in result.entity_pairs:
            fh.write(f"{s}\t{t}\n")
    with open(out / "ref_rel_ids", "w", encoding="utf-8") as fh:
        for s, t in result.relation_pairs:
            fh.write(f"{s}\t{t}\n")
