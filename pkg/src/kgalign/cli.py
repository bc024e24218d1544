"""Command-line entry point.

Subcommands: ingest, align, refine, verify, eval, noise, synth, pipeline.
Exit codes: 0 success, 1 validation error, 2 runtime error, 3 scorer failure.
Logs go to stderr; machine artifacts only to files.
"""

from __future__ import annotations

import argparse
import os
import sys

from .errors import ConfigError, KgAlignError, ScorerProcessError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kgalign",
                                     description="cross-lingual knowledge-graph alignment")
    parser.add_argument("--config", default="", help="flat key=value config file")
    parser.add_argument("--out", default="", help="override output.dir")
    parser.add_argument("--seed", type=int, default=None, help="override synth/noise/drop seeds")
    parser.add_argument("--threads", type=int, default=None, help="thread budget for linear algebra")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("ingest", help="load and validate the configured dataset")
    sub.add_parser("align", help="step 1: initial entity/relation alignment")
    sub.add_parser("refine", help="step 2: neighbor-triple refinement")
    sub.add_parser("verify", help="step 3: detection and cross-verified correction")
    sub.add_parser("eval", help="metrics report from persisted artifacts")

    p_noise = sub.add_parser("noise", help="perturb a name file")
    p_noise.add_argument("name_file")
    p_noise.add_argument("output_file")

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset directory")
    p_synth.add_argument("dataset_dir")

    p_pipe = sub.add_parser("pipeline", help="run a sequence of stages")
    p_pipe.add_argument("--stages", default="init,refine,verify,eval",
                        help="comma-separated subset of init,refine,verify,eval")
    return parser


def _load_config(args):
    from .config import default_config, validate_config

    cfg = validate_config(args.config) if args.config else default_config()
    if args.out:
        cfg.values["output.dir"] = args.out
    if args.seed is not None:
        cfg.values["synth.seed"] = args.seed
        cfg.values["noise.seed"] = args.seed
        cfg.values["drop.seed"] = args.seed
    if args.threads is not None:
        cfg.values["threads"] = args.threads
    return cfg


def _run(args) -> int:
    from . import perturb, pipeline

    cfg = _load_config(args)
    out_dir = cfg["output.dir"]

    if args.command == "ingest":
        problems = pipeline.preflight(cfg)
        if problems:
            raise ConfigError(problems)
        data = pipeline.PipelineData(cfg)
        for kg in (data.kg_s, data.kg_t):
            print(f"{kg.name}: {kg.num_entities} entities, {kg.num_relations} relations, "
                  f"{kg.num_triples} triples", file=sys.stderr)
        print(f"truth pairs: {len(data.entity_truth)}", file=sys.stderr)
        return 0

    if args.command == "noise":
        spec = perturb.NoiseSpec(level=cfg["noise.level"],
                                 categories=tuple(cfg["noise.categories"]),
                                 seed=cfg["noise.seed"])
        lines = open(args.name_file, encoding="utf-8").read().splitlines()
        ids, names = [], []
        for line in lines:
            if not line.strip():
                continue
            i, _, name = line.partition("\t")
            ids.append(i)
            names.append(name)
        noised = perturb.inject_text_noise(names, spec)
        with open(args.output_file, "w", encoding="utf-8") as fh:
            for i, name in zip(ids, noised):
                fh.write(f"{i}\t{name}\n")
        changed = sum(1 for a, b in zip(names, noised) if a != b)
        print(f"perturbed {changed} of {len(names)} names", file=sys.stderr)
        return 0

    if args.command == "synth":
        spec = perturb.SynthSpec(entities=cfg["synth.entities"],
                                 relations=cfg["synth.relations"],
                                 mean_degree=cfg["synth.degree"],
                                 seed=cfg["synth.seed"],
                                 permute=cfg["synth.permute"])
        result = perturb.synth_kg_pair(spec)
        pipeline.write_dataset(args.dataset_dir, result)
        print(f"wrote synthetic pair to {args.dataset_dir}", file=sys.stderr)
        return 0

    stage_map = {"align": ["init"], "refine": ["refine"], "verify": ["verify"], "eval": ["eval"]}
    if args.command == "pipeline":
        stages = [s.strip() for s in args.stages.split(",") if s.strip()]
    else:
        stages = stage_map[args.command]
    pipeline.run_pipeline(cfg, stages, out_dir)
    print(f"stages {','.join(stages)} complete; artifacts in {out_dir}", file=sys.stderr)
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.threads is not None and args.threads > 0:
        # must happen before numpy is imported by the pipeline modules
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, str(args.threads))
    try:
        return _run(args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return 1
    except ScorerProcessError as exc:
        print(f"scorer error: {exc}", file=sys.stderr)
        return 3
    except KgAlignError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
