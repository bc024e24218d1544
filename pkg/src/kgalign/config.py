"""Flat `key = value` configuration with exhaustive validation.

Lines are `key = value` with `#` comments; dotted keys namespace the owning
module.  Unknown keys are rejected and every problem is reported in one
pass.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .perturb import NOISE_CATEGORIES


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(p.strip()) for p in text.split(",") if p.strip())


def _parse_str_list(text: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in text.split(",") if p.strip())


@dataclass
class _Key:
    parse: object
    default: object
    check: object = None
    help: str = ""


def _fraction_open(lo, hi):
    return lambda v: lo < v < hi


SCHEMA: dict[str, _Key] = {
    "dataset.dir": _Key(str, "", help="directory holding ent_ids_1/2, rel_ids_1/2, triples_1/2, ref_ent_ids"),
    "dataset.truth": _Key(str, "ref_ent_ids"),
    "dataset.relation_truth": _Key(str, ""),
    "features.bigram": _Key(_parse_bool, True),
    "features.source_entity_emb": _Key(str, ""),
    "features.target_entity_emb": _Key(str, ""),
    "features.source_relation_emb": _Key(str, ""),
    "features.target_relation_emb": _Key(str, ""),
    "init.depth": _Key(int, 2, lambda v: v >= 0),
    "init.import_entity": _Key(str, "", help="external ALN1 file replacing step-1 entity scores"),
    "init.import_relation": _Key(str, ""),
    "sinkhorn.temperature": _Key(float, 0.05, lambda v: v > 0),
    "sinkhorn.iterations": _Key(int, 10, lambda v: v >= 1),
    "refine.lambda": _Key(float, 0.5, lambda v: 0 < v <= 1),
    "refine.iterations": _Key(int, 2, lambda v: v >= 0),
    "refine.candidates": _Key(int, 50, lambda v: v >= 1),
    "refine.hub_cap": _Key(int, 64, lambda v: v >= 1),
    "dual.pair_cap": _Key(int, 32, lambda v: v >= 1),
    "verify.target_fraction": _Key(float, 0.2, _fraction_open(0, 1)),
    "verify.candidates": _Key(int, 20, lambda v: v >= 1),
    "verify.linearize_cap": _Key(int, 32, lambda v: v >= 1),
    "verify.scorer": _Key(str, "lexical", lambda v: v in ("lexical", "table", "process")),
    "verify.scorer_table": _Key(str, ""),
    "verify.scorer_command": _Key(str, ""),
    "noise.level": _Key(float, 0.0, lambda v: 0 <= v <= 1),
    "noise.categories": _Key(_parse_str_list, NOISE_CATEGORIES,
                             lambda v: set(v) <= set(NOISE_CATEGORIES)),
    "noise.seed": _Key(int, 7),
    "drop.ratio": _Key(float, 0.0, lambda v: 0 <= v < 1),
    "drop.seed": _Key(int, 7),
    "synth.entities": _Key(int, 200, lambda v: v >= 1),
    "synth.relations": _Key(int, 20, lambda v: v >= 1),
    "synth.degree": _Key(float, 4.0, lambda v: v >= 1),
    "synth.seed": _Key(int, 7),
    "synth.permute": _Key(_parse_bool, True),
    "eval.hits": _Key(_parse_int_list, (1, 10), lambda v: len(v) > 0 and all(k >= 1 for k in v)),
    "output.dir": _Key(str, "out"),
    "threads": _Key(int, 0, lambda v: v >= 0, help="thread budget; 0 = library default"),
}


class PipelineConfig:
    def __init__(self, values: dict):
        self.values = values

    def __getitem__(self, key: str):
        return self.values[key]

    # execution details that never change artifact content
    _UNHASHED = ("output.dir", "threads")

    def hash(self) -> str:
        """Stable digest of the fully resolved configuration."""
        lines = [f"{k} = {self.values[k]!r}" for k in sorted(self.values)
                 if k not in self._UNHASHED]
        return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()[:16]


def parse_config_text(text: str, source: str = "<config>") -> PipelineConfig:
    problems: list[str] = []
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            problems.append(f"{source}:{lineno}: expected `key = value`")
            continue
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in SCHEMA:
            problems.append(f"{source}:{lineno}: unknown key {key!r}")
            continue
        if key in raw:
            problems.append(f"{source}:{lineno}: duplicate key {key!r}")
            continue
        raw[key] = value

    values: dict = {}
    for key, spec in SCHEMA.items():
        if key not in raw:
            values[key] = spec.default
            continue
        try:
            val = spec.parse(raw[key])
        except ValueError as exc:
            problems.append(f"{source}: key {key!r}: {exc}")
            continue
        if spec.check is not None and not spec.check(val):
            problems.append(f"{source}: key {key!r}: value {val!r} out of range")
            continue
        values[key] = val

    if problems:
        raise ConfigError(problems)
    return PipelineConfig(values)


def validate_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError([f"config file not found: {path}"])
    return parse_config_text(path.read_text(encoding="utf-8"), source=str(path))


def default_config() -> PipelineConfig:
    return PipelineConfig({k: spec.default for k, spec in SCHEMA.items()})
