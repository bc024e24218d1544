"""Robustness experiment helpers: text noise, triple dropping, synthetic pairs."""

from __future__ import annotations

import math
import random
import string
from dataclasses import dataclass, field

from .graph import KnowledgeGraph, Triple

NOISE_CATEGORIES = ("phonetic", "missing", "attached")

# Substitution pairs for simulated phonetic translation errors; applied in
# either direction.
PHONETIC_PAIRS = [
    ("intu", "into"), ("o", "oe"), ("li", "ri"), ("ty", "ti"), ("cu", "ka"),
    ("ca", "ka"), ("ar", "al"), ("tic", "th"), ("se", "th"), ("nes", "nais"),
    ("ud", "ade"), ("Ji", "Gi"), ("fi", "fy"), ("ps", "pus"), ("er", "ar"),
    ("our", "ur"), ("ar", "ur"), ("la", "ra"), ("ei", "ee"), ("ny", "ni"),
    ("ew", "ou"), ("ar", "or"), ("or", "ol"), ("ol", "oul"), ("ry", "ly"),
    ("wi", "wy"), ("ic", "ik"),
]


@dataclass(frozen=True)
class NoiseSpec:
    level: float = 0.0
    categories: tuple[str, ...] = NOISE_CATEGORIES
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.level <= 1:
            raise ValueError("noise level must be in [0, 1]")
        bad = set(self.categories) - set(NOISE_CATEGORIES)
        if bad:
            raise ValueError(f"unknown noise categories: {sorted(bad)}")
        if self.level > 0 and not self.categories:
            raise ValueError("at least one category must be enabled when level > 0")


def _perturb_phonetic(name: str, rng: random.Random) -> str | None:
    for a, b in PHONETIC_PAIRS:
        directions = [(a, b), (b, a)]
        if rng.random() < 0.5:
            directions.reverse()
        for src, dst in directions:
            positions = [p for p in range(len(name) - len(src) + 1) if name.startswith(src, p)]
            if positions:
                pos = positions[rng.randrange(len(positions))]
                return name[:pos] + dst + name[pos + len(src):]
    return None


def _perturb_missing(name: str, rng: random.Random) -> str | None:
    if name.endswith("s") or name.endswith("e"):
        return name[:-1]
    if " " in name:
        positions = [p for p, ch in enumerate(name) if ch == " "]
        pos = positions[rng.randrange(len(positions))]
        return name[:pos] + name[pos + 1:]
    return None


def _perturb_attached(name: str, rng: random.Random) -> str:
    return name + rng.choice("se")


def _perturb_one(name: str, category: str, rng: random.Random) -> str:
    if category == "phonetic":
        out = _perturb_phonetic(name, rng)
    elif category == "missing":
        out = _perturb_missing(name, rng)
    else:
        out = _perturb_attached(name, rng)
    # categories that do not apply to this name fall back to appending
    if out is None:
        out = _perturb_attached(name, rng)
    return out


def inject_text_noise(names, spec: NoiseSpec) -> list[str]:
    """Perturb exactly ceil(level * |names|) names, one error each."""
    out = list(names)
    count = math.ceil(spec.level * len(names))
    if count == 0:
        return out
    rng = random.Random(spec.seed)
    chosen = sorted(rng.sample(range(len(names)), count))
    cats = sorted(spec.categories)
    for i in chosen:
        category = cats[rng.randrange(len(cats))]
        out[i] = _perturb_one(names[i], category, rng)
    return out


def drop_triples(kg: KnowledgeGraph, ratio: float, seed: int) -> KnowledgeGraph:
    """Remove floor(ratio * |T|) uniformly sampled triples; entities stay."""
    if not 0 <= ratio < 1:
        raise ValueError("drop ratio must be in [0, 1)")
    n_drop = math.floor(ratio * kg.num_triples)
    rng = random.Random(seed)
    dropped = set(rng.sample(range(kg.num_triples), n_drop))
    kept = [t for idx, t in enumerate(kg.triples) if idx not in dropped]
    return KnowledgeGraph(kg.entity_names, kg.relation_names, kept, name=kg.name)


@dataclass(frozen=True)
class SynthSpec:
    entities: int = 200
    relations: int = 20
    mean_degree: float = 4.0
    name_length: int = 10
    alphabet: str = string.ascii_lowercase + string.digits
    seed: int = 0
    permute: bool = True

    def __post_init__(self):
        if self.entities < 1 or self.relations < 1:
            raise ValueError("entity and relation counts must be >= 1")
        if self.mean_degree < 1:
            raise ValueError("mean degree must be >= 1")


@dataclass
class SynthResult:
    source: KnowledgeGraph
    target: KnowledgeGraph
    entity_pairs: list[tuple[int, int]] = field(default_factory=list)
    relation_pairs: list[tuple[int, int]] = field(default_factory=list)


def _unique_names(count: int, spec: SynthSpec, rng: random.Random) -> list[str]:
    capacity = len(set(spec.alphabet)) ** spec.name_length
    if capacity < count:
        raise ValueError(
            f"name space too small: {capacity} possible names for {count} nodes")
    seen: set[str] = set()
    names = []
    while len(names) < count:
        name = "".join(rng.choice(spec.alphabet) for _ in range(spec.name_length))
        if name in seen:
            continue
        seen.add(name)
        names.append(name)
    return names


def synth_kg_pair(spec: SynthSpec) -> SynthResult:
    """A random source graph and an isomorphic, name-preserving target copy.

    Ground truth is the permutation used to relabel entities (and relations).
    """
    rng = random.Random(spec.seed)
    ent_names = _unique_names(spec.entities, spec, rng)
    rel_names = _unique_names(spec.relations, spec, rng)
    # each triple contributes two endpoint incidences
    want = max(1, round(spec.entities * spec.mean_degree / 2))
    limit = spec.entities * max(1, spec.entities - 1) * spec.relations
    want = min(want, limit)
    triples: list[Triple] = []
    seen: set[Triple] = set()
    attempts = 0
    while len(triples) < want:
        attempts += 1
        if attempts > 200 * want:
            raise RuntimeError("synthetic generator failed to reach the requested triple count")
        h = rng.randrange(spec.entities)
        t = rng.randrange(spec.entities)
        if h == t and spec.entities > 1:
            continue
        trip = Triple(h, rng.randrange(spec.relations), t)
        if trip in seen:
            continue
        seen.add(trip)
        triples.append(trip)
    source = KnowledgeGraph(ent_names, rel_names, triples, name="synth-source")

    if spec.permute:
        perm_e = list(range(spec.entities))
        perm_r = list(range(spec.relations))
        rng.shuffle(perm_e)
        rng.shuffle(perm_r)
    else:
        perm_e = list(range(spec.entities))
        perm_r = list(range(spec.relations))
    names_t = [""] * spec.entities
    for i, name in enumerate(ent_names):
        names_t[perm_e[i]] = name
    rel_names_t = [""] * spec.relations
    for r, name in enumerate(rel_names):
        rel_names_t[perm_r[r]] = name
    mapped = [Triple(perm_e[h], perm_r[r], perm_e[t]) for h, r, t in triples]
    target = KnowledgeGraph(names_t, rel_names_t, mapped, name="synth-target")
    return SynthResult(
        source=source, target=target,
        entity_pairs=[(i, perm_e[i]) for i in range(spec.entities)],
        relation_pairs=[(r, perm_r[r]) for r in range(spec.relations)],
    )
