"""Relation-centric query benchmarks: seed sampling, templates, anonymization."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ExtractionError, SamplingError, UsageError
from .kg import KnowledgeGraph, ball

logger = logging.getLogger(__name__)

# template id -> format string; {0}, {1}, ... are seed names in order
TEMPLATES: dict[str, str] = {
    "pair-how": "How are {0} and {1} associated?",
    "pair-why": "For what reason are {0} and {1} related?",
    "pair-connect": "What connects {0} and {1}?",
    "triple-how": "How are {0}, {1}, and {2} associated?",
    "triple-why": "For what reason are {0}, {1}, and {2} related?",
    "quad-how": "How are {0}, {1}, {2}, and {3} associated?",
    "quad-why": "For what reason are {0}, {1}, {2}, and {3} related?",
}

_SLOT = re.compile(r"\{(\d+)\}")


def template_arity(template_id: str) -> int:
    try:
        tpl = TEMPLATES[template_id]
    except KeyError:
        raise UsageError(f"unknown template {template_id!r}") from None
    return len(set(_SLOT.findall(tpl)))


def templates_for(arity: int) -> list[str]:
    return [t for t in TEMPLATES if template_arity(t) == arity]


@dataclass(frozen=True)
class Query:
    seeds: tuple[int, ...]
    text: str
    template_id: str
    k_bound: int
    split: str = "train"

    def to_record(self, g: KnowledgeGraph) -> dict:
        return {
            "seeds": [g.entity_names[s] for s in self.seeds],
            "text": self.text,
            "template_id": self.template_id,
            "k": self.k_bound,
            "split": self.split,
        }

    @classmethod
    def from_record(cls, rec: dict, g: KnowledgeGraph) -> "Query":
        seeds = tuple(g.entity_id(n) for n in rec["seeds"])
        return cls(seeds, rec["text"], rec["template_id"], int(rec["k"]), rec.get("split", "train"))


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def _rng(seed: int | np.random.Generator | np.random.SeedSequence | None) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_pair(
    g: KnowledgeGraph, k: int, rng: int | np.random.Generator | None = None, max_retries: int = 1000
) -> tuple[int, int]:
    """Uniform source ``u``, then uniform ``v`` within ``k`` hops of ``u`` (``v != u``)."""
    if k < 1:
        raise UsageError("k must be >= 1")
    gen = _rng(rng)
    for _ in range(max_retries):
        u = int(gen.integers(g.num_entities))
        nodes, _ = ball(g, [u], k)
        nodes = nodes[nodes != u]
        if nodes.size:
            return u, int(nodes[gen.integers(nodes.size)])
    raise SamplingError(f"no entity with a non-trivial {k}-hop neighbourhood after {max_retries} draws")


def sample_multi(
    g: KnowledgeGraph,
    base: Sequence[int],
    k: int,
    count: int,
    rng: int | np.random.Generator | None = None,
) -> tuple[int, ...]:
    """Extend ``base`` to ``count`` seeds, each new one within ``k`` hops of some earlier seed."""
    if count not in (3, 4):
        raise UsageError("count must be 3 or 4")
    if len(base) < 2 or len(base) > count:
        raise UsageError("base must hold 2..count seeds")
    gen = _rng(rng)
    seeds = [int(s) for s in base]
    while len(seeds) < count:
        nodes, _ = ball(g, seeds, k)
        nodes = nodes[~np.isin(nodes, seeds)]
        if not nodes.size:
            raise SamplingError("no entity within k hops of the current seeds")
        seeds.append(int(nodes[gen.integers(nodes.size)]))
    return tuple(seeds)


# ---------------------------------------------------------------------------
# Templates
# ---------------------------------------------------------------------------


def render(seeds: Sequence[int], template_id: str, g: KnowledgeGraph) -> str:
    arity = template_arity(template_id)
    if arity != len(seeds):
        raise UsageError(f"template {template_id!r} takes {arity} entities, got {len(seeds)}")
    return TEMPLATES[template_id].format(*(g.entity_names[s] for s in seeds))


def _split_template(tpl: str) -> tuple[list[str], list[int]]:
    literals, slots, pos = [], [], 0
    for m in _SLOT.finditer(tpl):
        literals.append(tpl[pos : m.start()])
        slots.append(int(m.group(1)))
        pos = m.end()
    literals.append(tpl[pos:])
    return literals, slots


def _match(text: str, literals: list[str], names_ok) -> list[list[str]]:
    """All ways to read ``text`` as lit0 X1 lit1 X2 ... litN with every Xi accepted."""
    if not text.startswith(literals[0]) or not text.endswith(literals[-1]):
        return []
    body = text[len(literals[0]) : len(text) - len(literals[-1]) if literals[-1] else len(text)]
    if len(text) < len(literals[0]) + len(literals[-1]):
        return []
    seps = literals[1:-1]
    results: list[list[str]] = []

    def rec(rest: str, i: int, acc: list[str]) -> None:
        if i == len(seps):
            if rest and names_ok(rest):
                results.append(acc + [rest])
            return
        start = 0
        while True:
            j = rest.find(seps[i], start)
            if j < 0:
                return
            head = rest[:j]
            if head and names_ok(head):
                rec(rest[j + len(seps[i]) :], i + 1, acc + [head])
            start = j + 1

    rec(body, 0, [])
    return results


def extract_seeds(text: str, g: KnowledgeGraph) -> tuple[int, ...]:
    """Recover the seed ids of a templated question, matching names byte-exactly."""
    known = g.entity_index.__contains__
    for tid, tpl in TEMPLATES.items():
        literals, slots = _split_template(tpl)
        for names in _match(text, literals, known):
            ordered: list[str | None] = [None] * len(slots)
            for slot, name in zip(slots, names):
                ordered[slot] = name
            ids = tuple(g.entity_index[n] for n in ordered)  # type: ignore[index]
            if len(set(ids)) == len(ids):
                return ids
    raise ExtractionError(f"no template matches {text!r}")


# ---------------------------------------------------------------------------
# Benchmarks
# ---------------------------------------------------------------------------


def make_query(
    g: KnowledgeGraph, k: int, m: int, gen: np.random.Generator, split: str, multi_k: int | None = None
) -> Query:
    u, v = sample_pair(g, k, gen)
    seeds: tuple[int, ...] = (u, v)
    if m > 2:
        seeds = sample_multi(g, seeds, multi_k or k, m, gen)
    choices = templates_for(m)
    tpl = choices[int(gen.integers(len(choices)))]
    return Query(seeds, render(seeds, tpl, g), tpl, k, split)


def generate_benchmark(
    g: KnowledgeGraph,
    n_train: int = 2000,
    n_test: int = 500,
    k: int = 4,
    m: int = 2,
    seed: int = 1,
    max_retries: int = 100,
) -> list[Query]:
    """Generate train then test queries from disjoint random streams.

    Every query owns a child stream of its split's stream, so query ``i`` does
    not depend on how many draws earlier queries needed. Test seed sets never
    repeat a train seed set.
    """
    if m not in (2, 3, 4):
        raise UsageError("m must be 2, 3 or 4")
    train_ss, test_ss = np.random.SeedSequence(seed).spawn(2)
    out: list[Query] = []
    train_sets: set[frozenset[int]] = set()
    for split, ss, n in (("train", train_ss, n_train), ("test", test_ss, n_test)):
        for child in ss.spawn(n):
            gen = np.random.default_rng(child)
            for _ in range(max_retries):
                q = make_query(g, k, m, gen, split)
                key = frozenset(q.seeds)
                if split == "train" or key not in train_sets:
                    break
            else:
                raise SamplingError("could not draw a test query disjoint from the training split")
            if split == "train":
                train_sets.add(key)
            out.append(q)
    return out


def write_benchmark(queries: Iterable[Query], g: KnowledgeGraph, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in queries:
            fh.write(json.dumps(q.to_record(g), ensure_ascii=False) + "\n")


def read_benchmark(path: str | Path, g: KnowledgeGraph) -> list[Query]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(Query.from_record(json.loads(line), g))
    return out


# ---------------------------------------------------------------------------
# Anonymization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NameMapping:
    entities: dict[str, str]
    relations: dict[str, str]

    def to_dict(self) -> dict:
        return asdict(self)

    def write_tsv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for old, new in self.entities.items():
                fh.write(f"{old}\t{new}\n")
            for old, new in self.relations.items():
                fh.write(f"{old}\t{new}\n")


def _rename(names: Sequence[str], fraction: float, prefix: str, gen: np.random.Generator) -> list[str]:
    n = len(names)
    count = int(round(fraction * n))
    chosen = gen.permutation(n)[:count]
    # names kept as-is must not clash with a generated identifier
    chosen_set = set(chosen.tolist())
    kept = {names[i] for i in range(n) if i not in chosen_set}
    out = list(names)
    counter = 0
    for i in chosen.tolist():
        counter += 1
        while f"{prefix}{counter}" in kept:
            counter += 1
        out[i] = f"{prefix}{counter}"
    return out


def anonymize(
    g: KnowledgeGraph, fraction: float = 1.0, rng: int | np.random.Generator | None = None
) -> tuple[KnowledgeGraph, NameMapping]:
    """Rename a uniform ``fraction`` of entities to ``ENT<i>`` and relations to ``REL<j>``.

    Ids, triples and therefore every structural cache are unchanged.
    """
    if not 0.0 <= fraction <= 1.0:
        raise UsageError("fraction must lie in [0, 1]")
    gen = _rng(rng)
    ents = _rename(g.entity_names, fraction, "ENT", gen)
    rels = _rename(g.relation_names, fraction, "REL", gen)
    new = KnowledgeGraph(ents, rels, g.heads.copy(), g.rels.copy(), g.tails.copy())
    mapping = NameMapping(dict(zip(g.entity_names, ents)), dict(zip(g.relation_names, rels)))
    return new, mapping
