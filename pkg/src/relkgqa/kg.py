"""Interned triple store with undirected adjacency and informativeness caches.

Entities and relations are interned to dense integer ids in first-appearance
order. Triples are stored once (duplicates collapse) in three parallel numpy
arrays; the undirected projection is kept as a CSR adjacency so that k-hop
expansion is a handful of vectorized gathers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import (
    EmptyGraphError,
    GraphParseError,
    UnknownEntityError,
    UnknownRelationError,
    UsageError,
)

logger = logging.getLogger(__name__)

# Characters that would make the answer-block grammar ambiguous.
FORBIDDEN_NAME_CHARS = ('"', "|")

# Direction codes stored with each adjacency entry.
OUT, IN, LOOP = 1, -1, 0


def _is_clean(name: str) -> bool:
    return not any(ch in name for ch in FORBIDDEN_NAME_CHARS) and "\n" not in name and "\r" not in name


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


class KnowledgeGraph:
    """Immutable knowledge graph ``(E, R, T)``.

    All caches (degree, hub penalty, relation frequency, IDF, adjacency, triple
    lookup) are computed eagerly in the constructor. Instances are read-only
    afterwards and can be shared across threads.
    """

    def __init__(
        self,
        entity_names: Sequence[str],
        relation_names: Sequence[str],
        heads: np.ndarray,
        rels: np.ndarray,
        tails: np.ndarray,
        sanitization_report: Sequence[str] = (),
    ) -> None:
        self.entity_names: tuple[str, ...] = tuple(entity_names)
        self.relation_names: tuple[str, ...] = tuple(relation_names)
        self.entity_index: dict[str, int] = {n: i for i, n in enumerate(self.entity_names)}
        self.relation_index: dict[str, int] = {n: i for i, n in enumerate(self.relation_names)}
        if len(self.entity_index) != len(self.entity_names):
            raise UsageError("entity names must be unique")
        if len(self.relation_index) != len(self.relation_names):
            raise UsageError("relation names must be unique")

        self.heads = _frozen(np.ascontiguousarray(heads, dtype=np.int64))
        self.rels = _frozen(np.ascontiguousarray(rels, dtype=np.int64))
        self.tails = _frozen(np.ascontiguousarray(tails, dtype=np.int64))
        n_t = len(self.heads)
        if n_t == 0:
            raise EmptyGraphError("graph has no triples")
        if not (len(self.rels) == n_t == len(self.tails)):
            raise UsageError("triple arrays differ in length")
        n_e, n_r = len(self.entity_names), len(self.relation_names)
        if min(self.heads.min(), self.tails.min(), self.rels.min()) < 0:
            raise UsageError("negative id in triple arrays")
        if max(self.heads.max(), self.tails.max()) >= n_e or self.rels.max() >= n_r:
            raise UsageError("triple references an id outside the intern tables")

        self.sanitization_report: tuple[str, ...] = tuple(sanitization_report)

        keys = self._keys(self.heads, self.rels, self.tails)
        self._triple_lookup: dict[int, int] = dict(zip(keys.tolist(), range(n_t)))
        if len(self._triple_lookup) != n_t:
            raise UsageError("duplicate triples; build through from_arrays to deduplicate")

        self._build_adjacency()

        self.relation_freq = _frozen(np.bincount(self.rels, minlength=n_r).astype(np.int64))
        if (self.relation_freq == 0).any():
            raise UsageError("every interned relation must occur in at least one triple")
        self.degree = _frozen(np.diff(self.indptr))
        self.hub_penalties = _frozen(np.log1p(self.degree.astype(np.float64)))
        self.idf_values = _frozen(np.log(n_t / self.relation_freq.astype(np.float64)))
        self.hub_penalty_max = float(self.hub_penalties.max())
        self.idf_max = float(self.idf_values.max())

    # ------------------------------------------------------------------ build

    def _keys(self, h: np.ndarray, r: np.ndarray, t: np.ndarray) -> np.ndarray:
        n_e, n_r = len(self.entity_names), len(self.relation_names)
        return (h * n_r + r) * n_e + t

    def _build_adjacency(self) -> None:
        n_e = len(self.entity_names)
        h, t = self.heads, self.tails
        tid = np.arange(len(h), dtype=np.int64)
        loop = h == t
        nonloop = ~loop
        # a self-loop contributes one adjacency entry (degree 1)
        src = np.concatenate([h, t[nonloop]])
        dst = np.concatenate([t, h[nonloop]])
        dirs = np.concatenate([np.where(loop, LOOP, OUT), np.full(int(nonloop.sum()), IN)])
        tids = np.concatenate([tid, tid[nonloop]])
        order = np.argsort(src, kind="stable")
        counts = np.bincount(src, minlength=n_e)
        indptr = np.zeros(n_e + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        self.indptr = _frozen(indptr)
        self.adj_nbr = _frozen(dst[order])
        self.adj_rel = _frozen(self.rels[tids[order]])
        self.adj_dir = _frozen(dirs[order].astype(np.int8))
        self.adj_triple = _frozen(tids[order])

    @classmethod
    def from_arrays(
        cls,
        heads: Sequence[int] | np.ndarray,
        rels: Sequence[int] | np.ndarray,
        tails: Sequence[int] | np.ndarray,
        entity_names: Sequence[str],
        relation_names: Sequence[str],
        sanitization_report: Sequence[str] = (),
    ) -> "KnowledgeGraph":
        """Build from id arrays, dropping duplicate triples (first occurrence wins)."""
        h = np.asarray(heads, dtype=np.int64)
        r = np.asarray(rels, dtype=np.int64)
        t = np.asarray(tails, dtype=np.int64)
        if len(h) == 0:
            raise EmptyGraphError("graph has no triples")
        n_e, n_r = len(entity_names), len(relation_names)
        keys = (h * n_r + r) * n_e + t
        _, first = np.unique(keys, return_index=True)
        first.sort()
        return cls(entity_names, relation_names, h[first], r[first], t[first], sanitization_report)

    @classmethod
    def from_triples(
        cls,
        triples: Iterable[tuple[str, str, str]],
        entities: Sequence[str] = (),
    ) -> "KnowledgeGraph":
        """Build from name triples. ``entities`` pre-seeds the intern order."""
        ent: dict[str, int] = {}
        rel: dict[str, int] = {}
        for name in entities:
            ent.setdefault(name, len(ent))
        hs: list[int] = []
        rs: list[int] = []
        ts: list[int] = []
        for h, r, t in triples:
            if not (_is_clean(h) and _is_clean(r) and _is_clean(t)):
                raise UsageError(f"reserved character in triple {(h, r, t)!r}")
            hs.append(ent.setdefault(h, len(ent)))
            rs.append(rel.setdefault(r, len(rel)))
            ts.append(ent.setdefault(t, len(ent)))
        used = set(hs) | set(ts)
        if len(used) != len(ent):
            # drop pre-seeded names that never occur in a triple
            keep = [n for n, i in ent.items() if i in used]
            remap = {ent[n]: j for j, n in enumerate(keep)}
            hs = [remap[i] for i in hs]
            ts = [remap[i] for i in ts]
            ent = {n: j for j, n in enumerate(keep)}
        return cls.from_arrays(hs, rs, ts, list(ent), list(rel))

    # ----------------------------------------------------------------- lookup

    @property
    def num_entities(self) -> int:
        return len(self.entity_names)

    @property
    def num_relations(self) -> int:
        return len(self.relation_names)

    @property
    def triple_count(self) -> int:
        return len(self.heads)

    def check_entity(self, e: int) -> int:
        if not isinstance(e, (int, np.integer)) or not 0 <= e < len(self.entity_names):
            raise UnknownEntityError(f"unknown entity id {e!r}")
        return int(e)

    def check_relation(self, r: int) -> int:
        if not isinstance(r, (int, np.integer)) or not 0 <= r < len(self.relation_names):
            raise UnknownRelationError(f"unknown relation id {r!r}")
        return int(r)

    def entity_id(self, name: str) -> int:
        try:
            return self.entity_index[name]
        except KeyError:
            raise UnknownEntityError(f"unknown entity {name!r}") from None

    def relation_id(self, name: str) -> int:
        try:
            return self.relation_index[name]
        except KeyError:
            raise UnknownRelationError(f"unknown relation {name!r}") from None

    def triple(self, tid: int) -> tuple[int, int, int]:
        return int(self.heads[tid]), int(self.rels[tid]), int(self.tails[tid])

    def triple_names(self, tid: int) -> tuple[str, str, str]:
        h, r, t = self.triple(tid)
        return self.entity_names[h], self.relation_names[r], self.entity_names[t]

    def find_triple(self, h: int, r: int, t: int) -> int | None:
        """Return the stored triple id for ``(h, r, t)`` or ``None``."""
        n_e, n_r = len(self.entity_names), len(self.relation_names)
        return self._triple_lookup.get((h * n_r + r) * n_e + t)

    def neighbors(self, e: int) -> Iterator[tuple[int, int, int, int]]:
        """Yield ``(neighbor, relation, direction, triple id)`` adjacency entries of ``e``."""
        e = self.check_entity(e)
        lo, hi = self.indptr[e], self.indptr[e + 1]
        yield from zip(
            self.adj_nbr[lo:hi].tolist(),
            self.adj_rel[lo:hi].tolist(),
            self.adj_dir[lo:hi].tolist(),
            self.adj_triple[lo:hi].tolist(),
        )

    def hub_penalty(self, e: int) -> float:
        return float(self.hub_penalties[self.check_entity(e)])

    def idf(self, r: int) -> float:
        return float(self.idf_values[self.check_relation(r)])

    def gather_neighbors(self, nodes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return (neighbor ids, triple ids) of all adjacency entries of ``nodes``."""
        starts = self.indptr[nodes]
        counts = self.indptr[nodes + 1] - starts
        total = int(counts.sum())
        if total == 0:
            empty = np.empty(0, dtype=np.int64)
            return empty, empty
        offsets = np.repeat(starts - (np.cumsum(counts) - counts), counts)
        idx = offsets + np.arange(total, dtype=np.int64)
        return self.adj_nbr[idx], self.adj_triple[idx]

    def __repr__(self) -> str:
        return (
            f"KnowledgeGraph(entities={self.num_entities}, relations={self.num_relations}, "
            f"triples={self.triple_count})"
        )


@dataclass(frozen=True)
class Subgraph:
    """A node set plus a triple-id set referencing a parent graph."""

    parent: KnowledgeGraph = field(compare=False, repr=False)
    nodes: frozenset[int]
    triples: frozenset[int]

    @classmethod
    def from_triples(
        cls, parent: KnowledgeGraph, triple_ids: Iterable[int], extra_nodes: Iterable[int] = ()
    ) -> "Subgraph":
        tids = frozenset(int(t) for t in triple_ids)
        nodes = set(int(n) for n in extra_nodes)
        for tid in tids:
            nodes.add(int(parent.heads[tid]))
            nodes.add(int(parent.tails[tid]))
        return cls(parent, frozenset(nodes), tids)

    @classmethod
    def induced(cls, parent: KnowledgeGraph, nodes: Iterable[int], within: Iterable[int]) -> "Subgraph":
        """Subgraph on ``nodes`` with every triple of ``within`` whose endpoints are in ``nodes``."""
        ns = frozenset(int(n) for n in nodes)
        h, t = parent.heads, parent.tails
        tids = frozenset(tid for tid in within if int(h[tid]) in ns and int(t[tid]) in ns)
        return cls(parent, ns, tids)

    def validate(self) -> None:
        g = self.parent
        for n in self.nodes:
            g.check_entity(n)
        for tid in self.triples:
            if not 0 <= tid < g.triple_count:
                raise UsageError(f"triple id {tid} not in parent graph")
            if int(g.heads[tid]) not in self.nodes or int(g.tails[tid]) not in self.nodes:
                raise UsageError(f"triple {tid} has an endpoint outside the node set")

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    def sorted_nodes(self) -> tuple[int, ...]:
        return tuple(sorted(self.nodes))

    def relation_ids(self) -> frozenset[int]:
        rels = self.parent.rels
        return frozenset(int(rels[t]) for t in self.triples)

    def adjacency(self) -> dict[int, set[int]]:
        """Distinct-neighbor sets of the undirected projection."""
        adj: dict[int, set[int]] = {n: set() for n in self.nodes}
        h, t = self.parent.heads, self.parent.tails
        for tid in self.triples:
            a, b = int(h[tid]), int(t[tid])
            adj[a].add(b)
            adj[b].add(a)
        return adj

    def components(self) -> list[set[int]]:
        """Connected components of the undirected projection, as node sets."""
        parent = {n: n for n in self.nodes}

        def find(x: int) -> int:
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        h, t = self.parent.heads, self.parent.tails
        for tid in self.triples:
            ra, rb = find(int(h[tid])), find(int(t[tid]))
            if ra != rb:
                parent[ra] = rb
        groups: dict[int, set[int]] = {}
        for n in self.nodes:
            groups.setdefault(find(n), set()).add(n)
        return list(groups.values())

    def connects(self, seeds: Iterable[int]) -> bool:
        """True when every seed is present and all lie in one component."""
        seeds = set(seeds)
        if not seeds <= self.nodes:
            return False
        return any(seeds <= comp for comp in self.components())

    def name_triples(self) -> list[tuple[str, str, str]]:
        return [self.parent.triple_names(t) for t in sorted(self.triples)]


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def _read_lines(path: Path) -> Iterator[tuple[int, str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        for line_no, raw in enumerate(fh, 1):
            yield line_no, raw.rstrip("\n").rstrip("\r")


def load_aliases(path: str | Path, delimiter: str = "\t") -> dict[str, str]:
    """Read a ``raw_id<TAB>human_name`` alias file."""
    aliases: dict[str, str] = {}
    for line_no, line in _read_lines(Path(path)):
        if not line.strip():
            continue
        parts = line.split(delimiter)
        if len(parts) != 2:
            raise GraphParseError(f"expected 2 fields, got {len(parts)}", line_no)
        raw, name = parts[0].strip(), parts[1].strip()
        if raw and name:
            aliases.setdefault(raw, name)
    return aliases


def load_tsv(
    path: str | Path | Sequence[str | Path],
    *,
    delimiter: str = "\t",
    aliases: Mapping[str, str] | str | Path | None = None,
) -> KnowledgeGraph:
    """Load ``head<TAB>relation<TAB>tail`` lines into a :class:`KnowledgeGraph`.

    Several paths are concatenated in order (e.g. train/valid/test splits).
    Names are trimmed of surrounding whitespace and otherwise kept byte-exact.
    Triples whose names contain ``"`` or ``|`` are skipped and listed in the
    graph's ``sanitization_report``. Entity aliases (raw id to display name)
    are applied after interning; an alias that is unusable or collides with an
    earlier name falls back to a disambiguated form and is reported.
    """
    paths = [Path(path)] if isinstance(path, (str, Path)) else [Path(p) for p in path]
    report: list[str] = []
    ent: dict[str, int] = {}
    rel: dict[str, int] = {}
    hs: list[int] = []
    rs: list[int] = []
    ts: list[int] = []
    for p in paths:
        for line_no, line in _read_lines(p):
            if not line.strip():
                continue
            parts = line.split(delimiter)
            if len(parts) != 3:
                raise GraphParseError(f"{p.name}: expected 3 fields, got {len(parts)}", line_no)
            h, r, t = (x.strip() for x in parts)
            if not (h and r and t):
                raise GraphParseError(f"{p.name}: empty field", line_no)
            if not (_is_clean(h) and _is_clean(r) and _is_clean(t)):
                report.append(f"{p.name}:{line_no}: skipped triple with reserved character")
                continue
            hs.append(ent.setdefault(h, len(ent)))
            rs.append(rel.setdefault(r, len(rel)))
            ts.append(ent.setdefault(t, len(ent)))
    if not hs:
        raise EmptyGraphError(f"no triples in {', '.join(str(p) for p in paths)}")

    names = list(ent)
    if aliases is not None:
        if not isinstance(aliases, Mapping):
            aliases = load_aliases(aliases, delimiter)
        names = _apply_aliases(names, aliases, report)

    for msg in report:
        logger.warning(msg)
    return KnowledgeGraph.from_arrays(hs, rs, ts, names, list(rel), report)


def _apply_aliases(raw_names: list[str], aliases: Mapping[str, str], report: list[str]) -> list[str]:
    out: list[str] = []
    taken: set[str] = set()
    # raw names without an alias keep their identity and must not be shadowed
    reserved = {n for n in raw_names if n not in aliases}
    for raw in raw_names:
        name = aliases.get(raw)
        if name is None:
            name = raw
        elif not _is_clean(name):
            report.append(f"alias for {raw!r} contains a reserved character; kept raw id")
            name = raw
        elif name in taken or (name in reserved and name != raw):
            report.append(f"alias {name!r} for {raw!r} collides; disambiguated")
            name = f"{name} [{raw}]"
        while name in taken:
            name = f"{name}'"
        taken.add(name)
        out.append(name)
    return out


def save_tsv(g: KnowledgeGraph, path: str | Path) -> None:
    """Write the graph as ``head<TAB>relation<TAB>tail`` lines in triple-id order."""
    en, rn = g.entity_names, g.relation_names
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for h, r, t in zip(g.heads.tolist(), g.rels.tolist(), g.tails.tolist()):
            fh.write(f"{en[h]}\t{rn[r]}\t{en[t]}\n")


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------


def hub_penalty(g: KnowledgeGraph, e: int) -> float:
    """``log(1 + deg(e))`` with the natural logarithm."""
    return g.hub_penalty(e)


def idf(g: KnowledgeGraph, r: int) -> float:
    """``log(|T| / freq(r))`` with the natural logarithm."""
    return g.idf(r)


def ball(
    g: KnowledgeGraph, sources: Sequence[int] | np.ndarray, k: int
) -> tuple[np.ndarray, np.ndarray]:
    """Multi-source truncated BFS on the undirected projection.

    Returns ``(nodes, dist)`` arrays, nodes sorted ascending.
    """
    if k < 0:
        raise UsageError("hop bound must be >= 0")
    src = np.unique(np.asarray([g.check_entity(s) for s in sources], dtype=np.int64))
    dist = np.full(g.num_entities, -1, dtype=np.int64)
    dist[src] = 0
    frontier = src
    for depth in range(1, k + 1):
        if frontier.size == 0:
            break
        nbrs, _ = g.gather_neighbors(frontier)
        nbrs = np.unique(nbrs)
        frontier = nbrs[dist[nbrs] < 0]
        dist[frontier] = depth
    nodes = np.flatnonzero(dist >= 0)
    return nodes, dist[nodes]


def bounded_bfs(g: KnowledgeGraph, source: int, k: int) -> dict[int, int]:
    """Map every entity within ``k`` undirected hops of ``source`` to its distance."""
    nodes, dist = ball(g, [source], k)
    return dict(zip(nodes.tolist(), dist.tolist()))


def induced_triples(g: KnowledgeGraph, nodes: np.ndarray) -> np.ndarray:
    """Sorted ids of triples with both endpoints in ``nodes``."""
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size == 0:
        return np.empty(0, dtype=np.int64)
    mask = np.zeros(g.num_entities, dtype=bool)
    mask[nodes] = True
    if nodes.size * 8 < g.num_entities:
        # small region: walk adjacency instead of scanning every triple
        _, tids = g.gather_neighbors(nodes)
        tids = np.unique(tids)
        keep = mask[g.heads[tids]] & mask[g.tails[tids]]
        return tids[keep]
    return np.flatnonzero(mask[g.heads] & mask[g.tails])

