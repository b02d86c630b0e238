"""Exhaustive search for the reward-optimal answer inside a retrieved subgraph.

Candidate space for a base subgraph ``B`` and seeds ``S_q``:

* every node set ``V`` with ``S_q <= V``, ``|V| <= budget`` whose induced
  subgraph in ``B`` is connected;
* for each such ``V``: the induced triple set, plus one spanning tree per
  minimal relation set ``Q`` (relations whose triples alone connect ``V``,
  no proper subset doing so). The tree is the minimum spanning tree under
  triple-id weights, i.e. Kruskal over ascending triple ids.

Minimal relation sets are visited by size, then lexicographically, and at
most ``relation_cap`` are kept per node set. The reward of an answer depends
only on its entity set and relation set, so this space contains the optimum
whenever no cap truncates it.
"""

from __future__ import annotations

import itertools
import sys
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import UsageError
from .kg import Subgraph
from .verifier import RewardBreakdown, RewardConfig, score_subgraph


@dataclass
class CandidateSet:
    base: Subgraph
    seeds: tuple[int, ...]
    candidates: list[Subgraph]
    breakdowns: list[RewardBreakdown]
    truncated: bool = False
    stats: dict[str, int] = field(default_factory=dict)

    @property
    def rewards(self) -> list[float]:
        return [b.total for b in self.breakdowns]

    def __len__(self) -> int:
        return len(self.candidates)


def candidate_key(sub: Subgraph) -> tuple:
    return (sub.node_count, sub.sorted_nodes(), tuple(sorted(sub.triples)))


class _UnionFind:
    __slots__ = ("parent", "count")

    def __init__(self, items: Iterable[int]) -> None:
        self.parent = {x: x for x in items}
        self.count = len(self.parent)

    def find(self, x: int) -> int:
        p = self.parent
        while p[x] != x:
            p[x] = p[p[x]]
            x = p[x]
        return x

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[ra] = rb
        self.count -= 1
        return True


def triple_refinements(
    base: Subgraph,
    nodes: frozenset[int],
    relation_cap: int = 32,
    combo_limit: int = 4096,
) -> tuple[list[frozenset[int]], bool]:
    """Triple sets for one node set: induced set plus minimal-relation spanning trees.

    Returns ``(triple sets, truncated)``; duplicates removed, induced set first.
    """
    g = base.parent
    heads, rels, tails = g.heads, g.rels, g.tails
    induced = sorted(t for t in base.triples if int(heads[t]) in nodes and int(tails[t]) in nodes)
    by_rel: dict[int, list[int]] = {}
    node_rels: dict[int, set[int]] = {v: set() for v in nodes}
    for t in induced:
        r = int(rels[t])
        by_rel.setdefault(r, []).append(t)
        node_rels[int(heads[t])].add(r)
        node_rels[int(tails[t])].add(r)
    out = [frozenset(induced)]
    seen = {out[0]}
    relations = sorted(by_rel)
    minimal: list[frozenset[int]] = []
    examined = 0
    truncated = False
    n = len(nodes)
    for size in range(1, min(len(relations), n - 1) + 1):
        for combo in itertools.combinations(relations, size):
            examined += 1
            if examined > combo_limit:
                truncated = True
                break
            q = frozenset(combo)
            if any(prev <= q for prev in minimal):
                continue
            if any(not (node_rels[v] & q) for v in nodes):
                continue
            uf = _UnionFind(nodes)
            tree = []
            for t in sorted(itertools.chain.from_iterable(by_rel[r] for r in combo)):
                if uf.union(int(heads[t]), int(tails[t])):
                    tree.append(t)
            if uf.count != 1:
                continue
            minimal.append(q)
            ts = frozenset(tree)
            if ts not in seen:
                seen.add(ts)
                out.append(ts)
            if len(minimal) >= relation_cap:
                break
        if truncated or len(minimal) >= relation_cap:
            break
    return out, truncated


def connected_seed_sets(
    base: Subgraph, seeds: Sequence[int], budget: int, max_states: int = 500_000
) -> tuple[list[frozenset[int]], bool]:
    """All connected node sets of ``base`` containing every seed, size <= ``budget``.

    Grows sets from the first seed; each connected set is generated exactly
    once by excluding already-branched extension nodes. Subtrees that cannot
    reach a missing seed within the budget are skipped.
    """
    adj = base.adjacency()
    for v in adj:
        adj[v].discard(v)
    root = seeds[0]
    others = list(seeds[1:])
    dist = {s: _bfs_dist(adj, s) for s in others}
    found: list[frozenset[int]] = []
    states = 0
    truncated = False

    def need(mind: tuple[float, ...]) -> float:
        return max(mind, default=0)

    def grow(members: frozenset[int], ext: list[int], excluded: set[int], mind: tuple[float, ...]) -> None:
        nonlocal states, truncated
        states += 1
        if states > max_states:
            truncated = True
            return
        if all(d == 0 for d in mind):
            found.append(members)
        if len(members) >= budget:
            return
        ext = list(ext)
        excluded = set(excluded)
        while ext:
            if truncated:
                return
            v = ext.pop(0)
            excluded.add(v)
            new_mind = tuple(min(m, dist[s].get(v, float("inf"))) for m, s in zip(mind, others))
            if len(members) + 1 + need(new_mind) > budget:
                continue
            new_members = members | {v}
            new_ext = ext + sorted(u for u in adj[v] if u not in new_members and u not in excluded and u not in ext)
            grow(new_members, new_ext, excluded, new_mind)

    start_mind = tuple(float(dist[s].get(root, float("inf"))) for s in others)
    if 1 + need(start_mind) <= budget:
        limit = sys.getrecursionlimit()
        sys.setrecursionlimit(max(limit, 4 * budget + 100))
        try:
            grow(frozenset([root]), sorted(adj[root]), {root}, start_mind)
        finally:
            sys.setrecursionlimit(limit)
    return found, truncated


def _bfs_dist(adj: dict[int, set[int]], src: int) -> dict[int, int]:
    dist = {src: 0}
    queue = deque([src])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def enumerate_candidates(
    base: Subgraph,
    seeds: Sequence[int],
    budget: int = 24,
    cap: int = 4096,
    cfg: RewardConfig | None = None,
    relation_cap: int = 32,
) -> CandidateSet:
    """Enumerate and score seed-connected candidate answers within ``base``."""
    seeds = tuple(int(s) for s in seeds)
    if len(seeds) < 2 or len(set(seeds)) != len(seeds):
        raise UsageError("need at least two distinct seeds")
    if not base.connects(seeds):
        raise UsageError("base subgraph does not connect the seeds")
    if budget < len(seeds):
        raise UsageError("budget is smaller than the number of seeds")
    cfg = cfg or RewardConfig.for_graph(base.parent)

    node_sets, truncated = connected_seed_sets(base, seeds, budget)
    node_sets.sort(key=lambda s: (len(s), sorted(s)))
    candidates: list[Subgraph] = []
    for ns in node_sets:
        triple_sets, cut = triple_refinements(base, ns, relation_cap)
        truncated |= cut
        for ts in triple_sets:
            candidates.append(Subgraph(base.parent, ns, ts))
        if len(candidates) >= cap:
            truncated = True
            candidates = candidates[:cap]
            break
    candidates.sort(key=candidate_key)
    breakdowns = [score_subgraph(c, seeds, cfg) for c in candidates]
    return CandidateSet(
        base, seeds, candidates, breakdowns, truncated, {"node_sets": len(node_sets)}
    )


def optimal_index(cs: CandidateSet) -> int:
    if not cs.candidates:
        raise UsageError("empty candidate set")

    def key(i: int) -> tuple:
        c = cs.candidates[i]
        return (-cs.breakdowns[i].total, len(c.triples), c.node_count, c.sorted_nodes(), tuple(sorted(c.triples)))

    return min(range(len(cs.candidates)), key=key)


def optimal_answer(cs: CandidateSet) -> tuple[Subgraph, float]:
    """Highest-reward candidate; ties prefer fewer triples, then fewer nodes."""
    i = optimal_index(cs)
    return cs.candidates[i], cs.breakdowns[i].total
