"""Seed-driven subgraph selection and multi-stage pruning.

Pipeline for a seed set ``e_1..e_m``:

* selection: union of the k-hop neighbourhoods of every seed;
* stage 1: drop non-seed hubs (hub penalty >= rho) per neighbourhood, then
  keep only the seed's connected component of what remains;
* stage 2: auxiliary graph over neighbourhoods, edge where two intersect;
  relax rho until it is connected;
* stage 3: queue-based peel of non-seed leaves;
* stage 4: per intersection keep the ``s`` lowest-penalty nodes, grow k hops,
  keep the smallest seed-connected result over the enumerated covers;
* stage 5: shrink ``s`` while the result exceeds the node budget.
"""

from __future__ import annotations

import itertools
import logging
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import UnreachableSeedsError, UsageError
from .kg import KnowledgeGraph, Subgraph, ball, induced_triples

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PruneConfig:
    k: int = 2
    rho_init: float | None = None  # None: median hub penalty of the candidate nodes
    rho_step: float | None = None  # None: (hub_penalty_max - rho_init) / 8
    s_init: int = 3
    node_budget: int = 24
    cover_enum_limit: int = 64

    def validate(self, n_seeds: int) -> None:
        if self.k < 1:
            raise UsageError("k must be >= 1")
        if self.rho_step is not None and self.rho_step <= 0:
            raise UsageError("rho_step must be > 0")
        if self.rho_init is not None and self.rho_init <= 0:
            raise UsageError("rho_init must be > 0")
        if self.s_init < 1:
            raise UsageError("s_init must be >= 1")
        if self.node_budget < n_seeds:
            raise UsageError("node_budget must be at least the number of seeds")
        if self.cover_enum_limit < 1:
            raise UsageError("cover_enum_limit must be >= 1")


@dataclass(frozen=True, eq=False)
class Neighborhood:
    """Per-seed region: sorted entity ids and sorted triple ids."""

    seed: int
    nodes: np.ndarray
    triples: np.ndarray


@dataclass
class StageRecord:
    stage: str
    nodes: int
    triples: int
    rho: float | None = None
    s: int | None = None


@dataclass
class PruningTrace:
    stages: list[StageRecord] = field(default_factory=list)
    rho_schedule: list[float] = field(default_factory=list)
    rho_init: float = 0.0
    rho_step: float = 0.0
    rho_final: float = 0.0
    relaxation_rounds: int = 0
    s_schedule: list[int] = field(default_factory=list)
    s_final: int | None = None
    reduction_rounds: int = 0
    lam: int | None = None
    covers_examined: int = 0
    max_neighborhood_nodes: int = 0
    max_neighborhood_triples: int = 0
    intersection_sizes: dict[str, int] = field(default_factory=dict)
    over_budget: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d


@dataclass
class AuxGraph:
    """Stage-2 auxiliary graph over pruned neighbourhoods."""

    n: int
    edges: list[tuple[int, int]]
    is_connected: bool
    intersections: dict[tuple[int, int], np.ndarray]


# ---------------------------------------------------------------------------
# Selection
# ---------------------------------------------------------------------------


def _check_seeds(g: KnowledgeGraph, seeds: Sequence[int]) -> list[int]:
    out = [g.check_entity(s) for s in seeds]
    if len(set(out)) != len(out):
        raise UsageError("seed entities must be distinct")
    if len(out) < 2:
        raise UsageError("at least two seed entities are required")
    return out


def expand_neighborhoods(g: KnowledgeGraph, seeds: Sequence[int], k: int) -> list[Neighborhood]:
    """k-hop expansion ``V^k(e_i)`` with its induced triples ``T^k(e_i)`` per seed."""
    out = []
    for s in seeds:
        nodes, _ = ball(g, [s], k)
        out.append(Neighborhood(int(s), nodes, induced_triples(g, nodes)))
    return out


def select_candidate(g: KnowledgeGraph, seeds: Sequence[int], k: int) -> Subgraph:
    """Union of the seeds' k-hop neighbourhoods and their induced triples."""
    seeds = _check_seeds(g, seeds)
    if k < 0:
        raise UsageError("k must be >= 0")
    hoods = expand_neighborhoods(g, seeds, k)
    return _union(g, hoods)


def _union(g: KnowledgeGraph, hoods: Sequence[Neighborhood]) -> Subgraph:
    nodes = np.unique(np.concatenate([h.nodes for h in hoods]))
    triples = np.unique(np.concatenate([h.triples for h in hoods]))
    return Subgraph(g, frozenset(nodes.tolist()), frozenset(triples.tolist()))


# ---------------------------------------------------------------------------
# Stage 1
# ---------------------------------------------------------------------------


def local_prune(
    g: KnowledgeGraph,
    hoods: Sequence[Neighborhood],
    rho: float,
    seeds: Iterable[int] | None = None,
) -> list[Neighborhood]:
    """Remove non-seed nodes with hub penalty >= ``rho`` from every neighbourhood.

    Incident triples go with them; each neighbourhood is then cut down to the
    connected component of its own seed, which also discards isolated nodes.
    Linear in the neighbourhood sizes apart from one label array per call.
    """
    if rho <= 0:
        raise UsageError("rho must be > 0")
    seed_arr = np.asarray(sorted({h.seed for h in hoods} if seeds is None else set(seeds)), dtype=np.int64)
    n = g.num_entities
    is_seed = np.zeros(n, dtype=bool)
    is_seed[seed_arr] = True
    hub = g.hub_penalties
    out = []
    for hood in hoods:
        keep_node = (hub[hood.nodes] < rho) | is_seed[hood.nodes]
        kept = hood.nodes[keep_node]
        alive = np.zeros(n, dtype=bool)
        alive[kept] = True
        th, tt = g.heads[hood.triples], g.tails[hood.triples]
        keep_t = alive[th] & alive[tt]
        tids, th, tt = hood.triples[keep_t], th[keep_t], tt[keep_t]
        # seed component over the kept nodes (local relabelling keeps this O(|V|+|T|))
        local = np.full(n, -1, dtype=np.int64)
        local[kept] = np.arange(kept.size)
        graph = coo_matrix(
            (np.ones(tids.size, dtype=np.int32), (local[th], local[tt])), shape=(kept.size, kept.size)
        )
        _, labels = connected_components(graph, directed=False)
        seed_label = labels[local[hood.seed]]
        in_comp = labels == seed_label
        nodes = kept[in_comp]
        keep_t = in_comp[local[th]]
        out.append(Neighborhood(hood.seed, nodes, tids[keep_t]))
    return out


# ---------------------------------------------------------------------------
# Stage 2
# ---------------------------------------------------------------------------


def connectivity_audit(hoods: Sequence[Neighborhood]) -> AuxGraph:
    """Pairwise intersections and connectivity of the auxiliary graph."""
    m = len(hoods)
    inter: dict[tuple[int, int], np.ndarray] = {}
    edges: list[tuple[int, int]] = []
    for i, j in itertools.combinations(range(m), 2):
        a, b = hoods[i].nodes, hoods[j].nodes
        small, large = (a, b) if a.size <= b.size else (b, a)
        common = small[np.isin(small, large, assume_unique=True)]
        inter[(i, j)] = common
        if common.size:
            edges.append((i, j))
    return AuxGraph(m, edges, _index_graph_connected(m, edges), inter)


def _index_graph_connected(m: int, edges: Iterable[tuple[int, int]]) -> bool:
    adj: dict[int, list[int]] = {i: [] for i in range(m)}
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = {0}
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return len(seen) == m


# ---------------------------------------------------------------------------
# Stage 3
# ---------------------------------------------------------------------------


def leaf_prune(sub: Subgraph, seeds: Iterable[int]) -> Subgraph:
    """Peel non-seed nodes with a single distinct neighbour until none remain.

    Non-seed nodes left with no neighbour at all are dropped as well.
    """
    seeds = set(seeds)
    adj = sub.adjacency()
    for v, nb in adj.items():
        nb.discard(v)  # a self-loop is not a neighbour
    queue = deque(sorted(v for v, nb in adj.items() if v not in seeds and len(nb) <= 1))
    removed: set[int] = set()
    while queue:
        v = queue.popleft()
        if v in removed or len(adj[v]) > 1:
            continue
        removed.add(v)
        for u in adj[v]:
            adj[u].discard(v)
            if u not in seeds and u not in removed and len(adj[u]) <= 1:
                queue.append(u)
        adj[v] = set()
    if not removed:
        return sub
    nodes = sub.nodes - removed
    h, t = sub.parent.heads, sub.parent.tails
    triples = frozenset(x for x in sub.triples if int(h[x]) not in removed and int(t[x]) not in removed)
    return Subgraph(sub.parent, nodes, triples)


# ---------------------------------------------------------------------------
# Stage 4
# ---------------------------------------------------------------------------


def enumerate_covers(m: int, pairs: Sequence[tuple[int, int]], limit: int) -> list[tuple[tuple[int, int], ...]]:
    """Minimal connected covers: sets of ``m - 1`` pairs spanning all indices.

    Ordered lexicographically over the sorted pair list, at most ``limit``.
    """
    out = []
    for combo in itertools.combinations(sorted(pairs), m - 1):
        if _index_graph_connected(m, combo):
            out.append(combo)
            if len(out) >= limit:
                break
    return out


def _lowest_penalty(g: KnowledgeGraph, nodes: Iterable[int], s: int) -> list[int]:
    hub = g.hub_penalties
    return sorted(nodes, key=lambda v: (hub[v], v))[:s]


def _restricted_ball(adj: dict[int, set[int]], sources: Iterable[int], region: set[int], k: int) -> set[int]:
    seen = {v for v in sources if v in region}
    frontier = list(seen)
    for _ in range(k):
        nxt = []
        for u in frontier:
            for v in adj.get(u, ()):
                if v in region and v not in seen:
                    seen.add(v)
                    nxt.append(v)
        frontier = nxt
    return seen


def _seed_component(sub: Subgraph, seeds: Sequence[int]) -> Subgraph | None:
    for comp in sub.components():
        if seeds[0] in comp:
            if not set(seeds) <= comp:
                return None
            if len(comp) == sub.node_count:
                return sub
            return Subgraph.induced(sub.parent, comp, sub.triples)
    return None


@dataclass
class CompactResult:
    subgraph: Subgraph | None
    cover: tuple[tuple[int, int], ...] | None
    covers_examined: int


def compactness_control(
    refined: Subgraph,
    hoods: Sequence[Neighborhood],
    aux: AuxGraph,
    seeds: Sequence[int],
    cfg: PruneConfig,
    s: int,
) -> CompactResult:
    """One Stage-4 pass over ``refined`` (the Stage-3 subgraph) with retention size ``s``.

    Retained intersection nodes, their k-hop growth, and the induced triples all
    stay inside ``refined``. Candidates that fail to connect every seed are
    discarded; ``subgraph`` is ``None`` when no cover produced a valid one.
    """
    if s < 1:
        raise UsageError("s must be >= 1")
    if not aux.is_connected:
        raise UsageError("compactness control needs a connected auxiliary graph")
    g = refined.parent
    m = len(seeds)
    live = refined.nodes
    pairs = [p for p, common in aux.intersections.items() if common.size]
    covers = enumerate_covers(m, pairs, cfg.cover_enum_limit)
    assert covers, "connected auxiliary graph always has a spanning cover"

    adj = refined.adjacency()
    hood_sets = [set(h.nodes.tolist()) & live for h in hoods]
    grown: dict[tuple[int, int], set[int] | None] = {}
    for i, j in pairs:
        kept = _lowest_penalty(g, (v for v in aux.intersections[(i, j)].tolist() if v in live), s)
        if not kept:
            grown[(i, j)] = None
            continue
        grown[(i, j)] = _restricted_ball(adj, kept, hood_sets[i] | hood_sets[j], cfg.k)

    best: Subgraph | None = None
    best_cover = None
    best_key: tuple | None = None
    for cover in covers:
        parts = [grown[p] for p in cover]
        if any(part is None for part in parts):
            continue
        nodes = set().union(*parts) | set(seeds)
        cand = leaf_prune(Subgraph.induced(g, nodes, refined.triples), seeds)
        cand = _seed_component(cand, seeds)
        if cand is None:
            continue
        key = (cand.node_count, cand.sorted_nodes())
        if best_key is None or key < best_key:
            best, best_cover, best_key = cand, cover, key
    return CompactResult(best, best_cover, len(covers))


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------


def _record(trace: PruningTrace, stage: str, sub_nodes: int, sub_triples: int, **kw) -> None:
    trace.stages.append(StageRecord(stage, sub_nodes, sub_triples, **kw))


def retrieve(
    g: KnowledgeGraph, seeds: Sequence[int], cfg: PruneConfig | None = None
) -> tuple[Subgraph, PruningTrace]:
    """Run selection and the five pruning stages; return the subgraph and its trace."""
    cfg = cfg or PruneConfig()
    seeds = _check_seeds(g, seeds)
    cfg.validate(len(seeds))
    trace = PruningTrace()

    hoods = expand_neighborhoods(g, seeds, cfg.k)
    candidate = _union(g, hoods)
    _record(trace, "select", candidate.node_count, len(candidate.triples))

    hub_max = g.hub_penalty_max
    cand_nodes = np.fromiter(candidate.nodes, dtype=np.int64, count=candidate.node_count)
    rho = cfg.rho_init if cfg.rho_init is not None else float(np.median(g.hub_penalties[cand_nodes]))
    rho = max(rho, 1e-12)
    step = cfg.rho_step if cfg.rho_step is not None else (hub_max - rho) / 8
    if step <= 0:
        step = max(hub_max, 1.0) / 8
    cap = max(hub_max + step, rho)
    trace.rho_init, trace.rho_step = rho, step

    while True:
        trace.relaxation_rounds += 1
        trace.rho_schedule.append(rho)
        pruned = local_prune(g, hoods, rho, seeds)
        union = _union(g, pruned)
        _record(trace, "local_prune", union.node_count, len(union.triples), rho=rho)
        aux = connectivity_audit(pruned)
        if aux.is_connected:
            break
        if rho >= cap:
            raise UnreachableSeedsError(
                f"seeds cannot be connected through their {cfg.k}-hop neighbourhoods"
            )
        rho = min(rho + step, cap)

    trace.rho_final = rho
    trace.max_neighborhood_nodes = max(h.nodes.size for h in pruned)
    trace.max_neighborhood_triples = max(h.triples.size for h in pruned)
    trace.intersection_sizes = {f"{i},{j}": int(v.size) for (i, j), v in aux.intersections.items()}

    refined = leaf_prune(union, seeds)
    _record(trace, "leaf_prune", refined.node_count, len(refined.triples), rho=rho)
    result = refined

    if refined.node_count > cfg.node_budget:
        s = cfg.s_init
        while True:
            trace.reduction_rounds += 1
            trace.s_schedule.append(s)
            res = compactness_control(refined, pruned, aux, seeds, cfg, s)
            trace.covers_examined += res.covers_examined
            if res.cover is not None:
                trace.lam = len(res.cover)
            if res.subgraph is not None and res.subgraph.node_count < result.node_count:
                result = res.subgraph
            _record(trace, "compactness", result.node_count, len(result.triples), rho=rho, s=s)
            trace.s_final = s
            if result.node_count <= cfg.node_budget or s == 1:
                break
            s -= 1
        trace.over_budget = result.node_count > cfg.node_budget

    if not result.connects(seeds):  # pragma: no cover - guarded by construction
        raise AssertionError("retrieval lost seed connectivity")
    return result, trace
