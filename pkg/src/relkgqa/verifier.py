"""Rule-based composite reward for relational answers.

``R(a) = R_fmt + R_con + (R_ent / x + R_rel / y) / 2`` with the two
short circuits: a format failure scores ``-floor(m/2) - 2`` and a fully
disconnected answer scores ``-floor(m/2)``.
"""

from __future__ import annotations

import operator
from dataclasses import asdict, dataclass
from typing import Sequence

from .answer import ParsedAnswer
from .errors import UsageError
from .kg import KnowledgeGraph, Subgraph

NONE, FORMAT_FAIL, FULLY_DISCONNECTED = "none", "format_fail", "fully_disconnected"


@dataclass(frozen=True)
class RewardConfig:
    x: float = 7.0
    y: float = 6.0
    hub_penalty_max: float = 1.0
    idf_max: float = 1.0
    clamp_oversize: bool = True

    def __post_init__(self) -> None:
        if self.x < 1 or self.y < 1:
            raise UsageError("normalization constants x and y must be >= 1")
        if self.hub_penalty_max <= 0:
            raise UsageError("hub_penalty_max must be > 0")
        if self.idf_max < 0:
            raise UsageError("idf_max must be >= 0")

    @classmethod
    def for_graph(
        cls, g: KnowledgeGraph, x: float = 7.0, y: float = 6.0, clamp_oversize: bool = True
    ) -> "RewardConfig":
        return cls(x, y, g.hub_penalty_max, g.idf_max, clamp_oversize)


@dataclass(frozen=True)
class RewardBreakdown:
    r_fmt: int
    r_con: int | None
    r_ent: float | None
    r_rel: float | None
    total: float
    short_circuit: str
    m: int
    connected_seeds: int
    oversize: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def lower_bound(m: int) -> int:
    return -(m // 2) - 2


def upper_bound(m: int) -> int:
    """Exclusive upper bound ``ceil(m/2)``."""
    return -(-m // 2)


def _check_seeds(g: KnowledgeGraph, seeds: Sequence[int]) -> list[int]:
    out = []
    for s in seeds:
        try:
            s = operator.index(s)
        except TypeError:
            raise UsageError(f"seed {s!r} is not an entity id") from None
        if not 0 <= s < g.num_entities:
            raise UsageError(f"seed {s!r} is not an entity of the answer's graph")
        out.append(s)
    if len(out) < 2 or len(set(out)) != len(out):
        raise UsageError("scoring needs at least two distinct seeds")
    return out


def max_seed_group(answer: Subgraph, seeds: Sequence[int]) -> int:
    """Largest number of seeds sharing one component (absent seeds are singletons)."""
    seed_set = set(seeds)
    best = 1
    for comp in answer.components():
        best = max(best, len(comp & seed_set))
    return best


def connectivity_reward(answer: Subgraph, seeds: Sequence[int]) -> int:
    """``-floor(m/2) + l`` where ``l + 1`` seeds share the best component."""
    m = len(seeds)
    if m < 2:
        raise UsageError("connectivity reward needs at least two seeds")
    return -(m // 2) + max_seed_group(answer, seeds) - 1


def entity_informativeness(answer: Subgraph, cfg: RewardConfig) -> float:
    hub = answer.parent.hub_penalties
    return -sum(float(hub[e]) / cfg.hub_penalty_max for e in sorted(answer.nodes))


def relation_term(idf_value: float, idf_max: float) -> float:
    # every relation equally frequent: none is informative
    if idf_max == 0:
        return -1.0
    return idf_value / idf_max - 1.0


def relation_informativeness(answer: Subgraph, cfg: RewardConfig) -> float:
    idf = answer.parent.idf_values
    return sum(relation_term(float(idf[r]), cfg.idf_max) for r in sorted(answer.relation_ids()))


def _clamp(v: float, clamp: bool) -> tuple[float, bool]:
    if v < -1.0:
        return (-1.0, True) if clamp else (v, True)
    return v, False


def score_subgraph(answer: Subgraph, seeds: Sequence[int], cfg: RewardConfig) -> RewardBreakdown:
    """Score a well-formatted, grounded answer subgraph."""
    seeds = _check_seeds(answer.parent, seeds)
    m = len(seeds)
    group = max_seed_group(answer, seeds)
    r_con = -(m // 2) + group - 1
    if r_con == -(m // 2):
        return RewardBreakdown(1, r_con, None, None, float(-(m // 2)), FULLY_DISCONNECTED, m, group)
    r_ent = entity_informativeness(answer, cfg)
    r_rel = relation_informativeness(answer, cfg)
    ent_part, over_e = _clamp(r_ent / cfg.x, cfg.clamp_oversize)
    rel_part, over_r = _clamp(r_rel / cfg.y, cfg.clamp_oversize)
    total = 1 + r_con + 0.5 * (ent_part + rel_part)
    return RewardBreakdown(1, r_con, r_ent, r_rel, total, NONE, m, group, over_e or over_r)


def score(parsed: ParsedAnswer, seeds: Sequence[int], cfg: RewardConfig) -> RewardBreakdown:
    """Composite reward of a parsed answer for the query's seed entities."""
    seeds = _check_seeds(parsed.graph, seeds)
    m = len(seeds)
    if not parsed.format_ok:
        return RewardBreakdown(-1, None, None, None, float(lower_bound(m)), FORMAT_FAIL, m, 0)
    return score_subgraph(parsed.grounded, seeds, cfg)
