"""Batch metrics: connectivity ladder, average reward, subgraph F1, informativeness."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterable

from .errors import UsageError
from .kg import Subgraph
from .verifier import RewardBreakdown


def subgraph_f1(pred: Subgraph, ref: Subgraph) -> tuple[float, float, float]:
    """Triple-level ``(precision, recall, f1)``; empty denominators count as 0."""
    overlap = len(pred.triples & ref.triples)
    p = overlap / len(pred.triples) if pred.triples else 0.0
    r = overlap / len(ref.triples) if ref.triples else 0.0
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f1


@dataclass(frozen=True)
class QueryResult:
    """One scored answer and its reference."""

    breakdown: RewardBreakdown
    pred: Subgraph
    ref: Subgraph | None = None

    @property
    def m(self) -> int:
        return self.breakdown.m

    def row(self) -> dict:
        p, r, f1 = subgraph_f1(self.pred, self.ref) if self.ref is not None else (0.0, 0.0, 0.0)
        return {
            "total": self.breakdown.total,
            "r_fmt": self.breakdown.r_fmt,
            "connected_seeds": self.breakdown.connected_seeds,
            "precision": p,
            "recall": r,
            "f1": f1,
            "triples": len(self.pred.triples),
        }


@dataclass
class EvalReport:
    n_queries: int
    m: int
    connectivity_ratio: float
    avg_reward: float
    subgraph_f1: float
    format_pct: float
    i_rel: float
    i_ent: float
    ladder: dict[str, float] = field(default_factory=dict)
    rows: list[dict] = field(default_factory=list)

    def table_row(self) -> str:
        """``(connectivity %, avg reward, F1)`` as printed in result tables."""
        return f"({100 * self.connectivity_ratio:.1f}%, {self.avg_reward:.2f}, {self.subgraph_f1:.1f})"

    def to_dict(self, with_rows: bool = True) -> dict:
        d = asdict(self)
        if not with_rows:
            d.pop("rows")
        return d


def _ladder_bucket(connected: int, m: int) -> str | None:
    # each answer counts once, at the largest group of seeds it joins
    if connected >= m:
        return "full"
    if connected == 3:
        return "triple"
    if connected == 2:
        return "pairwise"
    return None


def aggregate(batch: Iterable[QueryResult], m: int | None = None) -> EvalReport:
    results = list(batch)
    if not results:
        raise UsageError("cannot aggregate an empty batch")
    ms = {r.m for r in results}
    if len(ms) != 1 or (m is not None and ms != {m}):
        raise UsageError(f"mixed seed counts in batch: {sorted(ms)}")
    m = ms.pop()
    n = len(results)

    counts = {"full": 0, "triple": 0, "pairwise": 0}
    total = f1_sum = 0.0
    fmt_ok = 0
    rel_sum = ent_sum = 0.0
    n_conn = 0
    rows = []
    for res in results:
        b = res.breakdown
        bucket = _ladder_bucket(b.connected_seeds, m) if b.r_fmt == 1 else None
        if bucket:
            counts[bucket] += 1
        total += b.total
        fmt_ok += b.r_fmt == 1
        row = res.row()
        f1_sum += row["f1"]
        rows.append(row)
        if b.r_ent is not None and b.r_rel is not None:
            n_conn += 1
            rel_sum += b.r_rel
            ent_sum += b.r_ent

    ladder = {k: v / n for k, v in counts.items() if m > 2 and (k != "triple" or m > 3)}
    return EvalReport(
        n_queries=n,
        m=m,
        connectivity_ratio=counts["full"] / n,
        avg_reward=total / n,
        subgraph_f1=100.0 * f1_sum / n,
        format_pct=100.0 * fmt_ok / n,
        i_rel=-rel_sum / n_conn if n_conn else 0.0,
        i_ent=-ent_sum / n_conn if n_conn else 0.0,
        ladder=ladder,
        rows=rows,
    )

