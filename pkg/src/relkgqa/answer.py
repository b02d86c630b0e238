"""Node/edge-table textualization and the strict ``GRAPH:`` ... ``END`` answer block.

Grammar of an answer block (after trimming surrounding whitespace)::

    block   = "GRAPH:" LF *(triple LF) "END"
    triple  = "(" DQUOTE name DQUOTE "|" pred "|" DQUOTE name DQUOTE ")"
    name    = 1*(any char except DQUOTE, "|", CR, LF)
    pred    = 1*(any char except DQUOTE, "|", CR, LF)

Context tables::

    node_id, node_attr
    <i>, <entity name>        one row per node, i = 1..n by ascending entity id
    <empty line>
    src, edge_attr, dst
    <i>, <relation name>, <j> one row per triple, ascending triple id
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Sequence

from .errors import UsageError
from .kg import KnowledgeGraph, Subgraph

NODE_HEADER = "node_id, node_attr"
EDGE_HEADER = "src, edge_attr, dst"
BLOCK_OPEN = "GRAPH:"
BLOCK_CLOSE = "END"

_TRIPLE_LINE = re.compile(r'\("([^"|\r\n]+)"\|([^"|\r\n]+)\|"([^"|\r\n]+)"\)')

RawTriple = tuple[str, str, str]


@dataclass(frozen=True)
class ParsedAnswer:
    format_ok: bool
    raw_triples: tuple[RawTriple, ...]
    grounded: Subgraph
    ungrounded: tuple[RawTriple, ...] = field(default=())

    @property
    def graph(self) -> KnowledgeGraph:
        return self.grounded.parent


def textualize(sub: Subgraph) -> str:
    """Render ``sub`` as the node table and edge table, newline-terminated."""
    if not sub.nodes:
        raise UsageError("cannot textualize an empty subgraph")
    g = sub.parent
    order = sorted(sub.nodes)
    row = {e: i for i, e in enumerate(order, 1)}
    lines = [NODE_HEADER]
    lines.extend(f"{row[e]}, {g.entity_names[e]}" for e in order)
    lines.append("")
    lines.append(EDGE_HEADER)
    for tid in sorted(sub.triples):
        h, r, t = g.triple(tid)
        lines.append(f"{row[h]}, {g.relation_names[r]}, {row[t]}")
    return "\n".join(lines) + "\n"


def parse_tables(text: str) -> tuple[list[str], list[tuple[int, str, int]]]:
    """Inverse of :func:`textualize`: node names (row order) and ``(src, rel, dst)`` rows."""
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    try:
        split = lines.index("")
    except ValueError:
        raise UsageError("missing blank line between node and edge tables") from None
    node_lines, edge_lines = lines[:split], lines[split + 1 :]
    if not node_lines or node_lines[0] != NODE_HEADER:
        raise UsageError("bad node table header")
    if not edge_lines or edge_lines[0] != EDGE_HEADER:
        raise UsageError("bad edge table header")
    names: list[str] = []
    for i, line in enumerate(node_lines[1:], 1):
        idx, sep, name = line.partition(", ")
        if not sep or idx != str(i):
            raise UsageError(f"bad node row {line!r}")
        names.append(name)
    edges: list[tuple[int, str, int]] = []
    for line in edge_lines[1:]:
        src, sep1, rest = line.partition(", ")
        rel, sep2, dst = rest.rpartition(", ")
        if not (sep1 and sep2):
            raise UsageError(f"bad edge row {line!r}")
        edges.append((int(src), rel, int(dst)))
    return names, edges


def format_block(triples: Sequence[RawTriple]) -> str:
    """Serialize name triples as an answer block (no trailing newline)."""
    body = [f'("{s}"|{p}|"{o}")' for s, p, o in triples]
    return "\n".join([BLOCK_OPEN, *body, BLOCK_CLOSE])


def subgraph_block(sub: Subgraph) -> str:
    return format_block(sub.name_triples())


def _empty(g: KnowledgeGraph) -> Subgraph:
    return Subgraph(g, frozenset(), frozenset())


def parse_answer(text: str | bytes, g: KnowledgeGraph, *, allow_reversed: bool = False) -> ParsedAnswer:
    """Parse and ground a model answer. Never raises on malformed input."""
    fail = ParsedAnswer(False, (), _empty(g), ())
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError:
            return fail
    if not isinstance(text, str):
        return fail
    lines = text.strip().split("\n")
    if len(lines) < 2 or lines[0] != BLOCK_OPEN or lines[-1] != BLOCK_CLOSE:
        return fail
    raw: list[RawTriple] = []
    for line in lines[1:-1]:
        m = _TRIPLE_LINE.fullmatch(line)
        if m is None:
            return fail
        raw.append((m.group(1), m.group(2), m.group(3)))

    ent, rel = g.entity_index, g.relation_index
    grounded: set[int] = set()
    ungrounded: list[RawTriple] = []
    for s, p, o in raw:
        h, r, t = ent.get(s), rel.get(p), ent.get(o)
        tid = None
        if h is not None and r is not None and t is not None:
            tid = g.find_triple(h, r, t)
            if tid is None and allow_reversed:
                tid = g.find_triple(t, r, h)
        if tid is None:
            ungrounded.append((s, p, o))
        else:
            grounded.add(tid)
    return ParsedAnswer(True, tuple(raw), Subgraph.from_triples(g, grounded), tuple(ungrounded))
