"""Line-delimited JSON scoring service.

One request per line, one response per line, in request order.

Single answer::

    {"id": 7, "graph": "fb", "seeds": ["A", "B"], "answer": "GRAPH:\\n...\\nEND"}
    {"id": 7, "ok": true, "breakdown": {...}, "grounded": 3, "ungrounded": 0}

Group of answers for one query (``answers`` instead of ``answer``)::

    {"id": 8, "seeds": ["A", "B"], "answers": ["...", "..."]}
    {"id": 8, "ok": true, "results": [{"breakdown": ..., ...}, ...]}

Failures keep the stream open::

    {"id": 9, "ok": false, "error": {"code": "unknown_entity", "message": "..."}}

``graph`` may be omitted when exactly one graph is loaded.
"""

from __future__ import annotations

import json
import logging
import os
import signal
import socketserver
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Any, Mapping, Sequence

from .answer import parse_answer
from .errors import KGError, UsageError
from .kg import KnowledgeGraph, load_tsv
from .verifier import RewardConfig, score

logger = logging.getLogger(__name__)

ADDR_ENV = "RELKGQA_SERVE_ADDR"

# error codes
BAD_JSON = "bad_json"
BAD_REQUEST = "bad_request"
UNKNOWN_GRAPH = "unknown_graph"
UNKNOWN_ENTITY = "unknown_entity"
INTERNAL = "internal"


class RequestError(Exception):
    def __init__(self, code: str, message: str) -> None:
        super().__init__(message)
        self.code = code


@dataclass
class Registry:
    """Read-only graphs addressable by handle, each with its reward config."""

    graphs: dict[str, KnowledgeGraph] = field(default_factory=dict)
    configs: dict[str, RewardConfig] = field(default_factory=dict)

    def add(self, handle: str, g: KnowledgeGraph, x: float = 7.0, y: float = 6.0, clamp: bool = True) -> None:
        self.graphs[handle] = g
        self.configs[handle] = RewardConfig.for_graph(g, x, y, clamp)

    def resolve(self, handle: str | None) -> tuple[KnowledgeGraph, RewardConfig]:
        if handle is None:
            if len(self.graphs) != 1:
                raise RequestError(BAD_REQUEST, "request must name a graph")
            handle = next(iter(self.graphs))
        if handle not in self.graphs:
            raise RequestError(UNKNOWN_GRAPH, f"no graph loaded under {handle!r}")
        return self.graphs[handle], self.configs[handle]


def load_config(path: str | Path) -> tuple[Registry, dict]:
    """Build a registry from a JSON config.

    ``{"graphs": {"<handle>": "<tsv path>" | {"path": ..., "aliases": ...}},
    "reward": {"x": 7, "y": 6, "clamp_oversize": true}, "bind": "host:port"}``.
    Relative paths resolve against the config file's directory.
    """
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        conf = json.load(fh)
    if not isinstance(conf, dict) or not conf.get("graphs"):
        raise UsageError("config must list at least one graph under 'graphs'")
    reward = conf.get("reward", {})
    x, y = float(reward.get("x", 7.0)), float(reward.get("y", 6.0))
    clamp = bool(reward.get("clamp_oversize", True))
    reg = Registry()
    for handle, entry in conf["graphs"].items():
        if isinstance(entry, str):
            entry = {"path": entry}
        gpath = path.parent / entry["path"]
        aliases = entry.get("aliases")
        g = load_tsv(gpath, aliases=path.parent / aliases if aliases else None)
        reg.add(handle, g, x, y, clamp)
        logger.info("loaded graph %r: %r", handle, g)
    return reg, conf


def _seed_ids(g: KnowledgeGraph, names: Any) -> list[int]:
    if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
        raise RequestError(BAD_REQUEST, "'seeds' must be a list of entity names")
    out = []
    for n in names:
        e = g.entity_index.get(n)
        if e is None:
            raise RequestError(UNKNOWN_ENTITY, f"unknown entity {n!r}")
        out.append(e)
    if len(out) < 2 or len(set(out)) != len(out):
        raise RequestError(BAD_REQUEST, "need at least two distinct seeds")
    return out


def score_answer(g: KnowledgeGraph, cfg: RewardConfig, seeds: Sequence[int], text: str) -> dict:
    """Score one answer; the payload shared by the service and the CLI."""
    parsed = parse_answer(text, g)
    b = score(parsed, seeds, cfg)
    return {
        "breakdown": b.to_dict(),
        "grounded": len(parsed.grounded.triples),
        "ungrounded": len(parsed.ungrounded),
    }


def score_request(reg: Registry, req: Any) -> dict:
    """Turn one decoded request into one response. Never raises."""
    rid = req.get("id") if isinstance(req, dict) else None
    try:
        if not isinstance(req, dict):
            raise RequestError(BAD_REQUEST, "request must be a JSON object")
        g, cfg = reg.resolve(req.get("graph"))
        seeds = _seed_ids(g, req.get("seeds"))
        if "answers" in req:
            answers = req["answers"]
            if not isinstance(answers, list) or not all(isinstance(a, str) for a in answers):
                raise RequestError(BAD_REQUEST, "'answers' must be a list of strings")
            return {"id": rid, "ok": True, "results": [score_answer(g, cfg, seeds, a) for a in answers]}
        answer = req.get("answer")
        if not isinstance(answer, str):
            raise RequestError(BAD_REQUEST, "'answer' must be a string")
        return {"id": rid, "ok": True, **score_answer(g, cfg, seeds, answer)}
    except RequestError as exc:
        return {"id": rid, "ok": False, "error": {"code": exc.code, "message": str(exc)}}
    except (KGError, ValueError) as exc:
        return {"id": rid, "ok": False, "error": {"code": BAD_REQUEST, "message": str(exc)}}
    except Exception as exc:  # keep the stream alive
        logger.exception("request failed")
        return {"id": rid, "ok": False, "error": {"code": INTERNAL, "message": str(exc)}}


def encode(resp: Mapping) -> str:
    return json.dumps(resp, sort_keys=True, ensure_ascii=False)


def handle_line(reg: Registry, line: str) -> str:
    try:
        req = json.loads(line)
    except ValueError as exc:
        return encode({"id": None, "ok": False, "error": {"code": BAD_JSON, "message": str(exc)}})
    return encode(score_request(reg, req))


def serve_stream(reg: Registry, inp: IO[str], out: IO[str], stop: threading.Event | None = None) -> int:
    """Answer every non-blank line of ``inp`` on ``out``; returns the number answered."""
    n = 0
    for line in inp:
        if not line.strip():
            continue
        out.write(handle_line(reg, line) + "\n")
        out.flush()
        n += 1
        if stop is not None and stop.is_set():
            break
    return n


class _Shutdown(Exception):
    pass


def serve_stdio(reg: Registry, inp: IO[str], out: IO[str]) -> int:
    """Serve over stdio; SIGTERM ends the loop once the current response is written."""
    stop = threading.Event()
    busy = threading.Event()

    def on_term(signum, frame):  # noqa: ARG001
        stop.set()
        if not busy.is_set():
            raise _Shutdown

    prev = signal.signal(signal.SIGTERM, on_term)
    n = 0
    try:
        while not stop.is_set():
            line = inp.readline()
            if not line:
                break
            if not line.strip():
                continue
            busy.set()
            out.write(handle_line(reg, line) + "\n")
            out.flush()
            busy.clear()
            n += 1
    except _Shutdown:
        pass
    finally:
        signal.signal(signal.SIGTERM, prev)
        out.flush()
    logger.info("stdio service answered %d requests", n)
    return n


class _Handler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        reg: Registry = self.server.registry  # type: ignore[attr-defined]
        for raw in self.rfile:
            line = raw.decode("utf-8", errors="replace")
            if not line.strip():
                continue
            self.wfile.write((handle_line(reg, line) + "\n").encode("utf-8"))
            self.wfile.flush()


class ScoringServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True
    block_on_close = True

    def __init__(self, addr: tuple[str, int], reg: Registry) -> None:
        super().__init__(addr, _Handler)
        self.registry = reg


def parse_addr(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise UsageError(f"bad bind address {text!r}; expected host:port")
    return host or "127.0.0.1", int(port)


def bind_address(conf_value: str | None) -> tuple[str, int] | None:
    text = os.environ.get(ADDR_ENV) or conf_value
    return parse_addr(text) if text else None


def serve_tcp(reg: Registry, addr: tuple[str, int], ready: threading.Event | None = None) -> None:
    """Serve until SIGTERM/SIGINT; open connections finish their current line."""
    with ScoringServer(addr, reg) as server:
        host, port = server.server_address[:2]
        logger.info("listening on %s:%d", host, port)

        def on_term(signum, frame):  # noqa: ARG001
            threading.Thread(target=server.shutdown, daemon=True).start()

        in_main = threading.current_thread() is threading.main_thread()
        if in_main:
            prev = signal.signal(signal.SIGTERM, on_term)
        if ready is not None:
            ready.set()
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass
        finally:
            if in_main:
                signal.signal(signal.SIGTERM, prev)
