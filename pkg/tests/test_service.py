from __future__ import annotations

import io
import json
import os
import signal
import socket
import subprocess
import sys
import threading

import numpy as np
import pytest

from conftest import ROYALS, write_tsv
from relkgqa.answer import format_block
from relkgqa.grpo import advantages
from relkgqa.kg import KnowledgeGraph
from relkgqa.service import (
    ADDR_ENV,
    Registry,
    ScoringServer,
    bind_address,
    encode,
    handle_line,
    load_config,
    parse_addr,
    serve_stream,
)

GOOD = format_block([("Meghan Markle", "spouse", "Prince Harry"), ("Queen Elizabeth II", "grandmother", "Prince Harry")])
SEEDS = ["Meghan Markle", "Queen Elizabeth II"]


@pytest.fixture
def reg(royals):
    r = Registry()
    r.add("royals", royals)
    return r


def ask(reg, req) -> dict:
    return json.loads(handle_line(reg, json.dumps(req)))


def test_single_answer(reg):
    resp = ask(reg, {"id": 1, "graph": "royals", "seeds": SEEDS, "answer": GOOD})
    assert resp["ok"] and resp["id"] == 1
    assert resp["grounded"] == 2 and resp["ungrounded"] == 0
    assert resp["breakdown"]["r_con"] == 0
    # the graph handle may be omitted when only one graph is loaded
    assert ask(reg, {"seeds": SEEDS, "answer": "junk"})["breakdown"]["total"] == -3.0


def test_group_request_and_empty_group(reg):
    answers = [GOOD, "junk", "GRAPH:\nEND", GOOD, format_block([("Prince Harry", "brother", "Prince William")])]
    resp = ask(reg, {"id": "g", "seeds": SEEDS, "answers": answers})
    totals = [r["breakdown"]["total"] for r in resp["results"]]
    assert len(totals) == 5 and totals[1] == -3.0
    assert abs(advantages(totals).sum()) < 1e-9
    assert ask(reg, {"id": 2, "seeds": SEEDS, "answers": []}) == {"id": 2, "ok": True, "results": []}


@pytest.mark.parametrize(
    "line,code",
    [
        ("{not json", "bad_json"),
        ("[1, 2]", "bad_request"),
        ('{"seeds": ["Meghan Markle"], "answer": ""}', "bad_request"),
        ('{"seeds": ["Nobody", "Prince Harry"], "answer": ""}', "unknown_entity"),
        ('{"graph": "other", "seeds": [], "answer": ""}', "unknown_graph"),
        ('{"seeds": ["Meghan Markle", "Prince Harry"]}', "bad_request"),
        ('{"seeds": ["Meghan Markle", "Prince Harry"], "answers": [1]}', "bad_request"),
    ],
)
def test_errors_are_responses(reg, line, code):
    resp = json.loads(handle_line(reg, line))
    assert resp["ok"] is False and resp["error"]["code"] == code


def test_stream_survives_bad_lines(reg):
    lines = [json.dumps({"id": 0, "seeds": SEEDS, "answer": GOOD}), "{oops", "", json.dumps({"id": 2, "seeds": SEEDS, "answer": GOOD})]
    out = io.StringIO()
    assert serve_stream(reg, io.StringIO("\n".join(lines) + "\n"), out) == 3
    resp = [json.loads(x) for x in out.getvalue().splitlines()]
    assert [r["ok"] for r in resp] == [True, False, True]
    assert resp[2]["id"] == 2


def test_pipelined_requests_keep_order():
    rng = np.random.default_rng(0)
    n, t = 20000, 100_000
    g = KnowledgeGraph.from_arrays(
        rng.integers(n, size=t), rng.integers(40, size=t), rng.integers(n, size=t),
        [f"e{i}" for i in range(n)], [f"r{i}" for i in range(40)],
    )
    reg = Registry()
    reg.add("big", g)
    reqs = []
    for i in range(10_000):
        tids = rng.choice(g.triple_count, size=int(rng.integers(1, 8)), replace=False)
        h, tl = int(g.heads[tids[0]]), int(g.tails[tids[0]])
        if h == tl:
            tl = (tl + 1) % g.num_entities
        answer = format_block([g.triple_names(int(x)) for x in tids])
        reqs.append(json.dumps({"id": i, "seeds": [g.entity_names[h], g.entity_names[tl]], "answer": answer}))
    out = io.StringIO()
    assert serve_stream(reg, io.StringIO("\n".join(reqs) + "\n"), out) == 10_000
    resp = [json.loads(x) for x in out.getvalue().splitlines()]
    assert [r["id"] for r in resp] == list(range(10_000))
    assert all(r["ok"] for r in resp)


def test_tcp_round_trip_and_concurrent_clients(reg):
    server = ScoringServer(("127.0.0.1", 0), reg)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    port = server.server_address[1]

    def client(k, results):
        with socket.create_connection(("127.0.0.1", port), timeout=10) as s:
            f = s.makefile("rw", encoding="utf-8")
            for i in range(50):
                f.write(json.dumps({"id": i, "seeds": SEEDS, "answer": GOOD if i % 2 else "x"}) + "\n")
            f.flush()
            results[k] = [json.loads(f.readline()) for _ in range(50)]

    results: dict = {}
    try:
        clients = [threading.Thread(target=client, args=(k, results)) for k in range(4)]
        for c in clients:
            c.start()
        for c in clients:
            c.join(20)
    finally:
        server.shutdown()
        server.server_close()
    for k in range(4):
        assert [r["id"] for r in results[k]] == list(range(50))
        assert results[k][0]["breakdown"]["total"] == -3.0


def test_config_and_bind(tmp_path, monkeypatch):
    write_tsv(tmp_path / "royals.tsv", ROYALS)
    conf = {"graphs": {"royals": "royals.tsv"}, "reward": {"x": 5, "y": 4}, "bind": "127.0.0.1:7070"}
    (tmp_path / "c.json").write_text(json.dumps(conf), encoding="utf-8")
    reg, raw = load_config(tmp_path / "c.json")
    assert reg.configs["royals"].x == 5 and reg.configs["royals"].y == 4
    monkeypatch.delenv(ADDR_ENV, raising=False)
    assert bind_address(raw["bind"]) == ("127.0.0.1", 7070)
    monkeypatch.setenv(ADDR_ENV, "0.0.0.0:9000")
    assert bind_address(raw["bind"]) == ("0.0.0.0", 9000)
    assert parse_addr(":81") == ("127.0.0.1", 81)
    with pytest.raises(ValueError):
        parse_addr("nope")


def test_stdio_service_drains_on_sigterm(tmp_path):
    write_tsv(tmp_path / "royals.tsv", ROYALS)
    (tmp_path / "c.json").write_text(json.dumps({"graphs": {"royals": "royals.tsv"}}), encoding="utf-8")
    env = {k: v for k, v in os.environ.items() if k != ADDR_ENV}
    proc = subprocess.Popen(
        [sys.executable, "-m", "relkgqa", "serve", "--config", str(tmp_path / "c.json"), "--stdio"],
        stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, env=env,
    )
    try:
        for i in range(3):
            proc.stdin.write(json.dumps({"id": i, "seeds": SEEDS, "answer": GOOD}) + "\n")
        proc.stdin.flush()
        got = [json.loads(proc.stdout.readline()) for _ in range(3)]
        proc.send_signal(signal.SIGTERM)
        assert proc.wait(10) == 0
    finally:
        proc.kill()
    assert [r["id"] for r in got] == [0, 1, 2]


def test_encoding_is_canonical():
    assert encode({"b": 1, "a": "é"}) == '{"a": "é", "b": 1}'
