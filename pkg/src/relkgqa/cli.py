"""Command-line entry point. Results go to stdout as JSON or text, logs to stderr."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import answer as ans
from . import evalkit, grpo, oracle, querygen, retriever, service
from .errors import KGError, UsageError
from .kg import KnowledgeGraph, Subgraph, load_tsv, save_tsv
from .verifier import RewardConfig, score

log = logging.getLogger("relkgqa")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits 2 itself; keep the message on stderr
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n")


def _load(args) -> KnowledgeGraph:
    return load_tsv(args.graph, aliases=getattr(args, "aliases", None))


def _seeds(g: KnowledgeGraph, args) -> list[int]:
    names = list(args.seed_name or [])
    if args.seeds:
        names.extend(n.strip() for n in args.seeds.split(",") if n.strip())
    if len(names) < 2:
        raise UsageError("give at least two seeds via --seeds a,b or repeated --seed-name")
    return [g.entity_id(n) for n in names]


def _reward_cfg(g: KnowledgeGraph, args) -> RewardConfig:
    return RewardConfig.for_graph(g, args.x, args.y, not args.no_clamp)


def _prune_cfg(args) -> retriever.PruneConfig:
    return retriever.PruneConfig(k=args.k, node_budget=args.budget, s_init=args.s_init)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_load_check(args) -> int:
    g = _load(args)
    _emit({
        "entities": g.num_entities,
        "relations": g.num_relations,
        "triples": g.triple_count,
        "skipped": len(g.sanitization_report),
        "hub_penalty_max": g.hub_penalty_max,
        "idf_max": g.idf_max,
    })
    for line in g.sanitization_report:
        log.warning("%s", line)
    return EXIT_OK


def cmd_retrieve(args) -> int:
    g = _load(args)
    seeds = _seeds(g, args)
    sub, trace = retriever.retrieve(g, seeds, _prune_cfg(args))
    if args.trace:
        Path(args.trace).write_text(json.dumps(trace.to_dict(), indent=2) + "\n", encoding="utf-8")
    if args.out:
        Path(args.out).write_text(ans.subgraph_block(sub) + "\n", encoding="utf-8")
    sys.stdout.write(ans.textualize(sub))
    return EXIT_OK


def _read_text(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    return Path(path).read_text(encoding="utf-8")


def cmd_textualize(args) -> int:
    g = _load(args)
    parsed = ans.parse_answer(_read_text(args.answer), g)
    if not parsed.format_ok:
        raise UsageError("input is not a well-formed answer block")
    sub = parsed.grounded
    if parsed.ungrounded:
        log.warning("%d triples are not in the graph and were dropped", len(parsed.ungrounded))
    sys.stdout.write(ans.textualize(sub))
    return EXIT_OK


def cmd_score(args) -> int:
    g = _load(args)
    seeds = _seeds(g, args)
    payload = service.score_answer(g, _reward_cfg(g, args), seeds, _read_text(args.answer))
    sys.stdout.write(service.encode(payload) + "\n")
    return EXIT_OK


def _oracle_for(g: KnowledgeGraph, seeds: list[int], args) -> tuple[Subgraph, oracle.CandidateSet]:
    base, _ = retriever.retrieve(g, seeds, _prune_cfg(args))
    cs = oracle.enumerate_candidates(base, seeds, args.budget, args.cap, _reward_cfg(g, args))
    return base, cs


def cmd_oracle(args) -> int:
    g = _load(args)
    seeds = _seeds(g, args)
    _, cs = _oracle_for(g, seeds, args)
    i = oracle.optimal_index(cs)
    block = ans.subgraph_block(cs.candidates[i])
    sys.stdout.write(block + "\n")
    if not args.block_only:
        _emit({
            "breakdown": cs.breakdowns[i].to_dict(),
            "candidates": len(cs),
            "truncated": cs.truncated,
        })
    return EXIT_OK


def cmd_gen_queries(args) -> int:
    g = _load(args)
    n_train, n_test = _split(args.split, args.n)
    qs = querygen.generate_benchmark(g, n_train, n_test, args.k, args.m, args.seed)
    if args.out:
        querygen.write_benchmark(qs, g, args.out)
    else:
        for q in qs:
            sys.stdout.write(json.dumps(q.to_record(g), ensure_ascii=False) + "\n")
    log.info("wrote %d train and %d test queries", n_train, n_test)
    return EXIT_OK


def _split(text: str | None, n: int | None) -> tuple[int, int]:
    if text:
        a, sep, b = text.partition(":")
        if not sep or not a.isdigit() or not b.isdigit():
            raise UsageError("--split takes TRAIN:TEST, e.g. 2000:500")
        n_train, n_test = int(a), int(b)
        if n is not None and n != n_train + n_test:
            raise UsageError("--n disagrees with --split")
        return n_train, n_test
    if n is None:
        return 2000, 500
    n_train = round(n * 0.8)
    return n_train, n - n_train


def cmd_anonymize(args) -> int:
    g = _load(args)
    new, mapping = querygen.anonymize(g, args.fraction, args.seed)
    save_tsv(new, args.out)
    if args.mapping:
        mapping.write_tsv(args.mapping)
    _emit({"entities": new.num_entities, "relations": new.num_relations, "triples": new.triple_count})
    return EXIT_OK


def cmd_eval(args) -> int:
    g = _load(args)
    cfg = _reward_cfg(g, args)
    queries = querygen.read_benchmark(args.benchmark, g)
    answers = []
    with open(args.answers, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                answers.append(rec["answer"] if isinstance(rec, dict) else rec)
    if len(answers) != len(queries):
        raise UsageError(f"{len(answers)} answers for {len(queries)} queries")
    results = []
    for q, text in zip(queries, answers):
        parsed = ans.parse_answer(text, g)
        b = score(parsed, q.seeds, cfg)
        ref = None
        if not args.no_reference:
            try:
                _, cs = _oracle_for(g, list(q.seeds), args)
                ref = cs.candidates[oracle.optimal_index(cs)]
            except KGError as exc:
                log.warning("no reference for %r: %s", q.text, exc)
        results.append(evalkit.QueryResult(b, parsed.grounded, ref))
    report = evalkit.aggregate(results)
    doc = report.to_dict()
    doc["table_row"] = report.table_row()
    if args.report:
        Path(args.report).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    _emit(report.to_dict(with_rows=False) | {"table_row": report.table_row()})
    return EXIT_OK


def cmd_grpo_demo(args) -> int:
    g = _load(args)
    seeds = _seeds(g, args)
    _, cs = _oracle_for(g, seeds, args)
    cfg = grpo.GrpoConfig(steps=args.steps, seed=args.seed, lr=args.lr, beta=args.beta, G=args.group)
    res = grpo.train(cs.rewards, cfg)
    if args.curve:
        with open(args.curve, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "expected_reward"])
            for i, v in enumerate(res.expected_reward):
                w.writerow([i, repr(float(v))])
    best = oracle.optimal_index(cs)
    _emit({
        "candidates": len(cs),
        "policy_argmax": res.best,
        "oracle_argmax": best,
        "initial_expected_reward": float(res.expected_reward[0]),
        "final_expected_reward": float(res.expected_reward[-1]),
        "optimal_reward": cs.breakdowns[best].total,
    })
    return EXIT_OK


def cmd_serve(args) -> int:
    reg, conf = service.load_config(args.config)
    addr = service.bind_address(args.bind or conf.get("bind"))
    if addr is None or args.stdio:
        service.serve_stdio(reg, sys.stdin, sys.stdout)
    else:
        service.serve_tcp(reg, addr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="relkgqa", description="Relation-centric KGQA retrieval, scoring and benchmark tools.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def graph_args(sp):
        sp.add_argument("--graph", required=True, help="triple TSV (head, relation, tail)")
        sp.add_argument("--aliases", help="TSV mapping raw entity ids to display names")

    def seed_args(sp):
        sp.add_argument("--seeds", help="comma-separated seed entity names")
        sp.add_argument("--seed-name", action="append", help="one seed name (repeatable; allows commas)")

    def reward_args(sp):
        sp.add_argument("--x", type=float, default=7.0, help="entity normalization constant")
        sp.add_argument("--y", type=float, default=6.0, help="relation normalization constant")
        sp.add_argument("--no-clamp", action="store_true", help="do not clamp oversize informativeness")

    def prune_args(sp):
        sp.add_argument("--k", type=int, default=2, help="hop radius of seed neighbourhoods")
        sp.add_argument("--budget", type=int, default=24, help="node budget")
        sp.add_argument("--s-init", type=int, default=3)

    sp = sub.add_parser("load-check", help="load a graph and print its statistics")
    graph_args(sp)
    sp.set_defaults(func=cmd_load_check)

    sp = sub.add_parser("retrieve", help="retrieve and prune a subgraph for the seeds")
    graph_args(sp), seed_args(sp), prune_args(sp)
    sp.add_argument("--trace", help="write the pruning trace JSON here")
    sp.add_argument("--out", help="also write the subgraph as an answer block")
    sp.set_defaults(func=cmd_retrieve)

    sp = sub.add_parser("textualize", help="render an answer block as node/edge tables")
    graph_args(sp)
    sp.add_argument("--answer", default="-", help="answer block file, '-' for stdin")
    sp.set_defaults(func=cmd_textualize)

    sp = sub.add_parser("score", help="score an answer block")
    graph_args(sp), seed_args(sp), reward_args(sp)
    sp.add_argument("--answer", default="-", help="answer file, '-' for stdin")
    sp.set_defaults(func=cmd_score)

    sp = sub.add_parser("oracle", help="exhaustive reward-optimal answer in the retrieved subgraph")
    graph_args(sp), seed_args(sp), reward_args(sp), prune_args(sp)
    sp.add_argument("--cap", type=int, default=4096, help="maximum candidates")
    sp.add_argument("--block-only", action="store_true", help="print only the answer block")
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("gen-queries", help="sample a query benchmark")
    graph_args(sp)
    sp.add_argument("--n", type=int, help="total queries")
    sp.add_argument("--split", help="TRAIN:TEST counts (default 2000:500)")
    sp.add_argument("--k", type=int, default=4)
    sp.add_argument("--m", type=int, default=2, choices=(2, 3, 4))
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--out", help="JSONL output (stdout if omitted)")
    sp.set_defaults(func=cmd_gen_queries)

    sp = sub.add_parser("anonymize", help="rename entities and relations to opaque ids")
    graph_args(sp)
    sp.add_argument("--fraction", type=float, default=1.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True, help="anonymized TSV")
    sp.add_argument("--mapping", help="two-column TSV old -> new")
    sp.set_defaults(func=cmd_anonymize)

    sp = sub.add_parser("eval", help="evaluate answers against a benchmark")
    graph_args(sp), reward_args(sp), prune_args(sp)
    sp.add_argument("--benchmark", required=True)
    sp.add_argument("--answers", required=True, help="JSONL, one {\"answer\": ...} per benchmark line")
    sp.add_argument("--report", help="write the full JSON report here")
    sp.add_argument("--cap", type=int, default=4096)
    sp.add_argument("--no-reference", action="store_true", help="skip oracle references (F1 = 0)")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("grpo-demo", help="train a softmax policy over oracle candidates")
    graph_args(sp), seed_args(sp), reward_args(sp), prune_args(sp)
    sp.add_argument("--cap", type=int, default=4096)
    sp.add_argument("--steps", type=int, default=500)
    sp.add_argument("--seed", type=int, default=0, help="training RNG seed")
    sp.add_argument("--lr", type=float, default=1e-2)
    sp.add_argument("--beta", type=float, default=1e-2)
    sp.add_argument("--group", type=int, default=5)
    sp.add_argument("--curve", help="CSV of expected reward per step")
    sp.set_defaults(func=cmd_grpo_demo)

    sp = sub.add_parser("serve", help="line-delimited JSON scoring service")
    sp.add_argument("--config", required=True, help="JSON config listing graphs and reward settings")
    sp.add_argument("--bind", help=f"host:port (overridden by ${service.ADDR_ENV})")
    sp.add_argument("--stdio", action="store_true", help="serve on stdin/stdout")
    sp.set_defaults(func=cmd_serve)
    return p


def run_cli(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except UsageError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (KGError, OSError, ValueError, LookupError) as exc:
        log.error("%s", exc)
        return EXIT_FAIL


def main() -> None:
    sys.exit(run_cli())
