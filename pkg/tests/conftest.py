from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from relkgqa.kg import KnowledgeGraph  # noqa: E402

ROYALS = [
    ("Meghan Markle", "spouse", "Prince Harry"),
    ("Prince William", "occupation", "Royal"),
    ("Queen Elizabeth II", "grandmother", "Prince Harry"),
    ("Queen Elizabeth II", "grandmother", "Prince William"),
    ("Prince Harry", "brother", "Prince William"),
]


@pytest.fixture
def royals() -> KnowledgeGraph:
    return KnowledgeGraph.from_triples(ROYALS)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


def write_tsv(path: Path, rows) -> Path:
    path.write_text("".join("\t".join(r) + "\n" for r in rows), encoding="utf-8")
    return path


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL (or SKIP) line for an acceptance criterion."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def record(number: int, ok: bool | None, detail: str) -> bool | None:
        tag = "SKIP" if ok is None else "PASS" if ok else "FAIL"
        line = f"{tag} criterion {number}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
