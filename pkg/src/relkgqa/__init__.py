"""Relation-centric question answering over knowledge graphs.

Graph store, seed-driven retrieval with pruning, answer textualization and
parsing, a rule-based reward verifier, an exhaustive reward oracle, query
benchmark generation, evaluation metrics, a toy GRPO trainer and a scoring
service.
"""

from __future__ import annotations

from .answer import ParsedAnswer, format_block, parse_answer, subgraph_block, textualize
from .errors import (
    EmptyGraphError,
    ExtractionError,
    GraphParseError,
    KGError,
    SamplingError,
    UnknownEntityError,
    UnknownRelationError,
    UnreachableSeedsError,
    UsageError,
)
from .kg import KnowledgeGraph, Subgraph, load_tsv, save_tsv
from .oracle import CandidateSet, enumerate_candidates, optimal_answer
from .retriever import PruneConfig, PruningTrace, retrieve
from .verifier import RewardBreakdown, RewardConfig, score, score_subgraph

__version__ = "0.1.0"

__all__ = [
    "CandidateSet",
    "EmptyGraphError",
    "ExtractionError",
    "GraphParseError",
    "KGError",
    "KnowledgeGraph",
    "ParsedAnswer",
    "PruneConfig",
    "PruningTrace",
    "RewardBreakdown",
    "RewardConfig",
    "SamplingError",
    "Subgraph",
    "UnknownEntityError",
    "UnknownRelationError",
    "UnreachableSeedsError",
    "UsageError",
    "enumerate_candidates",
    "format_block",
    "load_tsv",
    "optimal_answer",
    "parse_answer",
    "retrieve",
    "save_tsv",
    "score",
    "score_subgraph",
    "subgraph_block",
    "textualize",
]
