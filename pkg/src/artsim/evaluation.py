"""Distance ranking and NDCG@k against hidden same-split relationships."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .graph import Graph, Phase, Split, check_split, hidden_relevance, visible_graph
from .model import embed_nodes

log = logging.getLogger(__name__)

DEFAULT_K = 10
POOLS = ("split", "all")


class EmptyEvaluation(ValueError):
    """No query has a hidden relationship in the evaluated split."""


@dataclass(frozen=True)
class EvalConfig:
    k: int = DEFAULT_K
    phase: Phase = Phase.VAL
    pool: str = "split"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.phase is Phase.TRAIN:
            raise ValueError("evaluation runs on the val or test phase")
        if self.pool not in POOLS:
            raise ValueError(f"pool must be one of {POOLS}")


@dataclass
class EvalReport:
    mean_ndcg: float
    per_query: dict[int, float]
    num_queries: int
    k: int
    phase: Phase
    pool: str = "split"
    wall_time: float = field(default=0.0, compare=False)

    def write_csv(self, path, ids: Sequence[str] | None = None) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["query_id", "ndcg"])
            for q in sorted(self.per_query):
                w.writerow([ids[q] if ids is not None else q, repr(self.per_query[q])])
            w.writerow(["# summary", f"mean={self.mean_ndcg!r}", f"n={self.num_queries}", f"k={self.k}", f"phase={self.phase.value}"])


def read_report_csv(path) -> tuple[dict[str, float], dict[str, str]]:
    """Parse a report CSV into (per-query values, summary fields)."""
    rows, summary = {}, {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["query_id", "ndcg"]:
            raise ValueError(f"{path}: unexpected header {header}")
        for rec in reader:
            if rec and rec[0] == "# summary":
                summary = dict(item.split("=", 1) for item in rec[1:])
            elif rec:
                rows[rec[0]] = float(rec[1])
    return rows, summary


def rank_candidates(emb: np.ndarray, query: int, candidates: Sequence[int]) -> list[int]:
    """Candidates by ascending Euclidean distance to the query; ties by node id."""
    cand = np.asarray(candidates, dtype=np.int64)
    if cand.size == 0:
        raise ValueError("empty candidate set")
    if np.any(cand == query):
        raise ValueError("query must not be among its own candidates")
    e = np.asarray(emb, dtype=np.float64)
    diff = e[cand] - e[query]
    dist = np.sqrt(np.sum(diff * diff, axis=1))
    order = np.lexsort((cand, dist))
    return cand[order].tolist()


def ndcg_at_k(ranked: Sequence[int], relevant: set[int], k: int) -> float:
    """Binary-relevance NDCG@k."""
    if not relevant:
        raise ValueError("ndcg_at_k needs at least one relevant item")
    dcg = sum(1.0 / math.log2(i + 2) for i, item in enumerate(ranked[:k]) if item in relevant)
    idcg = sum(1.0 / math.log2(i + 2) for i in range(min(k, len(relevant))))
    return dcg / idcg


def evaluate_embeddings(
    emb: np.ndarray,
    relevance: dict[int, set[int]],
    split: np.ndarray,
    config: EvalConfig,
) -> EvalReport:
    """Score precomputed embeddings against a relevance map."""
    t0 = time.perf_counter()
    if not relevance:
        raise EmptyEvaluation(f"no hidden {config.phase.value} edges, nothing to evaluate")
    target = Split.VAL if config.phase is Phase.VAL else Split.TEST
    if config.pool == "split":
        pool = np.flatnonzero(split == target)
    else:
        pool = np.arange(split.size)
    k = config.k
    if k > pool.size - 1:
        log.warning("k=%d exceeds the %d candidates per query; clamping", k, pool.size - 1)
        k = pool.size - 1
    per_query = {}
    for q in sorted(relevance):
        ranked = rank_candidates(emb, q, pool[pool != q])
        per_query[q] = ndcg_at_k(ranked, relevance[q], k)
    mean = sum(per_query[q] for q in sorted(per_query)) / len(per_query)
    return EvalReport(
        mean_ndcg=mean,
        per_query=per_query,
        num_queries=len(per_query),
        k=k,
        phase=config.phase,
        pool=config.pool,
        wall_time=time.perf_counter() - t0,
    )


def evaluate(
    params: dict[str, np.ndarray],
    g: Graph,
    split: np.ndarray,
    x: np.ndarray,
    config: EvalConfig = EvalConfig(),
) -> EvalReport:
    """Embed on the phase-visible view and score every node with hidden edges."""
    split = check_split(split, g.num_nodes)
    view = visible_graph(g, split, config.phase)
    emb = embed_nodes(params, view, x)
    return evaluate_embeddings(emb, hidden_relevance(g, split, config.phase), split, config)
