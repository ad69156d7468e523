"""Triplet sampling, triplet loss and the early-stopped training loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .evaluation import EvalConfig, evaluate_embeddings
from .graph import Graph, Phase, Split, check_split, hidden_relevance, visible_graph
from .model import EncoderConfig, embed_nodes, forward, init_params
from .numerics import AdamState, Tape, Tensor, adam_step

log = logging.getLogger(__name__)

MAX_REJECTIONS = 1000


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    margin: float = 0.5
    lr: float = 1e-3
    triplets_per_batch: int = 1024
    max_epochs: int = 100
    patience: int = 10
    eval_k: int = 10
    seed: int = 0
    mask_target_edges: bool = True

    def __post_init__(self):
        if not self.margin > 0:
            raise ValueError("margin must be > 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.triplets_per_batch < 1 or self.max_epochs < 0:
            raise ValueError("triplets_per_batch >= 1 and max_epochs >= 0 required")


@dataclass
class History:
    epochs: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_ndcg: list[float] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def best_val_ndcg(self) -> float:
        return self.val_ndcg[self.epochs.index(self.best_epoch)]

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_ndcg", "best_flag"])
            for e, loss, ndcg in zip(self.epochs, self.train_loss, self.val_ndcg):
                w.writerow([e, repr(loss), repr(ndcg), int(e == self.best_epoch)])


def read_history_csv(path) -> History:
    h = History()
    with open(path, encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            h.epochs.append(int(rec["epoch"]))
            h.train_loss.append(float(rec["train_loss"]))
            h.val_ndcg.append(float(rec["val_ndcg"]))
            if rec["best_flag"] == "1":
                h.best_epoch = int(rec["epoch"])
    return h


def sample_epoch_triplets(train_view: Graph, train_nodes: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One epoch of (anchor, positive, negative) rows, shape ``(2E, 3)``.

    Every undirected edge yields both orientations; negatives are uniform
    over ``train_nodes`` excluding the anchor and its neighbours.
    """
    u, v = train_view.edges()
    if u.size == 0:
        raise TrainingError("train view has no edges")
    order = rng.permutation(u.size)
    u, v = u[order], v[order]
    anchors = np.empty(2 * u.size, dtype=np.int64)
    positives = np.empty_like(anchors)
    anchors[0::2], positives[0::2] = u, v
    anchors[1::2], positives[1::2] = v, u

    train_nodes = np.asarray(train_nodes, dtype=np.int64)
    negatives = train_nodes[rng.integers(0, train_nodes.size, size=anchors.size)]
    bad = np.flatnonzero((negatives == anchors) | train_view.has_edge(anchors, negatives))
    tries = 1
    while bad.size:
        if tries >= MAX_REJECTIONS:
            raise TrainingError(
                f"no valid negative for anchor {anchors[bad[0]]} after {MAX_REJECTIONS} draws"
            )
        negatives[bad] = train_nodes[rng.integers(0, train_nodes.size, size=bad.size)]
        still = (negatives[bad] == anchors[bad]) | train_view.has_edge(anchors[bad], negatives[bad])
        bad = bad[still]
        tries += 1
    return np.stack([anchors, positives, negatives], axis=1)


def _without_edges(g: Graph, u: np.ndarray, v: np.ndarray) -> Graph:
    """Copy of ``g`` with the undirected edges {u[i], v[i]} removed."""
    rows, cols = g.arcs()
    drop = np.concatenate([u * g.num_nodes + v, v * g.num_nodes + u])
    keep = ~np.isin(rows * g.num_nodes + cols, drop)
    return Graph.from_edges(g.num_nodes, rows[keep], cols[keep])


def triplet_loss(d_ap: float, d_an: float, margin: float) -> float:
    return max(0.0, d_ap - d_an + margin)


def batch_triplet_loss(tape: Tape, emb: Tensor, triplets: np.ndarray, margin: float) -> Tensor:
    """Mean hinge loss over a batch of triplets, recorded on the tape."""
    a = tape.gather_rows(emb, triplets[:, 0])
    p = tape.gather_rows(emb, triplets[:, 1])
    n = tape.gather_rows(emb, triplets[:, 2])
    gap = tape.sub(tape.row_l2_distance(a, p), tape.row_l2_distance(a, n))
    return tape.mean(tape.relu(tape.add_scalar(gap, margin)))


def fit(
    g: Graph,
    split: np.ndarray,
    x: np.ndarray,
    enc_cfg: EncoderConfig,
    train_cfg: TrainConfig,
) -> tuple[dict[str, np.ndarray], History]:
    """Train with early stopping on val NDCG; returns the best-epoch parameters.

    Epoch 0 is the untrained initialization, so the result is never worse
    on validation than the starting point.
    """
    split = check_split(split, g.num_nodes)
    x = np.asarray(x, dtype=np.float32)
    train_view = visible_graph(g, split, Phase.TRAIN)
    val_view = visible_graph(g, split, Phase.VAL)
    val_rel = hidden_relevance(g, split, Phase.VAL)
    eval_cfg = EvalConfig(k=train_cfg.eval_k, phase=Phase.VAL)
    train_nodes = np.flatnonzero(split == Split.TRAIN)

    params = init_params(enc_cfg)
    state = AdamState(lr=train_cfg.lr)
    rng = np.random.Generator(np.random.PCG64(train_cfg.seed))
    xt = Tensor(x)

    def val_score(p):
        return evaluate_embeddings(embed_nodes(p, val_view, x), val_rel, split, eval_cfg).mean_ndcg

    hist = History()
    best = val_score(params)
    best_params = {k: v.copy() for k, v in params.items()}
    hist.epochs.append(0)
    hist.train_loss.append(math.nan)
    hist.val_ndcg.append(best)
    stale = 0

    for epoch in range(1, train_cfg.max_epochs + 1):
        triplets = sample_epoch_triplets(train_view, train_nodes, rng)
        losses = []
        for b, start in enumerate(range(0, len(triplets), train_cfg.triplets_per_batch)):
            batch = triplets[start : start + train_cfg.triplets_per_batch]
            tape = Tape()
            tracked = {k: Tensor(v, requires_grad=True, name=k) for k, v in params.items()}
            mp_graph = _without_edges(train_view, batch[:, 0], batch[:, 1]) if train_cfg.mask_target_edges else train_view
            loss = batch_triplet_loss(tape, forward(tape, tracked, mp_graph, xt), batch, train_cfg.margin)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            tape.backward(loss)
            adam_step(params, {k: t.grad for k, t in tracked.items()}, state)
            losses.append(value)
        mean_loss = float(np.mean(losses))
        score = val_score(params)
        hist.epochs.append(epoch)
        hist.train_loss.append(mean_loss)
        hist.val_ndcg.append(score)
        log.debug("epoch %d loss %.4f val_ndcg %.4f", epoch, mean_loss, score)
        if score > best:
            best, stale = score, 0
            best_params = {k: v.copy() for k, v in params.items()}
            hist.best_epoch = epoch
        else:
            stale += 1
            if stale >= train_cfg.patience:
                break
    return best_params, hist
