"""Layer-depth x feature-tier sweeps over a generated or loaded dataset."""

from __future__ import annotations

import concurrent.futures as cf
import csv
import logging
import math
import os
import statistics
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .evaluation import DEFAULT_K, EvalConfig, evaluate
from .features import FeatureError, materialize, tier_spec
from .graph import Graph, GraphFormatError, Phase, load_edge_list, load_node_ids, load_split
from .model import MAX_GRAPH_LAYERS, EncoderConfig
from .synthgen import TIERS
from .training import TrainConfig, fit

log = logging.getLogger(__name__)

RAW_COLUMNS = ("features", "layers", "seed", "test_ndcg")
MEAN_TAG = "mean"
STD_TAG = "std"


class ArtifactError(ValueError):
    """Dataset directory is missing files or its files disagree."""


@dataclass
class Dataset:
    root: Path
    ids: list[str]
    graph: Graph
    split: np.ndarray
    _features: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes

    def features(self, names: str) -> np.ndarray:
        """Standardized concatenation of the named tiers, cached per name."""
        if names not in self._features:
            try:
                self._features[names] = materialize(tier_spec(names), self.num_nodes, self.split, self.root)
            except (OSError, FeatureError) as exc:
                raise ArtifactError(f"features {names!r}: {exc}") from exc
        return self._features[names]


def load_dataset(root) -> Dataset:
    root = Path(root)
    for name in ("nodes.tsv", "edges.tsv", "split.tsv"):
        if not (root / name).is_file():
            raise ArtifactError(f"{root}: missing {name}")
    try:
        ids = load_node_ids(root / "nodes.tsv")
        g, _ = load_edge_list(root / "edges.tsv", ids)
        split = load_split(root / "split.tsv", ids)
    except (GraphFormatError, ValueError) as exc:
        raise ArtifactError(str(exc)) from exc
    return Dataset(root, ids, g, split)


@dataclass(frozen=True)
class AblationGrid:
    features: tuple[str, ...] = TIERS
    layers: tuple[int, ...] = (0, 1, 2, 3, 4)
    seeds: tuple[int, ...] = (0, 1, 2)
    layer_kind: str = "sage"
    hidden_dim: int = 256
    embed_dim: int = 128
    fc_layers: int = 2
    train: TrainConfig = TrainConfig()
    k: int = DEFAULT_K

    def __post_init__(self):
        if not self.features or not self.layers or not self.seeds:
            raise ValueError("ablation grid axes must be non-empty")
        if any(not 0 <= L <= MAX_GRAPH_LAYERS for L in self.layers):
            raise ValueError(f"layer counts must lie in 0..{MAX_GRAPH_LAYERS}")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("duplicate seeds")

    def cells(self) -> list[tuple[str, int, int]]:
        return [(f, L, s) for f in self.features for L in self.layers for s in self.seeds]

    def encoder(self, in_dim: int, layers: int, seed: int) -> EncoderConfig:
        return EncoderConfig(
            in_dim=in_dim,
            num_graph_layers=layers,
            layer_kind=self.layer_kind,
            hidden_dim=self.hidden_dim,
            embed_dim=self.embed_dim,
            fc_layers=self.fc_layers,
            seed=seed,
        )

    def to_text(self) -> str:
        lines = [
            f"features={','.join(self.features)}",
            f"layers={','.join(map(str, self.layers))}",
            f"seeds={','.join(map(str, self.seeds))}",
            f"layer_kind={self.layer_kind}",
            f"hidden_dim={self.hidden_dim}",
            f"embed_dim={self.embed_dim}",
            f"fc_layers={self.fc_layers}",
            f"k={self.k}",
        ]
        t = self.train
        lines += [
            f"margin={t.margin!r}",
            f"lr={t.lr!r}",
            f"triplets_per_batch={t.triplets_per_batch}",
            f"max_epochs={t.max_epochs}",
            f"patience={t.patience}",
            f"mask_target_edges={t.mask_target_edges}",
        ]
        return "\n".join(lines) + "\n"


@dataclass
class CellOutcome:
    features: str
    layers: int
    seed: int
    test_ndcg: float
    seconds: float
    error: str | None = None


@dataclass
class AblationResult:
    grid: AblationGrid
    outcomes: list[CellOutcome]

    @property
    def failures(self) -> list[CellOutcome]:
        return [o for o in self.outcomes if o.error is not None]

    def values(self, features: str, layers: int) -> list[float]:
        return [
            o.test_ndcg
            for o in self.outcomes
            if o.features == features and o.layers == layers and o.error is None
        ]

    def mean(self, features: str, layers: int) -> float:
        vals = self.values(features, layers)
        return statistics.fmean(vals) if vals else math.nan

    def std(self, features: str, layers: int) -> float:
        # population std, so a single seed reports 0
        vals = self.values(features, layers)
        return statistics.pstdev(vals) if vals else math.nan

    def aggregates(self) -> list[tuple[str, int, float, float]]:
        return [
            (f, L, self.mean(f, L), self.std(f, L))
            for f in self.grid.features
            for L in self.grid.layers
        ]

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RAW_COLUMNS)
            for o in self.outcomes:
                w.writerow([o.features, o.layers, o.seed, repr(o.test_ndcg)])
            for f, L, mu, sd in self.aggregates():
                w.writerow([f, L, MEAN_TAG, repr(mu)])
                w.writerow([f, L, STD_TAG, repr(sd)])

    def write_svg(self, path, title: str = "test NDCG by graph layers") -> None:
        Path(path).write_text(render_svg(self, title), encoding="utf-8")


def read_ablation_csv(path) -> tuple[list[tuple[str, int, int, float]], dict[tuple[str, int], dict[str, float]]]:
    """Parse an ablation CSV into raw rows and ``{(features, layers): {"mean", "std"}}``."""
    raw, agg = [], {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != RAW_COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        for f, L, seed, val in reader:
            if seed in (MEAN_TAG, STD_TAG):
                agg.setdefault((f, int(L)), {})[seed] = float(val)
            else:
                raw.append((f, int(L), int(seed), float(val)))
    return raw, agg


def run_cell(data: Dataset, grid: AblationGrid, features: str, layers: int, seed: int) -> float:
    x = data.features(features)
    enc = grid.encoder(x.shape[1], layers, seed)
    params, hist = fit(data.graph, data.split, x, enc, replace(grid.train, seed=seed, eval_k=grid.k))
    report = evaluate(params, data.graph, data.split, x, EvalConfig(k=grid.k, phase=Phase.TEST))
    log.info(
        "%s layers=%d seed=%d best_epoch=%d val=%.4f test=%.4f",
        features, layers, seed, hist.best_epoch, hist.best_val_ndcg, report.mean_ndcg,
    )
    return report.mean_ndcg


def _guarded_cell(data: Dataset, grid: AblationGrid, cell: tuple[str, int, int]) -> CellOutcome:
    f, L, s = cell
    t0 = time.perf_counter()
    try:
        value = run_cell(data, grid, f, L, s)
        return CellOutcome(f, L, s, value, time.perf_counter() - t0)
    except Exception as exc:  # a bad cell must not sink the sweep
        log.error("cell %s layers=%d seed=%d failed: %s", f, L, s, exc)
        return CellOutcome(f, L, s, math.nan, time.perf_counter() - t0, f"{type(exc).__name__}: {exc}")


# worker processes keep one dataset each instead of re-pickling it per cell
_WORKER_DATA: Dataset | None = None


def _init_worker(root: str) -> None:
    global _WORKER_DATA
    _WORKER_DATA = load_dataset(root)


def _worker_cell(grid: AblationGrid, cell: tuple[str, int, int]) -> CellOutcome:
    return _guarded_cell(_WORKER_DATA, grid, cell)


def worker_count(requested: int | None = None) -> int:
    """Pool size: explicit request, else GRB_THREADS, else the CPU count."""
    n = requested
    if n is None:
        env = os.environ.get("GRB_THREADS", "").strip()
        n = int(env) if env else (os.cpu_count() or 1)
    return max(1, n)


def run_ablation(data: Dataset, grid: AblationGrid, workers: int | None = None) -> AblationResult:
    cells = grid.cells()
    n = min(worker_count(workers), len(cells))
    if n == 1:
        outcomes = [_guarded_cell(data, grid, c) for c in cells]
    else:
        with cf.ProcessPoolExecutor(n, initializer=_init_worker, initargs=(str(data.root),)) as pool:
            futures = {c: pool.submit(_worker_cell, grid, c) for c in cells}
            outcomes = [futures[c].result() for c in cells]
    # merge in (features, layers, seed) key order whatever the completion order
    order = {c: i for i, c in enumerate(cells)}
    outcomes.sort(key=lambda o: order[(o.features, o.layers, o.seed)])
    return AblationResult(grid, outcomes)


# ---------------------------------------------------------------------------
# svg


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def render_svg(result: AblationResult, title: str = "", width: int = 640, height: int = 420) -> str:
    """Line per feature set, x = layers, y = mean NDCG, error bars = std."""
    grid = result.grid
    left, right, top, bottom = 60, 170, 40, 50
    pw, ph = width - left - right, height - top - bottom
    xs = sorted(grid.layers)
    x_lo, x_hi = xs[0], max(xs[-1], xs[0] + 1)
    hi = 0.0
    for f, L, mu, sd in result.aggregates():
        if math.isfinite(mu):
            hi = max(hi, mu + (sd if math.isfinite(sd) else 0.0))
    y_hi = max(0.1, math.ceil(hi * 10) / 10)

    def px(L):
        return left + pw * (L - x_lo) / (x_hi - x_lo)

    def py(v):
        return top + ph * (1 - v / y_hi)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{left + pw / 2:.1f}" y="22" text-anchor="middle" font-size="14">{_esc(title)}</text>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for L in xs:
        out.append(f'<text x="{px(L):.1f}" y="{top + ph + 18}" text-anchor="middle">{L}</text>')
    for i in range(6):
        v = y_hi * i / 5
        out.append(f'<text x="{left - 8}" y="{py(v) + 4:.1f}" text-anchor="end">{v:.2f}</text>')
        out.append(f'<line x1="{left}" y1="{py(v):.1f}" x2="{left + pw}" y2="{py(v):.1f}" stroke="#ddd"/>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 12}" text-anchor="middle">graph layers</text>')
    out.append(
        f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {top + ph / 2:.1f})">mean test NDCG@{grid.k}</text>'
    )
    for i, f in enumerate(grid.features):
        color = _PALETTE[i % len(_PALETTE)]
        pts = [(L, result.mean(f, L), result.std(f, L)) for L in xs]
        pts = [p for p in pts if math.isfinite(p[1])]
        if pts:
            path = " ".join(f"{px(L):.1f},{py(mu):.1f}" for L, mu, _ in pts)
            out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="2"/>')
        for L, mu, sd in pts:
            x = px(L)
            out.append(
                f'<line x1="{x:.1f}" y1="{py(mu - sd):.1f}" x2="{x:.1f}" y2="{py(mu + sd):.1f}" stroke="{color}"/>'
            )
            out.append(f'<circle cx="{x:.1f}" cy="{py(mu):.1f}" r="3" fill="{color}"/>')
        ly = top + 10 + 18 * i
        out.append(f'<line x1="{left + pw + 15}" y1="{ly}" x2="{left + pw + 35}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 40}" y="{ly + 4}">{_esc(f)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def parse_list(text: str, kind=str) -> tuple:
    items = [t.strip() for t in text.split(",") if t.strip()]
    return tuple(kind(t) for t in items)

