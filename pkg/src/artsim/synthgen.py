"""Synthetic artist graphs with planted communities and graded feature tiers.

Each node has a latent taste vector (community centroid plus noise).  Edges
are mutual k-nearest neighbours in latent space plus a fraction of uniform
noise edges.  The feature tiers observe the latent vector through channels
of decreasing fidelity: ``clap_like`` (small noise, linear lift),
``acoustic_like`` (projection plus larger noise), ``tags_like`` (community
one-hot with bit flips) and ``random``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .features import random_features, write_ftrx
from .graph import Graph, check_split, save_edge_list, save_node_ids, save_split, split_counts

TIERS = ("clap_like", "acoustic_like", "tags_like", "random")


class ProbeOrderingError(RuntimeError):
    """Feature tiers are not ordered by informativeness."""


@dataclass(frozen=True)
class SynthConfig:
    num_nodes: int = 2000
    num_communities: int = 20
    # latent scale is small relative to sigma_clap so clap_like is informative
    # but not a perfect copy of the latent, which leaves room for topology
    latent_dim: int = 4
    centroid_std: float = 0.5
    within_std: float = 0.075
    knn_edges: int = 8
    noise_edge_fraction: float = 0.1
    sigma_clap: float = 0.1
    sigma_acoustic: float = 0.5
    acoustic_scale: float = 0.7
    tag_flip_prob: float = 0.05
    clap_dim: int = 32
    acoustic_dim: int = 24
    random_dim: int = 32
    clap_lift: str = "random"
    train_fraction: float = 0.8
    val_fraction: float = 0.1
    test_fraction: float = 0.1
    seed: int = 42

    def __post_init__(self):
        if abs(self.train_fraction + self.val_fraction + self.test_fraction - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")
        if min(self.sigma_clap, self.sigma_acoustic, self.within_std, self.centroid_std, self.acoustic_scale) < 0:
            raise ValueError("noise levels must be >= 0")
        if not 0 <= self.tag_flip_prob <= 1 or not 0 <= self.noise_edge_fraction < 1:
            raise ValueError("probabilities out of range")
        if self.knn_edges < 1 or self.num_communities < 1 or self.num_nodes < 3:
            raise ValueError("knn_edges, num_communities >= 1 and num_nodes >= 3 required")
        if self.clap_lift not in ("random", "identity"):
            raise ValueError("clap_lift must be 'random' or 'identity'")

    @property
    def tags_dim(self) -> int:
        return self.num_communities

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self))

    @classmethod
    def from_mapping(cls, items: dict[str, str]) -> "SynthConfig":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for key, raw in items.items():
            if key not in types:
                raise ValueError(f"unknown synth config key {key!r}")
            kind = types[key]
            kw[key] = raw if kind == "str" else (int(raw) if kind == "int" else float(raw))
        return cls(**kw)


@dataclass
class SynthInstance:
    config: SynthConfig
    graph: Graph
    latent: np.ndarray
    community: np.ndarray
    tiers: dict[str, np.ndarray]
    split: np.ndarray
    knn_edges: tuple[np.ndarray, np.ndarray]

    @property
    def ids(self) -> list[str]:
        return [str(i) for i in range(self.graph.num_nodes)]


def _pairwise_sq(z: np.ndarray) -> np.ndarray:
    sq = np.sum(z * z, axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * (z @ z.T)
    np.fill_diagonal(d, np.inf)
    return d


def mutual_knn(z: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Edges (u < v) where each endpoint is among the other's k nearest."""
    n = z.shape[0]
    k = min(k, n - 1)
    d = _pairwise_sq(z)
    nn = np.argpartition(d, k - 1, axis=1)[:, :k]
    member = np.zeros((n, n), dtype=bool)
    member[np.repeat(np.arange(n), k), nn.ravel()] = True
    mutual = member & member.T
    # keep every node connected: fall back to its single nearest neighbour
    lonely = ~mutual.any(axis=1)
    if lonely.any():
        nearest = np.argmin(d[lonely], axis=1)
        mutual[np.flatnonzero(lonely), nearest] = True
        mutual |= mutual.T
    u, v = np.nonzero(np.triu(mutual, 1))
    return u.astype(np.int64), v.astype(np.int64)


def stratified_split(community: np.ndarray, fractions: tuple[float, float, float], rng) -> np.ndarray:
    """Assign labels so every community and the whole set track ``fractions``.

    Nodes are grouped by community (random order within each group) and
    labels are dealt by largest deficit, which keeps any contiguous run of
    the sequence, hence each community, within about one node of target.
    """
    n = community.size
    order = np.concatenate(
        [rng.permutation(np.flatnonzero(community == c)) for c in np.unique(community)]
    )
    frac = np.asarray(fractions, dtype=np.float64)
    assigned = np.zeros(3)
    labels = np.empty(n, dtype=np.int8)
    for j, node in enumerate(order):
        deficit = frac * (j + 1) - assigned
        lab = int(np.argmax(deficit))
        labels[node] = lab
        assigned[lab] += 1
    return labels


def generate(config: SynthConfig = SynthConfig()) -> SynthInstance:
    cfg = config
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    n, c, dz = cfg.num_nodes, cfg.num_communities, cfg.latent_dim

    community = rng.permutation(np.arange(n) % c)
    centroids = rng.normal(0.0, cfg.centroid_std, size=(c, dz))
    latent = centroids[community] + rng.normal(0.0, cfg.within_std, size=(n, dz))

    ku, kv = mutual_knn(latent, cfg.knn_edges)
    num_noise = int(round(cfg.noise_edge_fraction * ku.size / (1.0 - cfg.noise_edge_fraction)))
    nu = rng.integers(0, n, size=num_noise)
    nv = rng.integers(0, n, size=num_noise)
    graph = Graph.from_edges(n, np.concatenate([ku, nu]), np.concatenate([kv, nv]))

    if cfg.clap_lift == "identity":
        lift = np.eye(dz, cfg.clap_dim)
    else:
        lift = rng.normal(0.0, 1.0 / np.sqrt(dz), size=(dz, cfg.clap_dim))
    clap = (latent + rng.normal(0.0, 1.0, size=(n, dz)) * cfg.sigma_clap) @ lift

    # acoustic noise is added after projection, so the projection scale sets its SNR
    proj = rng.normal(0.0, cfg.acoustic_scale, size=(dz, cfg.acoustic_dim))
    acoustic = latent @ proj + rng.normal(0.0, 1.0, size=(n, cfg.acoustic_dim)) * cfg.sigma_acoustic

    onehot = np.eye(c)[community]
    flips = rng.random(size=(n, c)) < cfg.tag_flip_prob
    tags = np.where(flips, 1.0 - onehot, onehot)

    rand = random_features(n, cfg.random_dim, int(rng.integers(0, 2**63 - 1)))

    split = stratified_split(
        community, (cfg.train_fraction, cfg.val_fraction, cfg.test_fraction), rng
    )
    tiers = {
        "clap_like": clap.astype(np.float32),
        "acoustic_like": acoustic.astype(np.float32),
        "tags_like": tags.astype(np.float32),
        "random": rand,
    }
    return SynthInstance(cfg, graph, latent.astype(np.float32), community, tiers, split, (ku, kv))


def _loo_1nn_accuracy(x: np.ndarray, labels: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    d = _pairwise_sq(x)
    # ties resolved towards the lowest node index
    nearest = np.argmin(d, axis=1)
    return float(np.mean(labels[nearest] == labels))


def informativeness_probe(inst: SynthInstance, strict: bool = True) -> dict[str, float]:
    """Leave-one-out 1-NN community accuracy for every tier.

    With ``strict`` the tiers must rank clap_like > acoustic_like > tags_like
    > random, otherwise the generator is misconfigured.
    """
    acc = {t: _loo_1nn_accuracy(inst.tiers[t], inst.community) for t in TIERS}
    if strict and not (acc["clap_like"] > acc["acoustic_like"] > acc["tags_like"] > acc["random"]):
        raise ProbeOrderingError(f"feature tiers out of order: {acc}")
    return acc


def write_instance(inst: SynthInstance, out_dir) -> Path:
    """Write edges.tsv, nodes.tsv, split.tsv, one FTRX per tier and manifest.txt."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids = inst.ids
    save_node_ids(ids, out / "nodes.tsv")
    save_edge_list(inst.graph, out / "edges.tsv", ids)
    save_split(inst.split, out / "split.tsv", ids)
    for name, mat in inst.tiers.items():
        write_ftrx(mat, out / f"{name}.ftrx")
    counts = split_counts(check_split(inst.split))
    lines = [inst.config.to_text()]
    lines.append(f"num_edges={inst.graph.num_edges}\n")
    lines += [f"split_{k}={v}\n" for k, v in counts.items()]
    lines += [f"dim_{t}={inst.tiers[t].shape[1]}\n" for t in TIERS]
    (out / "manifest.txt").write_text("".join(lines), encoding="utf-8")
    return out


def with_overrides(cfg: SynthConfig, **kw) -> SynthConfig:
    return dataclasses.replace(cfg, **kw)
