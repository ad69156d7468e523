"""Encoder: input projection, 0-4 message-passing layers (SAGE or GIN), FC head."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .graph import Graph
from .numerics import Tape, Tensor

MAX_GRAPH_LAYERS = 4
LAYER_KINDS = ("sage", "gin")


@dataclass(frozen=True)
class EncoderConfig:
    in_dim: int
    num_graph_layers: int = 2
    layer_kind: str = "sage"
    hidden_dim: int = 256
    embed_dim: int = 128
    fc_layers: int = 2
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.num_graph_layers <= MAX_GRAPH_LAYERS:
            raise ValueError(f"num_graph_layers must be in 0..{MAX_GRAPH_LAYERS}")
        if self.layer_kind not in LAYER_KINDS:
            raise ValueError(f"layer_kind must be one of {LAYER_KINDS}")
        if min(self.in_dim, self.hidden_dim, self.embed_dim) < 1:
            raise ValueError("dimensions must be >= 1")
        if self.fc_layers < 1:
            raise ValueError("fc_layers must be >= 1")

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "EncoderConfig":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            key = key.strip()
            if key not in types:
                raise ValueError(f"unknown encoder config key {key!r}")
            kw[key] = val.strip() if types[key] == "str" else int(val)
        return cls(**kw)


def param_shapes(cfg: EncoderConfig) -> dict[str, tuple[int, int]]:
    h = cfg.hidden_dim
    shapes = {"input.weight": (cfg.in_dim, h), "input.bias": (1, h)}
    for layer in range(cfg.num_graph_layers):
        if cfg.layer_kind == "sage":
            shapes[f"sage{layer}.w_self"] = (h, h)
            shapes[f"sage{layer}.w_neigh"] = (h, h)
            shapes[f"sage{layer}.bias"] = (1, h)
        else:
            shapes[f"gin{layer}.mlp0.weight"] = (h, h)
            shapes[f"gin{layer}.mlp0.bias"] = (1, h)
            shapes[f"gin{layer}.mlp1.weight"] = (h, h)
            shapes[f"gin{layer}.mlp1.bias"] = (1, h)
    for j in range(cfg.fc_layers - 1):
        shapes[f"fc{j}.weight"] = (h, h)
        shapes[f"fc{j}.bias"] = (1, h)
    shapes["out.weight"] = (h, cfg.embed_dim)
    shapes["out.bias"] = (1, cfg.embed_dim)
    return shapes


def init_params(cfg: EncoderConfig) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases, float32; reproducible per seed."""
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith("bias"):
            params[name] = np.zeros(shape, dtype=np.float32)
        else:
            bound = np.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    return params


def infer_config(params: dict[str, np.ndarray], seed: int = 0) -> EncoderConfig:
    """Recover the architecture from checkpoint tensor names and shapes."""
    in_dim, hidden = params["input.weight"].shape
    sage = sum(1 for k in params if k.endswith(".w_self"))
    gin = sum(1 for k in params if k.endswith(".mlp0.weight"))
    fc = sum(1 for k in params if k.startswith("fc") and k.endswith(".weight"))
    return EncoderConfig(
        in_dim=in_dim,
        num_graph_layers=sage or gin,
        layer_kind="gin" if gin else "sage",
        hidden_dim=hidden,
        embed_dim=params["out.weight"].shape[1],
        fc_layers=fc + 1,
        seed=seed,
    )


def _linear(tape: Tape, x: Tensor, p: dict[str, Tensor], prefix: str) -> Tensor:
    return tape.add_rowvec_bias(tape.matmul(x, p[prefix + ".weight"]), p[prefix + ".bias"])


def forward(tape: Tape, params: dict[str, Tensor], g: Graph, x: Tensor) -> Tensor:
    """Node embeddings, ``num_nodes x embed_dim``, recorded on ``tape``."""
    if x.shape[0] != g.num_nodes:
        raise ValueError(f"feature rows {x.shape[0]} != graph nodes {g.num_nodes}")
    w0 = params["input.weight"]
    if x.shape[1] != w0.shape[0]:
        raise ValueError(f"feature dim {x.shape[1]} != encoder input dim {w0.shape[0]}")

    h = tape.relu(_linear(tape, x, params, "input"))
    layer = 0
    while f"sage{layer}.w_self" in params or f"gin{layer}.mlp0.weight" in params:
        if f"sage{layer}.w_self" in params:
            own = tape.matmul(h, params[f"sage{layer}.w_self"])
            neigh = tape.matmul(tape.csr_mean_neighbors(h, g), params[f"sage{layer}.w_neigh"])
            h = tape.relu(tape.add_rowvec_bias(tape.add(own, neigh), params[f"sage{layer}.bias"]))
        else:
            # GIN with eps fixed at 0: self term plus neighbour sum
            agg = tape.add(h, tape.csr_sum_neighbors(h, g))
            h = tape.relu(_linear(tape, agg, params, f"gin{layer}.mlp0"))
            h = tape.relu(_linear(tape, h, params, f"gin{layer}.mlp1"))
        layer += 1

    j = 0
    while f"fc{j}.weight" in params:
        h = tape.relu(_linear(tape, h, params, f"fc{j}"))
        j += 1
    return _linear(tape, h, params, "out")


def embed(params: dict[str, np.ndarray], g: Graph, x: np.ndarray) -> np.ndarray:
    """Untracked forward pass returning a plain array."""
    tape = Tape()
    wrapped = {k: Tensor(v) for k, v in params.items()}
    return forward(tape, wrapped, g, Tensor(x)).data


def embed_nodes(params: dict[str, np.ndarray], view: Graph, x: np.ndarray) -> np.ndarray:
    """Embeddings for ranking, computed on a phase-visible view of the graph.

    ``view`` should come from :func:`artsim.graph.visible_graph` so that
    evaluated nodes only receive messages over edges visible in that phase.
    """
    return embed(params, view, x)
