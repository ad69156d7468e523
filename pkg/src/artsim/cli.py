"""Command line: ``artsim gen | train | eval | ablate``.

Settings resolve as command-line flag, then ``--config`` file (key=value
lines), then built-in default.  Every command echoes the resolved settings
into a manifest next to its outputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import time
from pathlib import Path

from .ablation import AblationGrid, ArtifactError, load_dataset, parse_list, run_ablation
from .evaluation import EmptyEvaluation, EvalConfig, evaluate
from .graph import Phase, split_counts
from .model import EncoderConfig, infer_config
from .numerics import CheckpointError, load_params, save_params
from .synthgen import SynthConfig, generate, informativeness_probe, write_instance
from .training import TrainConfig, TrainingError, fit

log = logging.getLogger("artsim")

EXIT_OK, EXIT_CELLS_FAILED, EXIT_USAGE = 0, 1, 2

# run settings shared by train and ablate: name -> (parser, default)
RUN_KEYS = {
    "features": (str, "clap_like"),
    "layers": (str, "2"),
    "layer_kind": (str, "sage"),
    "hidden_dim": (int, 256),
    "embed_dim": (int, 128),
    "fc_layers": (int, 2),
    "margin": (float, 0.5),
    "lr": (float, 1e-3),
    "epochs": (int, 100),
    "patience": (int, 10),
    "triplets_per_batch": (int, 1024),
    "mask_target_edges": (lambda s: s.strip().lower() in ("1", "true", "yes"), True),
    "k": (int, 10),
    "seed": (int, 0),
    "seeds": (str, ""),
}
SYNTH_KEYS = {f.name for f in dataclasses.fields(SynthConfig)}
COMMON_KEYS = {"data_dir"}


class UsageError(ValueError):
    pass


def read_config(path) -> dict[str, str]:
    """key=value lines; '#' starts a comment; unknown keys are rejected."""
    out = {}
    if path is None:
        return out
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    known = SYNTH_KEYS | set(RUN_KEYS) | COMMON_KEYS
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in known:
            raise UsageError(f"{path}:{lineno}: invalid config key {key!r}")
        out[key] = val.strip()
    return out


def resolve(args: argparse.Namespace, cfg: dict[str, str], key: str):
    """Flag beats config file beats default."""
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    parse, default = RUN_KEYS[key]
    if key in cfg:
        try:
            return parse(cfg[key])
        except ValueError as exc:
            raise UsageError(f"config key {key}: {exc}") from exc
    return default


def data_dir(args, cfg) -> Path:
    d = args.data_dir or cfg.get("data_dir")
    if not d:
        raise UsageError("--data-dir is required")
    return Path(d)


def write_manifest(path: Path, sections: dict[str, str]) -> None:
    text = "".join(f"[{name}]\n{body}" for name, body in sections.items())
    text += f"[run]\ncreated={time.strftime('%Y-%m-%dT%H:%M:%S')}\n"
    path.write_text(text, encoding="utf-8")


def train_config(args, cfg, seed: int) -> TrainConfig:
    return TrainConfig(
        margin=resolve(args, cfg, "margin"),
        lr=resolve(args, cfg, "lr"),
        triplets_per_batch=resolve(args, cfg, "triplets_per_batch"),
        max_epochs=resolve(args, cfg, "epochs"),
        patience=resolve(args, cfg, "patience"),
        eval_k=resolve(args, cfg, "k"),
        seed=seed,
        mask_target_edges=resolve(args, cfg, "mask_target_edges"),
    )


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    cfg = read_config(args.config)
    synth = {k: v for k, v in cfg.items() if k in SYNTH_KEYS}
    if args.seed is not None:
        synth["seed"] = str(args.seed)
    config = SynthConfig.from_mapping(synth)
    out = data_dir(args, cfg)
    inst = generate(config)
    try:
        write_instance(inst, out)
    except OSError as exc:
        raise UsageError(f"cannot write to {out}: {exc}") from exc
    counts = split_counts(inst.split)
    probe = informativeness_probe(inst, strict=False)
    print(f"wrote {out}: {inst.graph.num_nodes} nodes, {inst.graph.num_edges} edges")
    print("split " + " ".join(f"{k}={v}" for k, v in counts.items()))
    print("probe " + " ".join(f"{t}={a:.3f}" for t, a in probe.items()))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = read_config(args.config)
    data = load_dataset(data_dir(args, cfg))
    features = resolve(args, cfg, "features")
    layers = int(resolve(args, cfg, "layers"))
    seed = resolve(args, cfg, "seed")
    x = data.features(features)
    enc = EncoderConfig(
        in_dim=x.shape[1],
        num_graph_layers=layers,
        layer_kind=resolve(args, cfg, "layer_kind"),
        hidden_dim=resolve(args, cfg, "hidden_dim"),
        embed_dim=resolve(args, cfg, "embed_dim"),
        fc_layers=resolve(args, cfg, "fc_layers"),
        seed=seed,
    )
    tc = train_config(args, cfg, seed)
    if layers == 0:
        log.info("0 graph layers: MLP-only baseline, edges are ignored")
    log.info("features %s -> input dim %d", features, x.shape[1])

    out = Path(args.out) if args.out else data.root / "runs" / f"{features}-L{layers}-s{seed}"
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    params, hist = fit(data.graph, data.split, x, enc, tc)
    save_params(params, out / "model.prms")
    hist.write_csv(out / "history.csv")
    write_manifest(
        out / "manifest.txt",
        {
            "data": f"data_dir={data.root}\nfeatures={features}\n",
            "encoder": enc.to_text(),
            "train": "".join(f"{k}={v!r}\n" for k, v in dataclasses.asdict(tc).items()),
        },
    )
    log.info("trained in %.1fs", time.perf_counter() - t0)
    print(f"best epoch {hist.best_epoch}: val NDCG@{tc.eval_k} = {hist.best_val_ndcg:.4f}")
    print(f"wrote {out / 'model.prms'} and {out / 'history.csv'}")
    return EXIT_OK


def _manifest_features(checkpoint: Path) -> str | None:
    man = checkpoint.parent / "manifest.txt"
    if not man.is_file():
        return None
    for line in man.read_text(encoding="utf-8").splitlines():
        if line.startswith("features="):
            return line.split("=", 1)[1]
    return None


def cmd_eval(args) -> int:
    cfg = read_config(args.config)
    data = load_dataset(data_dir(args, cfg))
    ckpt = Path(args.checkpoint)
    try:
        params = load_params(ckpt)
    except (OSError, CheckpointError) as exc:
        raise UsageError(f"cannot load checkpoint {ckpt}: {exc}") from exc
    features = args.features or _manifest_features(ckpt) or resolve(args, cfg, "features")
    x = data.features(features)
    enc = infer_config(params)
    if enc.in_dim != x.shape[1]:
        raise UsageError(
            f"shape mismatch: checkpoint expects input dim {enc.in_dim}, "
            f"features {features!r} have dim {x.shape[1]}"
        )
    phase = Phase(args.phase)
    k = resolve(args, cfg, "k")
    report = evaluate(params, data.graph, data.split, x, EvalConfig(k=k, phase=phase))
    out = Path(args.out) if args.out else ckpt.parent / f"report_{phase.value}.csv"
    report.write_csv(out, data.ids)
    print(f"{phase.value} NDCG@{report.k} = {report.mean_ndcg:.4f} over {report.num_queries} queries")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = read_config(args.config)
    data = load_dataset(data_dir(args, cfg))
    features = args.features or cfg.get("features") or ",".join(AblationGrid().features)
    layers = args.layers or cfg.get("layers") or "0,1,2,3,4"
    seeds_text = args.seeds or cfg.get("seeds")
    if seeds_text:
        seeds = parse_list(seeds_text, int)
    else:
        base = resolve(args, cfg, "seed")
        seeds = tuple(range(base, base + 3))
    grid = AblationGrid(
        features=parse_list(features),
        layers=parse_list(layers, int),
        seeds=seeds,
        layer_kind=resolve(args, cfg, "layer_kind"),
        hidden_dim=resolve(args, cfg, "hidden_dim"),
        embed_dim=resolve(args, cfg, "embed_dim"),
        fc_layers=resolve(args, cfg, "fc_layers"),
        train=train_config(args, cfg, 0),
        k=resolve(args, cfg, "k"),
    )
    # surface missing feature files before any training starts
    for f in grid.features:
        data.features(f)
    log.info("ablation: %d cells", len(grid.cells()))
    t0 = time.perf_counter()
    result = run_ablation(data, grid, args.workers)
    out = Path(args.out) if args.out else data.root / "ablation.csv"
    result.write_csv(out)
    if args.svg:
        result.write_svg(args.svg)
    timings = "".join(f"{o.features},{o.layers},{o.seed}={o.seconds:.2f}\n" for o in result.outcomes)
    write_manifest(
        out.with_suffix(".manifest.txt"),
        {"data": f"data_dir={data.root}\n", "grid": grid.to_text(), "seconds": timings},
    )
    for f, L, mu, sd in result.aggregates():
        print(f"{f:<32} layers={L}  NDCG@{grid.k} {mu:.4f} +- {sd:.4f}")
    print(f"wrote {out} ({len(result.outcomes)} runs, {time.perf_counter() - t0:.0f}s)")
    if result.failures:
        for o in result.failures:
            print(f"FAILED {o.features} layers={o.layers} seed={o.seed}: {o.error}", file=sys.stderr)
        return EXIT_CELLS_FAILED
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _run_flags(p: argparse.ArgumentParser, grid: bool = False) -> None:
    if not grid:
        p.add_argument("--features", help="tier names joined by '+', e.g. clap_like+tags_like")
        p.add_argument("--layers", type=int, choices=range(5), help="graph layers 0..4")
    p.add_argument("--layer-kind", dest="layer_kind", choices=("sage", "gin"))
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.add_argument("--fc-layers", dest="fc_layers", type=int)
    p.add_argument("--margin", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--batch", dest="triplets_per_batch", type=int, help="triplets per batch")
    p.add_argument("--k", type=int, help="NDCG cutoff")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="artsim", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--data-dir", dest="data_dir")
    shared.add_argument("--seed", type=int)
    shared.add_argument("--config", help="key=value settings file")

    p = sub.add_parser("gen", parents=[shared], help="generate a synthetic dataset")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", parents=[shared], help="train one encoder")
    _run_flags(p)
    p.add_argument("--out", help="run directory (default DATA/runs/<features>-L<layers>-s<seed>)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[shared], help="score a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", help="defaults to the features recorded beside the checkpoint")
    p.add_argument("--phase", choices=("val", "test"), default="test")
    p.add_argument("--k", type=int)
    p.add_argument("--out", help="report CSV (default next to the checkpoint)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", parents=[shared], help="sweep feature sets x layer counts x seeds")
    _run_flags(p, grid=True)
    p.add_argument("--features", help="comma-separated feature sets (default: the four tiers)")
    p.add_argument("--layers", help="comma-separated layer counts (default 0,1,2,3,4)")
    p.add_argument("--seeds", help="comma-separated seeds (default SEED, SEED+1, SEED+2)")
    p.add_argument("--workers", type=int, help="process pool size (default GRB_THREADS or CPU count)")
    p.add_argument("--out", help="CSV path (default DATA/ablation.csv)")
    p.add_argument("--svg", help="also draw a line chart here")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (UsageError, ArtifactError, EmptyEvaluation, TrainingError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
