import csv
import logging
import math
import statistics
import xml.etree.ElementTree as ET

import numpy as np
import pytest

import artsim.ablation as ablation
from artsim.ablation import AblationGrid, load_dataset, read_ablation_csv, run_ablation, worker_count
from artsim.cli import main, read_config, UsageError
from artsim.evaluation import read_report_csv
from artsim.features import read_ftrx, write_ftrx
from artsim.graph import load_node_ids, load_split
from artsim.training import TrainConfig, read_history_csv

SMALL = "num_nodes=200\nnum_communities=4\nlatent_dim=4\nval_fraction=0.15\ntest_fraction=0.15\ntrain_fraction=0.7\n"


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "small.cfg").write_text(SMALL + "epochs=3\npatience=3\n")
    assert main(["gen", "--config", str(root / "small.cfg"), "--data-dir", str(root / "d")]) == 0
    return root


def cfg(data):
    return str(data / "small.cfg")


def ddir(data):
    return str(data / "d")


def test_gen_writes_artifact_set(data):
    names = {p.name for p in (data / "d").iterdir()}
    assert {"edges.tsv", "split.tsv", "nodes.tsv", "manifest.txt"} <= names
    assert {f"{t}.ftrx" for t in ("clap_like", "acoustic_like", "tags_like", "random")} <= names
    assert "num_nodes=200" in (data / "d" / "manifest.txt").read_text()


def test_gen_is_byte_identical(data, tmp_path):
    main(["gen", "--config", cfg(data), "--data-dir", str(tmp_path / "again")])
    for p in (data / "d").iterdir():
        if p.is_file() and p.suffix in (".tsv", ".ftrx", ".txt"):
            assert (tmp_path / "again" / p.name).read_bytes() == p.read_bytes(), p.name


def test_gen_seed_flag_overrides_config(data, tmp_path):
    main(["gen", "--config", cfg(data), "--data-dir", str(tmp_path / "s7"), "--seed", "7"])
    assert "seed=7" in (tmp_path / "s7" / "manifest.txt").read_text()
    assert (tmp_path / "s7" / "random.ftrx").read_bytes() != (data / "d" / "random.ftrx").read_bytes()


def test_gen_default_split_sizes(tmp_path):
    assert main(["gen", "--data-dir", str(tmp_path)]) == 0
    split = load_split(tmp_path / "split.tsv", load_node_ids(tmp_path / "nodes.tsv"))
    assert np.bincount(split).tolist() == [1600, 200, 200]


def test_invalid_config_key(tmp_path, capsys):
    (tmp_path / "bad.cfg").write_text("num_nodes=50\nwibble=3\n")
    assert main(["gen", "--config", str(tmp_path / "bad.cfg"), "--data-dir", str(tmp_path / "x")]) == 2
    assert "wibble" in capsys.readouterr().err
    with pytest.raises(UsageError, match=":2: invalid config key"):
        read_config(tmp_path / "bad.cfg")


def test_train_zero_layers_logs_baseline(data, tmp_path, caplog):
    with caplog.at_level(logging.INFO):
        rc = main(["train", "--config", cfg(data), "--data-dir", ddir(data), "--layers", "0", "--out", str(tmp_path)])
    assert rc == 0
    assert "MLP-only baseline" in caplog.text
    assert (tmp_path / "model.prms").is_file() and (tmp_path / "history.csv").is_file()


def test_train_concatenated_features_dim(data, tmp_path):
    main(["train", "--config", cfg(data), "--data-dir", ddir(data), "--features", "clap_like+tags_like",
          "--layers", "1", "--out", str(tmp_path)])
    manifest = (tmp_path / "manifest.txt").read_text()
    assert "in_dim=36" in manifest  # 32 clap columns + 4 tag columns


def test_train_rerun_identical_history(data, tmp_path):
    args = ["train", "--config", cfg(data), "--data-dir", ddir(data), "--layers", "2", "--seed", "3"]
    main(args + ["--out", str(tmp_path / "a")])
    main(args + ["--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "history.csv").read_bytes() == (tmp_path / "b" / "history.csv").read_bytes()
    assert (tmp_path / "a" / "model.prms").read_bytes() == (tmp_path / "b" / "model.prms").read_bytes()


def test_flag_beats_config_beats_default(data, tmp_path):
    main(["train", "--config", cfg(data), "--data-dir", ddir(data), "--out", str(tmp_path / "c")])
    assert read_history_csv(tmp_path / "c" / "history.csv").epochs[-1] <= 3
    main(["train", "--config", cfg(data), "--data-dir", ddir(data), "--epochs", "1", "--out", str(tmp_path / "f")])
    assert read_history_csv(tmp_path / "f" / "history.csv").epochs == [0, 1]
    # without a config file the built-in default patience/epochs apply
    main(["train", "--data-dir", ddir(data), "--epochs", "2", "--out", str(tmp_path / "d")])
    assert "patience=10" in (tmp_path / "d" / "manifest.txt").read_text()


@pytest.fixture(scope="module")
def trained(data):
    out = data / "run"
    main(["train", "--config", cfg(data), "--data-dir", ddir(data), "--layers", "1", "--out", str(out)])
    return out


def test_eval_val_and_test_disjoint(data, trained):
    for phase in ("val", "test"):
        assert main(["eval", "--data-dir", ddir(data), "--checkpoint", str(trained / "model.prms"), "--phase", phase]) == 0
    val, _ = read_report_csv(trained / "report_val.csv")
    test, _ = read_report_csv(trained / "report_test.csv")
    assert val and test and not set(val) & set(test)


def test_report_mean_is_row_mean(data, trained, capsys):
    main(["eval", "--data-dir", ddir(data), "--checkpoint", str(trained / "model.prms")])
    rows, summary = read_report_csv(trained / "report_test.csv")
    vals = [rows[q] for q in sorted(rows, key=int)]
    assert float(summary["mean"]) == pytest.approx(sum(vals) / len(vals), abs=1e-15)
    assert f"{float(summary['mean']):.4f}" in capsys.readouterr().out


def test_eval_clamps_k(data, trained, caplog):
    with caplog.at_level(logging.WARNING):
        main(["eval", "--data-dir", ddir(data), "--checkpoint", str(trained / "model.prms"), "--k", "5000",
              "--out", str(trained / "big_k.csv")])
    _, summary = read_report_csv(trained / "big_k.csv")
    assert int(summary["k"]) < 5000 and "clamping" in caplog.text


def test_eval_shape_mismatch(data, trained, capsys):
    rc = main(["eval", "--data-dir", ddir(data), "--checkpoint", str(trained / "model.prms"), "--features", "tags_like"])
    err = capsys.readouterr().err
    assert rc == 2 and "expects input dim 32" in err and "dim 4" in err


def test_inconsistent_artifacts(data, tmp_path, capsys):
    import shutil

    broken = tmp_path / "broken"
    shutil.copytree(data / "d", broken)
    x = read_ftrx(broken / "clap_like.ftrx")
    write_ftrx(x[:-3], broken / "clap_like.ftrx")
    assert main(["train", "--data-dir", str(broken), "--epochs", "1", "--out", str(tmp_path / "o")]) == 2
    assert "rows" in capsys.readouterr().err
    (broken / "split.tsv").unlink()
    assert main(["train", "--data-dir", str(broken)]) == 2
    assert "split.tsv" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# ablation


def test_single_cell_grid(data, tmp_path):
    out = tmp_path / "one.csv"
    rc = main(["ablate", "--config", cfg(data), "--data-dir", ddir(data), "--features", "random",
               "--layers", "0", "--seeds", "0", "--out", str(out)])
    assert rc == 0
    raw, agg = read_ablation_csv(out)
    assert len(raw) == 1 and agg[("random", 0)]["std"] == 0.0
    assert agg[("random", 0)]["mean"] == raw[0][3]


def test_aggregates_match_raw_rows(data, tmp_path):
    out = tmp_path / "grid.csv"
    main(["ablate", "--config", cfg(data), "--data-dir", ddir(data), "--features", "clap_like,tags_like+random",
          "--layers", "0,2", "--seeds", "4,5", "--out", str(out), "--svg", str(tmp_path / "g.svg")])
    raw, agg = read_ablation_csv(out)
    assert len(raw) == 2 * 2 * 2
    assert [(f, L, s) for f, L, s, _ in raw] == [
        (f, L, s) for f in ("clap_like", "tags_like+random") for L in (0, 2) for s in (4, 5)
    ]
    for (f, L), stats in agg.items():
        vals = [v for ff, LL, _, v in raw if (ff, LL) == (f, L)]
        assert stats["mean"] == statistics.fmean(vals)
        assert stats["std"] == statistics.pstdev(vals)
        assert stats["std"] == pytest.approx(np.std(vals), abs=1e-15)
    svg = ET.parse(tmp_path / "g.svg").getroot()
    assert len(svg.findall("{http://www.w3.org/2000/svg}polyline")) == 2


def test_ablation_csv_is_deterministic(data, tmp_path):
    args = ["ablate", "--config", cfg(data), "--data-dir", ddir(data), "--features", "acoustic_like",
            "--layers", "0,1", "--seeds", "0,1"]
    main(args + ["--out", str(tmp_path / "a.csv")])
    main(args + ["--out", str(tmp_path / "b.csv")])
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_failed_cell_is_recorded_and_sweep_continues(data, tmp_path, monkeypatch, capsys):
    real = ablation.fit

    def flaky(g, split, x, enc, tc):
        if enc.num_graph_layers == 1:
            raise FloatingPointError("boom")
        return real(g, split, x, enc, tc)

    monkeypatch.setattr(ablation, "fit", flaky)
    out = tmp_path / "f.csv"
    rc = main(["ablate", "--config", cfg(data), "--data-dir", ddir(data), "--features", "clap_like",
               "--layers", "0,1,2", "--seeds", "0", "--out", str(out), "--workers", "1"])
    assert rc == 1
    assert "FAILED clap_like layers=1" in capsys.readouterr().err
    raw, agg = read_ablation_csv(out)
    by_layer = {L: v for _, L, _, v in raw}
    assert math.isnan(by_layer[1]) and math.isfinite(by_layer[0]) and math.isfinite(by_layer[2])
    assert math.isnan(agg[("clap_like", 1)]["mean"])


def test_pool_matches_serial(data, tmp_path):
    ds = load_dataset(data / "d")
    grid = AblationGrid(features=("clap_like", "random"), layers=(0, 1), seeds=(0,),
                        train=TrainConfig(max_epochs=2, patience=2))
    serial = run_ablation(ds, grid, workers=1)
    pooled = run_ablation(ds, grid, workers=2)
    serial.write_csv(tmp_path / "s.csv")
    pooled.write_csv(tmp_path / "p.csv")
    assert (tmp_path / "s.csv").read_bytes() == (tmp_path / "p.csv").read_bytes()


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("GRB_THREADS", "3")
    assert worker_count() == 3
    assert worker_count(2) == 2
    monkeypatch.setenv("GRB_THREADS", "0")
    assert worker_count() == 1


def test_grid_validation():
    with pytest.raises(ValueError):
        AblationGrid(layers=())
    with pytest.raises(ValueError):
        AblationGrid(layers=(0, 5))
    with pytest.raises(ValueError):
        AblationGrid(seeds=(1, 1))
    assert len(AblationGrid().cells()) == 60


def test_csv_header(data, tmp_path):
    out = tmp_path / "h.csv"
    main(["ablate", "--config", cfg(data), "--data-dir", ddir(data), "--features", "random",
          "--layers", "0", "--seeds", "0", "--out", str(out)])
    with open(out) as fh:
        assert next(csv.reader(fh)) == ["features", "layers", "seed", "test_ndcg"]
