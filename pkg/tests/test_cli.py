import csv
import json
import time

import numpy as np
import pytest

from sagvit import sgt
from sagvit.cli import EXIT_CONFIG, main

TINY_TOML = """\
seed = 0

[dataset]
source = "synthetic"
classes = 2
per_class = 8
size = 16
channels = 1

[backbone]
layers = [[4, 3, 2, "relu"], [6, 3, 2, "relu"]]

[patching]
k = 2

[graph]
mode = "moore"

[gat]
d_hidden = 8
d_out = 8
heads = 2

[transformer]
d_model = 8
n_heads = 2
num_layers = 2
d_ff = 16

[optim]
batch_size = 8
total_epochs = 30
warmup_epochs = 2
"""


@pytest.fixture
def config_path(tmp_path):
    p = tmp_path / "tiny.toml"
    p.write_text(TINY_TOML)
    return p


def run_dirs(out):
    return sorted(d for d in out.iterdir() if d.is_dir())


def read_metrics(run_dir):
    with open(run_dir / "metrics.csv", newline="") as fh:
        return list(csv.reader(fh))


def train(config_path, out, extra=()):
    return main(["train", "--config", str(config_path), "--out", str(out),
                 "--epochs", "3", *extra])


def test_train_writes_artifacts(config_path, tmp_path):
    out = tmp_path / "runs"
    assert train(config_path, out) == 0
    (run_dir,) = run_dirs(out)
    rows = read_metrics(run_dir)
    assert rows[0] == ["epoch", "loss", "macro_f1", "micro_f1", "lr", "throughput"]
    assert len(rows) == 4
    assert [r[0] for r in rows[1:]] == ["0", "1", "2"]
    assert (run_dir / "checkpoint_final.sgtc").exists()
    assert (run_dir / "checkpoint_best.sgtc").exists()
    assert (run_dir / "config.toml").read_text() == TINY_TOML


def test_train_same_seed_identical_metrics(config_path, tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert train(config_path, out, extra=["--seed", "7"]) == 0
        time.sleep(1.1)  # distinct run-dir timestamps
        outs.append(out)
    m1 = read_metrics(run_dirs(outs[0])[0])
    m2 = read_metrics(run_dirs(outs[1])[0])
    assert m1 == m2
    c1 = sgt.read_checkpoint(run_dirs(outs[0])[0] / "checkpoint_final.sgtc")
    c2 = sgt.read_checkpoint(run_dirs(outs[1])[0] / "checkpoint_final.sgtc")
    assert set(c1) == set(c2)
    for k in c1:
        assert np.array_equal(c1[k], c2[k]), k


def test_train_no_gat_checkpoint_has_no_gat_params(config_path, tmp_path):
    out = tmp_path / "runs"
    assert train(config_path, out, extra=["--ablation", "no_gat"]) == 0
    ckpt = sgt.read_checkpoint(run_dirs(out)[0] / "checkpoint_final.sgtc")
    assert ckpt
    assert not any(name.startswith("gat.") for name in ckpt)


def test_train_bad_config_exit_code(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text('ablation = "bogus"\n')
    assert main(["train", "--config", str(p), "--out", str(tmp_path / "r")]) == EXIT_CONFIG


def test_train_empty_dataset_exit_code(tmp_path):
    p = tmp_path / "empty.toml"
    p.write_text(TINY_TOML.replace("per_class = 8", "per_class = 0"))
    assert main(["train", "--config", str(p), "--out", str(tmp_path / "r")]) == EXIT_CONFIG


def trained_checkpoint(config_path, tmp_path, epochs="25"):
    out = tmp_path / "trainrun"
    assert main(["train", "--config", str(config_path), "--out", str(out),
                 "--epochs", epochs]) == 0
    return run_dirs(out)[0] / "checkpoint_final.sgtc"


def test_eval_overfit_and_json(config_path, tmp_path, capsys):
    ckpt = trained_checkpoint(config_path, tmp_path)
    out = tmp_path / "eval"
    assert main(["eval", "--config", str(config_path), "--checkpoint", str(ckpt),
                 "--out", str(out)]) == 0
    stdout = capsys.readouterr().out
    payload = json.loads((out / "eval.json").read_text())
    assert payload["macro_f1"] >= 0.99
    assert payload["throughput"] > 0
    for key, value in payload.items():
        assert f"{key}: {value:.6f}" in stdout


def test_eval_bad_checkpoint_exit_code(config_path, tmp_path):
    bad = tmp_path / "bad.sgtc"
    bad.write_bytes(b"not a checkpoint")
    assert main(["eval", "--config", str(config_path), "--checkpoint", str(bad),
                 "--out", str(tmp_path / "e")]) == EXIT_CONFIG


def test_inspect_exports(config_path, tmp_path):
    out = tmp_path / "inspect"
    assert main(["inspect", "--config", str(config_path), "--out", str(out)]) == 0

    adj = np.loadtxt(out / "adjacency.csv", delimiter=",")
    # 16x16 image, stride 4 backbone, k=2 patches -> 2x2 grid of 4 nodes
    assert adj.shape == (4, 4)
    assert np.array_equal(adj, adj.T)
    assert np.array_equal(np.diag(adj), np.zeros(4))
    assert np.all(adj[~np.eye(4, dtype=bool)] > 0)

    corr = np.loadtxt(out / "token_correlation.csv", delimiter=",")
    assert corr.shape == (4, 4)
    assert np.allclose(np.diag(corr), 1.0)
    assert np.allclose(corr, corr.T)

    emb = sgt.read_sgt(out / "embedding.sgt")
    assert emb.shape == (8,)

    with open(out / "attention.tsv") as fh:
        header, *rows = fh.read().splitlines()
    assert header == "layer\thead\tu\tv\talpha"
    sums = {}
    for row in rows:
        layer, head, u, v, alpha = row.split("\t")
        sums.setdefault((layer, head, u), 0.0)
        sums[(layer, head, u)] += float(alpha)
    assert sums and all(abs(s - 1.0) < 1e-6 for s in sums.values())

    with open(out / "edges.tsv") as fh:
        lines = fh.read().splitlines()
    assert lines[0] == "u\tv\tweight"
    assert len(lines) - 1 == int(np.count_nonzero(adj))


def test_inspect_no_gat_still_exports_adjacency(config_path, tmp_path):
    out = tmp_path / "inspect2"
    assert main(["inspect", "--config", str(config_path), "--out", str(out),
                 "--ablation", "no_gat"]) == 0
    adj = np.loadtxt(out / "adjacency.csv", delimiter=",")
    assert adj.shape == (4, 4) and np.array_equal(adj, adj.T)


def test_inspect_sgt_image_input(config_path, tmp_path):
    img_path = tmp_path / "img.sgt"
    rng = np.random.default_rng(0)
    sgt.write_sgt(img_path, rng.uniform(size=(1, 16, 16)))
    out = tmp_path / "inspect3"
    assert main(["inspect", "--config", str(config_path), "--out", str(out),
                 "--image", str(img_path)]) == 0
    assert (out / "embedding.sgt").exists()


def test_inspect_rejects_bad_rank_image(config_path, tmp_path):
    img_path = tmp_path / "img.sgt"
    sgt.write_sgt(img_path, np.zeros((16, 16)))
    assert main(["inspect", "--config", str(config_path),
                 "--out", str(tmp_path / "i"),
                 "--image", str(img_path)]) == EXIT_CONFIG


def test_landscape_csv_and_center(config_path, tmp_path):
    ckpt = trained_checkpoint(config_path, tmp_path, epochs="2")
    out = tmp_path / "land"
    assert main(["landscape", "--config", str(config_path),
                 "--checkpoint", str(ckpt), "--out", str(out),
                 "--grid", "3", "--radius", "0.5", "--batch", "4"]) == 0
    surface = np.loadtxt(out / "landscape.csv", delimiter=",")
    assert surface.shape == (3, 3)
    assert np.all(np.isfinite(surface))


def test_landscape_rejects_even_grid(config_path, tmp_path):
    ckpt = trained_checkpoint(config_path, tmp_path, epochs="1")
    assert main(["landscape", "--config", str(config_path),
                 "--checkpoint", str(ckpt), "--out", str(tmp_path / "l"),
                 "--grid", "4"]) == EXIT_CONFIG


def test_gen_data_writes_sgt_dataset(tmp_path):
    out = tmp_path / "data"
    assert main(["gen-data", "--classes", "2", "--per-class", "3",
                 "--size", "16", "--out", str(out)]) == 0
    with open(out / "labels.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["file", "label"]
    assert len(rows) == 7
    for name, label in rows[1:]:
        arr = sgt.read_sgt(out / name)
        assert arr.shape == (3, 16, 16)
        assert label in ("0", "1")


def test_stats_output(config_path, capsys):
    assert main(["stats", "--config", str(config_path)]) == 0
    lines = capsys.readouterr().out.splitlines()
    stats = dict(line.split(": ") for line in lines)
    assert float(stats["parameters_millions"]) > 0
    assert float(stats["gflops_forward"]) > 0
