"""Command-line entry points: train, eval, inspect, landscape, gen-data, stats."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import sgt
from .backbone import ConfigError, Image
from .config import load_config
from .graph import adjacency_dense, build_graph
from .model import SagVit
from .patching import unfold
from .tensor import Tensor, no_grad
from .training import (MetricsReport, TrainingAborted, count_params,
                       estimate_flops, loss_landscape_scan, macro_f1,
                       measure_throughput, micro_f1, train_loop)
from .transformer import token_correlation

EXIT_CONFIG = 2
EXIT_NAN = 3


def worker_count() -> int:
    env = os.environ.get("SAGVIT_THREADS", "")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _run_dir(out: Path, seed: int) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    d = out / f"{stamp}-seed{seed}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _load_run(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "ablation", None):
        cfg.ablation = args.ablation
    return cfg


def cmd_train(args) -> int:
    cfg = _load_run(args)
    model = cfg.build_model()
    dataset = cfg.load_dataset("train")
    run_dir = _run_dir(Path(args.out), cfg.seed)
    (run_dir / "config.toml").write_text(Path(args.config).read_text())

    metrics_path = run_dir / "metrics.csv"
    with open(metrics_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "macro_f1", "micro_f1", "lr", "throughput"])

        def on_epoch(epoch, report, lr):
            # throughput is an inference metric (see `eval`); the training
            # log keeps the column for schema stability
            writer.writerow([epoch, f"{report.loss:.12g}", f"{report.macro_f1:.12g}",
                             f"{report.micro_f1:.12g}", f"{lr:.12g}", "0"])
            fh.flush()
            print(f"epoch {epoch:4d}  loss {report.loss:.6f}  "
                  f"macro_f1 {report.macro_f1:.4f}  lr {lr:.6f}")

        state, reports = train_loop(model, dataset, cfg.optim, seed=cfg.seed,
                                    epochs=args.epochs, on_epoch=on_epoch)

    sgt.write_checkpoint(run_dir / "checkpoint_final.sgtc", model.state_dict())
    if state.best_params is not None:
        sgt.write_checkpoint(run_dir / "checkpoint_best.sgtc", state.best_params)
    print(f"run artifacts in {run_dir}")
    return 0


def _eval_metrics(model: SagVit, dataset) -> MetricsReport:
    labels = np.array([img.label for img in dataset])

    def predict(img):
        with no_grad():
            return int(np.argmax(model.forward(img).probs.data))

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        preds = np.array(list(pool.map(predict, dataset)))

    from .tensor import concat
    from .training import cross_entropy
    with no_grad():
        rows = [model.forward(img).logits for img in dataset[:min(len(dataset), 256)]]
        loss = cross_entropy(concat(rows, axis=0),
                             labels[:len(rows)]).item()
    throughput = measure_throughput(model, dataset[:min(len(dataset), 32)],
                                    warmup_batches=1, batch_size=8)
    return MetricsReport(loss=loss,
                         accuracy=float(np.mean(preds == labels)),
                         macro_f1=macro_f1(preds, labels, model.cfg.num_classes),
                         micro_f1=micro_f1(preds, labels),
                         throughput=throughput)


def cmd_eval(args) -> int:
    cfg = _load_run(args)
    model = cfg.build_model()
    model.load_state_dict(sgt.read_checkpoint(args.checkpoint))
    dataset = cfg.load_dataset(args.split)
    if not dataset:
        print("error: empty dataset", file=sys.stderr)
        return EXIT_CONFIG
    report = _eval_metrics(model, dataset)
    payload = {"loss": report.loss, "accuracy": report.accuracy,
               "macro_f1": report.macro_f1, "micro_f1": report.micro_f1,
               "throughput": report.throughput}
    for key, value in payload.items():
        print(f"{key}: {value:.6f}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.json").write_text(json.dumps(payload, indent=2))
    return 0


def _inspect_image(cfg) -> Image:
    return cfg.load_dataset("train")[0]


def cmd_inspect(args) -> int:
    cfg = _load_run(args)
    model = cfg.build_model()
    if args.checkpoint:
        model.load_state_dict(sgt.read_checkpoint(args.checkpoint))
    if args.image:
        arr = sgt.read_sgt(args.image)
        if arr.ndim != 3:
            raise ConfigError(f"inspect image must be rank 3, got rank {arr.ndim}")
        img = Image(data=Tensor(arr), label=None)
    else:
        img = _inspect_image(cfg)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with no_grad():
        result = model.forward(img, diagnostics=True)

    # adjacency: reconstruct the graph even for no_gat runs
    graph = result.graph
    if graph is None:
        if model.backbone is not None:
            from .backbone import FeatureMap
            fmap = FeatureMap(model.backbone(img.data), cfg.backbone.total_stride)
        else:
            from .backbone import FeatureMap
            fmap = FeatureMap(img.data, 1)
        graph = build_graph(unfold(fmap, model.cfg.patch_size),
                            model.cfg.neighborhood, model.cfg.sigma_sq)
    np.savetxt(out / "adjacency.csv", adjacency_dense(graph), delimiter=",", fmt="%.9g")

    with open(out / "attention.tsv", "w") as fh:
        fh.write("layer\thead\tu\tv\talpha\n")
        if result.alphas:
            for li, per_layer in enumerate(result.alphas):
                for hi, alpha in enumerate(per_layer):
                    for (u, v), a in zip(graph.edges, alpha):
                        fh.write(f"{li}\t{hi}\t{u}\t{v}\t{a:.9g}\n")

    tokens = result.tokens if result.tokens is not None else result.pooled[None, :]
    np.savetxt(out / "token_correlation.csv", token_correlation(tokens),
               delimiter=",", fmt="%.9g")
    sgt.write_sgt(out / "embedding.sgt", result.pooled)

    with open(out / "edges.tsv", "w") as fh:
        fh.write("u\tv\tweight\n")
        for (u, v), w in zip(graph.edges, graph.weights):
            fh.write(f"{u}\t{v}\t{w:.9g}\n")
    print(f"diagnostics in {out}")
    return 0


def cmd_landscape(args) -> int:
    if args.grid % 2 == 0:
        print(f"error: grid must be odd, got {args.grid}", file=sys.stderr)
        return EXIT_CONFIG
    cfg = _load_run(args)
    model = cfg.build_model()
    model.load_state_dict(sgt.read_checkpoint(args.checkpoint))
    dataset = cfg.load_dataset("train")
    batch = dataset[:min(len(dataset), args.batch)]
    surface = loss_landscape_scan(model, batch, grid=args.grid,
                                  radius=args.radius, seed=args.seed or 0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.savetxt(out / "landscape.csv", surface, delimiter=",", fmt="%.12g")
    center = surface[args.grid // 2, args.grid // 2]
    print(f"center loss {center:.6f}; surface in {out / 'landscape.csv'}")
    return 0


def cmd_gen_data(args) -> int:
    from .data import gen_synthetic
    images = gen_synthetic(classes=args.classes, per_class=args.per_class,
                           size=args.size, seed=args.seed or 0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["file", "label"])
        for i, img in enumerate(images):
            name = f"img_{i:05d}.sgt"
            sgt.write_sgt(out / name, img.data.data)
            writer.writerow([name, img.label])
    print(f"wrote {len(images)} images to {out}")
    return 0


def cmd_stats(args) -> int:
    cfg = _load_run(args)
    model = cfg.build_model()
    params = count_params(model)
    gflops = estimate_flops(model)
    print(f"parameters_millions: {params:.6f}")
    print(f"gflops_forward: {gflops:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sagvit",
                                     description="Graph-attention ViT pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False):
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--ablation", choices=["full", "no_transformer", "no_gat",
                                              "no_backbone"], default=None)
        p.add_argument("--out", default="runs")
        if checkpoint:
            p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("train", help="train a model per config")
    common(p)
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p, checkpoint=True)
    p.add_argument("--split", choices=["train", "test"], default="train")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="export diagnostic files for one image")
    common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--image", default=None, help="rank-3 SGT tensor file")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("landscape", help="2D loss-landscape scan")
    common(p, checkpoint=True)
    p.add_argument("--grid", type=int, default=11)
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--batch", type=int, default=16)
    p.set_defaults(func=cmd_landscape)

    p = sub.add_parser("gen-data", help="write a synthetic SGT dataset")
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--per-class", type=int, default=32)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="data")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("stats", help="parameter count and forward GFLOPs")
    common(p)
    p.set_defaults(func=cmd_stats)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, sgt.SgtFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingAborted as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NAN


if __name__ == "__main__":
    sys.exit(main())
