"""Training harness: loss, AdamW-style optimizer, warmup+cosine schedule,
gradient clipping, metrics, parameter/FLOP accounting, and the 2D
loss-landscape scan."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .graph import knn_edges, moore_edges
from .model import SagVit
from .patching import PatchGrid
from .tensor import (Parameter, Tensor, backward, flop_count, log, mul,
                     no_grad, reset_flop_count, tsum)


@dataclass
class OptimSpec:
    lr0: float = 0.001
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    warmup_epochs: int = 10
    total_epochs: int = 128
    clip_norm: float = 1.0
    batch_size: int = 128

    def __post_init__(self):
        if self.warmup_epochs > self.total_epochs:
            raise ValueError("warmup_epochs exceeds total_epochs")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")


@dataclass
class MetricsReport:
    loss: float
    accuracy: float
    macro_f1: float
    micro_f1: float
    throughput: float = 0.0


@dataclass
class ModelStats:
    param_count_millions: float
    flops_giga: float


@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    seed: int = 0
    best_macro_f1: float = -1.0
    best_params: dict[str, np.ndarray] | None = None


class TrainingAborted(RuntimeError):
    """Raised when the loss goes non-finite; names the offending step."""


# ---------------------------------------------------------------------------
# loss and metrics
# ---------------------------------------------------------------------------

def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood from logits, via log-sum-exp."""
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    b, c = logits.shape
    if labels.max() >= c or labels.min() < 0:
        raise ValueError(f"label out of range for {c} classes: {labels}")
    shift = logits.data.max(axis=1, keepdims=True)  # constant w.r.t. grad
    from .tensor import exp as texp
    lse = log(tsum(texp(logits + (-shift)), axis=1, keepdims=True)) + shift
    onehot = np.zeros((b, c))
    onehot[np.arange(b), labels] = 1.0
    nll = lse - tsum(mul(logits, onehot), axis=1, keepdims=True)
    return tsum(nll) * (1.0 / b)


def macro_f1(preds, labels, num_classes: int) -> float:
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.size == 0 or preds.size != labels.size:
        raise ValueError("macro_f1 needs equal-length nonempty predictions and labels")
    scores = []
    for c in range(num_classes):
        tp = int(np.sum((preds == c) & (labels == c)))
        fp = int(np.sum((preds == c) & (labels != c)))
        fn = int(np.sum((preds != c) & (labels == c)))
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        scores.append(2 * p * r / (p + r) if p + r else 0.0)
    return float(np.mean(scores))


def micro_f1(preds, labels) -> float:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    # single-label multi-class micro F1 reduces to accuracy
    return float(np.mean(preds == labels))


# ---------------------------------------------------------------------------
# optimizer, schedule, clipping
# ---------------------------------------------------------------------------

def lr_at(epoch: float, spec: OptimSpec) -> float:
    """Linear warmup to lr0, then cosine decay to 0 at total_epochs."""
    if epoch < spec.warmup_epochs:
        return spec.lr0 * epoch / spec.warmup_epochs
    span = spec.total_epochs - spec.warmup_epochs
    if span == 0:
        return spec.lr0
    t = (epoch - spec.warmup_epochs) / span
    return spec.lr0 * 0.5 * (1.0 + math.cos(math.pi * t))


def clip_gradients(params: list[Parameter], max_norm: float = 1.0) -> float:
    """Scale all grads so the global L2 norm is at most max_norm.

    Returns the pre-clip norm."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = math.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


def adam_step(params: list[Parameter], state: TrainState, spec: OptimSpec,
              lr: float) -> None:
    """Bias-corrected Adam with decoupled weight decay (applied to the
    weights directly, before the moment update)."""
    state.step += 1
    b1, b2 = spec.betas
    t = state.step
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if spec.weight_decay:
            p.data *= 1.0 - lr * spec.weight_decay
        m = state.m.setdefault(p.name, np.zeros_like(p.data))
        v = state.v.setdefault(p.name, np.zeros_like(p.data))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p.data -= lr * mhat / (np.sqrt(vhat) + spec.eps)


# ---------------------------------------------------------------------------
# accounting
# ---------------------------------------------------------------------------

def count_params(model: SagVit) -> float:
    """Total learnable element count, in millions."""
    return sum(p.size for p in model.parameters()) / 1e6


def _grid_edge_count(model: SagVit) -> int:
    cfg = model.cfg
    ge = cfg.grid_extent
    grid = PatchGrid(rows=ge, cols=ge, patch_size=cfg.patch_size,
                     feature_dim=cfg.node_dim)
    if cfg.neighborhood.mode == "moore":
        return len(moore_edges(grid))
    if grid.num_patches == 1:
        return 0
    return len(knn_edges(grid, cfg.neighborhood.k))


def estimate_flops(model: SagVit) -> float:
    """Analytic forward FLOPs for one image, counting matmuls (2mnk) and
    convolutions (2*Cout*Cin*k^2*Hout*Wout); elementwise work is excluded."""
    cfg = model.cfg
    total = 0

    if model.backbone is not None:
        h = w = cfg.image_size
        cin = cfg.in_channels
        for cout, k, stride, _ in cfg.backbone.layers:
            pad = k // 2
            h = (h + 2 * pad - k) // stride + 1
            w = (w + 2 * pad - k) // stride + 1
            total += 2 * cout * cin * k * k * h * w
            cin = cout

    n = cfg.num_tokens
    e = _grid_edge_count(model) if model.gat is not None else 0
    if model.gat is not None:
        gcfg = model.gat.cfg
        if gcfg.self_loops:
            e += n
        for kind, p in model.gat.layers:
            if kind == "graphconv":
                total += 2 * n * gcfg.d_in * gcfg.d_hidden
            else:
                for W in p.W:
                    d_head, d_in = W.shape
                    total += 2 * n * d_in * d_head  # X W^T
                    total += 2 * e * 2 * d_head  # attention scores [E,2F'] @ a
        token_in = gcfg.d_out
    else:
        token_in = cfg.node_dim

    if cfg.ablation != "no_transformer":
        t = cfg.transformer
        if model.bridge is not None:
            total += 2 * n * token_in * t.d_model
        ntok = 1 if cfg.pool_first else n
        d, dk = t.d_model, t.d_k
        for _ in model.blocks:
            total += 3 * 2 * ntok * d * d  # Q, K, V projections
            total += t.n_heads * (2 * ntok * dk * ntok + 2 * ntok * ntok * dk)
            total += 2 * ntok * d * d  # output projection
            total += 2 * ntok * d * t.d_ff + 2 * ntok * t.d_ff * d
        head_in = d
    else:
        head_in = token_in

    total += 2 * head_in * cfg.num_classes  # classifier on the pooled row
    return total / 1e9


def measured_flops(model: SagVit, img) -> float:
    """Oracle: instrumented counter accumulated while walking one forward."""
    reset_flop_count()
    with no_grad():
        model.forward(img)
    return flop_count() / 1e9


def measure_throughput(model: SagVit, images, warmup_batches: int = 1,
                      batch_size: int = 8) -> float:
    """Inference images/second over wall-clock time, warmup batches excluded."""
    batches = [images[i:i + batch_size] for i in range(0, len(images), batch_size)]
    if len(batches) <= warmup_batches:
        raise ValueError("need at least one timed batch after warmup")
    with no_grad():
        for b in batches[:warmup_batches]:
            for img in b:
                model.forward(img)
        start = time.perf_counter()
        count = 0
        for b in batches[warmup_batches:]:
            for img in b:
                model.forward(img)
                count += 1
        elapsed = time.perf_counter() - start
    return count / max(elapsed, 1e-12)


# ---------------------------------------------------------------------------
# loss landscape
# ---------------------------------------------------------------------------

def _batch_loss(model: SagVit, batch) -> float:
    with no_grad():
        logits_rows = [model.forward(img).logits for img in batch]
        labels = [img.label for img in batch]
        from .tensor import concat
        return cross_entropy(concat(logits_rows, axis=0), labels).item()


def loss_landscape_scan(model: SagVit, batch, grid: int = 11, radius: float = 1.0,
                        seed: int = 0) -> np.ndarray:
    """Loss over a (alpha, beta) grid along two filter-normalized random
    directions; the center cell is the unperturbed model.  Parameters are
    restored bit-exactly afterward."""
    if grid % 2 == 0:
        raise ValueError(f"grid must be odd so the center is unperturbed, got {grid}")
    params = model.parameters()
    saved = [p.data.copy() for p in params]
    rng = np.random.default_rng(seed)

    def direction():
        ds = []
        for p in params:
            d = rng.normal(size=p.data.shape)
            dn = np.linalg.norm(d)
            pn = np.linalg.norm(p.data)
            ds.append(d * (pn / dn) if dn > 0 else d)  # filter normalization
        return ds

    d1, d2 = direction(), direction()
    coords = np.linspace(-radius, radius, grid)
    out = np.zeros((grid, grid))
    for i, a in enumerate(coords):
        for j, b in enumerate(coords):
            if a == 0.0 and b == 0.0:
                for p, s in zip(params, saved):
                    p.data[...] = s
            else:
                for p, s, u, v in zip(params, saved, d1, d2):
                    p.data[...] = s + a * u + b * v
            out[i, j] = _batch_loss(model, batch)
    for p, s in zip(params, saved):
        p.data[...] = s
    return out


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def run_epoch(model: SagVit, dataset, state: TrainState, spec: OptimSpec,
              rng: np.random.Generator) -> MetricsReport:
    order = rng.permutation(len(dataset))
    lr = lr_at(state.epoch, spec)
    params = model.parameters()
    losses = []
    preds, labels = [], []
    for start in range(0, len(order), spec.batch_size):
        idx = order[start:start + spec.batch_size]
        model.zero_grad()
        from .tensor import concat
        rows = []
        for i in idx:
            img = dataset[i]
            rows.append(model.forward(img).logits)
            labels.append(img.label)
        lg = concat(rows, axis=0)
        preds.extend(np.argmax(lg.data, axis=1).tolist())
        loss = cross_entropy(lg, [dataset[i].label for i in idx])
        if not np.isfinite(loss.item()):
            raise TrainingAborted(
                f"non-finite loss at epoch {state.epoch}, step {state.step}")
        backward(loss)
        losses.append(loss.item())
        clip_gradients(params, spec.clip_norm)
        adam_step(params, state, spec, lr)
    preds = np.array(preds)
    labels = np.array(labels)
    return MetricsReport(
        loss=float(np.mean(losses)),
        accuracy=float(np.mean(preds == labels)),
        macro_f1=macro_f1(preds, labels, model.cfg.num_classes),
        micro_f1=micro_f1(preds, labels),
    )


def train_loop(model: SagVit, dataset, spec: OptimSpec, seed: int = 0,
               epochs: int | None = None, on_epoch=None) -> tuple[TrainState, list[MetricsReport]]:
    """Seeded epochs of shuffle / forward / loss / backward / clip / step.

    Checkpoints (in memory) the best macro-F1 parameter snapshot; the CLI
    persists it.  ``on_epoch(epoch, report, lr)`` is an optional callback.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    state = TrainState(seed=seed)
    rng = np.random.default_rng(seed)
    reports = []
    for epoch in range(epochs if epochs is not None else spec.total_epochs):
        state.epoch = epoch
        report = run_epoch(model, dataset, state, spec, rng)
        reports.append(report)
        if report.macro_f1 > state.best_macro_f1:
            state.best_macro_f1 = report.macro_f1
            state.best_params = model.state_dict()
        if on_epoch is not None:
            on_epoch(epoch, report, lr_at(epoch, spec))
    return state, reports
