"""Multi-head graph attention over patch graphs, plus the leading
mean-aggregation graph convolution of the encoding pipeline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import ConfigError
from .graph import PatchGraph
from .tensor import (Parameter, Tensor, concat, div, exp, leaky_relu, matmul,
                     relu, segment_sum, take_rows)


@dataclass
class GatStackConfig:
    d_in: int
    d_hidden: int = 64
    d_out: int = 64
    num_layers: int = 2  # total GAT layers including the final one
    heads: int = 4
    first_layer: str = "gat"  # "gat" or "graphconv"
    leaky_slope: float = 0.2
    use_edge_weight_bias: bool = False  # add ln(w_uv) to pre-softmax scores
    self_loops: bool = False

    def __post_init__(self):
        if self.num_layers < 1:
            raise ConfigError("GAT stack needs at least 1 layer")
        if self.heads < 1:
            raise ConfigError("GAT needs at least 1 head")
        if self.first_layer not in ("gat", "graphconv"):
            raise ConfigError(f"unknown first_layer {self.first_layer!r}")


class GatLayerParams:
    """Per-head transform W^(i) [F' x D_in] and attention vector a^(i) [2F']."""

    def __init__(self, d_in: int, d_head: int, heads: int, rng: np.random.Generator,
                 prefix: str, leaky_slope: float = 0.2):
        self.heads = heads
        self.d_head = d_head
        self.leaky_slope = leaky_slope
        scale = 1.0 / np.sqrt(d_in)
        self.W = [Parameter(rng.normal(0.0, scale, (d_head, d_in)), f"{prefix}.head{i}.W")
                  for i in range(heads)]
        self.a = [Parameter(rng.normal(0.0, 0.1, (2 * d_head, 1)), f"{prefix}.head{i}.a")
                  for i in range(heads)]

    def parameters(self) -> list[Parameter]:
        return [*self.W, *self.a]


def _edge_arrays(g: PatchGraph, self_loops: bool):
    src = g.src()
    dst = g.dst()
    w = g.weights
    if self_loops:
        loop = np.arange(g.num_nodes, dtype=np.int64)
        src = np.concatenate([src, loop])
        dst = np.concatenate([dst, loop])
        w = np.concatenate([w, np.ones(g.num_nodes)])
    return src, dst, w


def gat_attention(g: PatchGraph, x: Tensor, params: GatLayerParams,
                  activation: bool = True, use_edge_weight_bias: bool = False,
                  self_loops: bool = False) -> tuple[Tensor, list[np.ndarray]]:
    """One multi-head GAT layer.

    For each head: scores LeakyReLU(a^T [W x_u || W x_v]) are softmaxed over
    each node u's neighborhood, then messages sum_v alpha W x_v are activated
    and head outputs concatenated.  Isolated nodes aggregate the zero vector.

    Returns the [|V| x heads*d_head] output and per-head per-edge alphas.
    """
    n = g.num_nodes
    if x.shape[0] != n:
        raise ConfigError(f"feature rows {x.shape[0]} != node count {n}")
    src, dst, ew = _edge_arrays(g, self_loops)
    outs = []
    alphas: list[np.ndarray] = []
    for i in range(params.heads):
        h = matmul(x, params.W[i].T)  # [n, F']
        score_vec = params.a[i]  # [2F', 1]
        s_all = matmul(concat([take_rows(h, src), take_rows(h, dst)], axis=1), score_vec)
        s = leaky_relu(s_all, params.leaky_slope)  # [E, 1]
        if use_edge_weight_bias:
            s = s + np.log(ew).reshape(-1, 1)
        # stable segment softmax over each source node's neighborhood
        seg_max = np.full(n, -np.inf)
        np.maximum.at(seg_max, src, s.data[:, 0])
        seg_max[~np.isfinite(seg_max)] = 0.0  # isolated nodes
        e = exp(s + (-seg_max[src]).reshape(-1, 1))
        denom = segment_sum(e, src, n)  # [n, 1]
        alpha = div(e, take_rows(denom, src))  # [E, 1]
        msg = segment_sum(alpha * take_rows(h, dst), src, n)  # [n, F']
        outs.append(relu(msg) if activation else msg)
        alphas.append(alpha.data[:, 0].copy())
    out = outs[0] if len(outs) == 1 else concat(outs, axis=1)
    return out, alphas


def graph_conv(g: PatchGraph, x: Tensor, weight: Parameter) -> Tensor:
    """Mean aggregation over the neighborhood plus the node itself, then W."""
    n = g.num_nodes
    src, dst = g.src(), g.dst()
    loop = np.arange(n, dtype=np.int64)
    all_src = np.concatenate([src, loop])
    all_dst = np.concatenate([dst, loop])
    counts = np.bincount(all_src, minlength=n).astype(np.float64)
    summed = segment_sum(take_rows(x, all_dst), all_src, n)
    mean = summed * (1.0 / counts).reshape(-1, 1)
    return matmul(mean, weight.T)


class GatStack:
    """First layer (GAT or GraphConv), hidden GAT layers with ReLU, and a
    final single-head GAT projecting to d_out without concatenation."""

    def __init__(self, cfg: GatStackConfig, rng: np.random.Generator, prefix: str = "gat"):
        self.cfg = cfg
        self.params: list[Parameter] = []
        self.layers: list[tuple[str, object]] = []

        if cfg.d_hidden % cfg.heads:
            raise ConfigError(f"d_hidden {cfg.d_hidden} not divisible by heads {cfg.heads}")
        d_head = cfg.d_hidden // cfg.heads

        if cfg.first_layer == "graphconv":
            w = Parameter(rng.normal(0.0, 1.0 / np.sqrt(cfg.d_in), (cfg.d_hidden, cfg.d_in)),
                          f"{prefix}.graphconv.weight")
            self.params.append(w)
            self.layers.append(("graphconv", w))
        else:
            lp = GatLayerParams(cfg.d_in, d_head, cfg.heads, rng,
                                f"{prefix}.layer0", cfg.leaky_slope)
            self.params += lp.parameters()
            self.layers.append(("gat", lp))

        for li in range(1, cfg.num_layers):
            last = li == cfg.num_layers - 1
            if last:
                lp = GatLayerParams(cfg.d_hidden, cfg.d_out, 1, rng,
                                    f"{prefix}.layer{li}", cfg.leaky_slope)
            else:
                lp = GatLayerParams(cfg.d_hidden, d_head, cfg.heads, rng,
                                    f"{prefix}.layer{li}", cfg.leaky_slope)
            self.params += lp.parameters()
            self.layers.append(("gat_final" if last else "gat", lp))
        if cfg.num_layers == 1:
            # degenerate stack: the single layer must already emit d_out
            self.layers = []
            self.params = []
            lp = GatLayerParams(cfg.d_in, cfg.d_out, 1, rng, f"{prefix}.layer0",
                                cfg.leaky_slope)
            self.params += lp.parameters()
            self.layers.append(("gat_final", lp))

    def __call__(self, g: PatchGraph, x: Tensor) -> Tensor:
        cfg = self.cfg
        for kind, p in self.layers:
            if kind == "graphconv":
                x = relu(graph_conv(g, x, p))
            elif kind == "gat":
                x, _ = gat_attention(g, x, p, activation=True,
                                     use_edge_weight_bias=cfg.use_edge_weight_bias,
                                     self_loops=cfg.self_loops)
            else:  # final layer: single head, no concat, no trailing ReLU
                x, _ = gat_attention(g, x, p, activation=False,
                                     use_edge_weight_bias=cfg.use_edge_weight_bias,
                                     self_loops=cfg.self_loops)
        return x
