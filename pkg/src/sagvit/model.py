"""Full pipeline assembly: backbone -> patching -> graph -> GAT -> Transformer
-> pooled classifier, with the three component-removal ablation variants."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backbone import Backbone, BackboneConfig, ConfigError, FeatureMap, Image
from .gat import GatStack, GatStackConfig
from .graph import NeighborhoodSpec, PatchGraph, build_graph
from .patching import PatchMatrix, unfold
from .tensor import Parameter, Tensor, matmul, softmax
from .transformer import (EncoderBlock, HeadParams, TransformerConfig,
                          global_mean_pool, logits, positional_encoding)

ABLATIONS = ("full", "no_transformer", "no_gat", "no_backbone")


@dataclass
class ModelConfig:
    image_size: int = 32
    in_channels: int = 3
    num_classes: int = 2
    patch_size: int = 4
    ablation: str = "full"
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    neighborhood: NeighborhoodSpec = field(default_factory=NeighborhoodSpec)
    sigma_sq: float | str = "auto"
    gat: GatStackConfig | None = None  # d_in filled from the dimension chain
    transformer: TransformerConfig = field(default_factory=TransformerConfig)
    pool_first: bool = False  # pool before the encoder loop (ablation of stage order)

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}")
        if self.ablation == "no_backbone":
            self.patch_size = 4  # raw-image patching is fixed at 4x4

    # -- dimension chain -----------------------------------------------------

    @property
    def feature_channels(self) -> int:
        return (self.in_channels if self.ablation == "no_backbone"
                else self.backbone.out_channels)

    @property
    def map_extent(self) -> int:
        s = 1 if self.ablation == "no_backbone" else self.backbone.total_stride
        if self.image_size % s:
            raise ConfigError(f"image size {self.image_size} not divisible by stride {s}")
        return self.image_size // s

    @property
    def grid_extent(self) -> int:
        if self.map_extent % self.patch_size:
            raise ConfigError(
                f"patch size {self.patch_size} does not divide map extent {self.map_extent}")
        return self.map_extent // self.patch_size

    @property
    def num_tokens(self) -> int:
        return self.grid_extent ** 2

    @property
    def node_dim(self) -> int:
        return self.feature_channels * self.patch_size ** 2

    def validate(self) -> None:
        _ = self.grid_extent
        if self.gat is not None and self.gat.d_in != self.node_dim:
            raise ConfigError(
                f"gat d_in {self.gat.d_in} != patch feature dim {self.node_dim}")
        if self.neighborhood.mode == "knn" and not 1 <= self.neighborhood.k < self.num_tokens:
            raise ConfigError(
                f"knn k {self.neighborhood.k} out of range for {self.num_tokens} nodes")


@dataclass
class ForwardResult:
    probs: Tensor  # [1, C]
    logits: Tensor  # [1, C]
    graph: PatchGraph | None = None
    patches: PatchMatrix | None = None
    alphas: list[list[np.ndarray]] | None = None  # per GAT layer, per head
    tokens: np.ndarray | None = None  # encoder output rows
    pooled: np.ndarray | None = None


class SagVit:
    """The classifier; construction is fully seeded and deterministic."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self._params: list[Parameter] = []
        tcfg = cfg.transformer

        self.backbone: Backbone | None = None
        if cfg.ablation != "no_backbone":
            self.backbone = Backbone(cfg.backbone, cfg.in_channels, rng)
            self._params += self.backbone.params

        self.gat: GatStack | None = None
        if cfg.ablation != "no_gat":
            if cfg.gat is None:
                cfg.gat = GatStackConfig(d_in=cfg.node_dim)
            self.gat = GatStack(cfg.gat, rng)
            self._params += self.gat.params

        token_in = cfg.gat.d_out if self.gat is not None else cfg.node_dim

        self.blocks: list[EncoderBlock] = []
        self.bridge: Parameter | None = None
        self.pos_table: np.ndarray | None = None
        self.pos_learned: Parameter | None = None
        if cfg.ablation != "no_transformer":
            if token_in != tcfg.d_model:
                self.bridge = Parameter(
                    rng.normal(0.0, 1.0 / np.sqrt(token_in), (tcfg.d_model, token_in)),
                    "bridge.weight")
                self._params.append(self.bridge)
            if tcfg.pos_encoding == "learned":
                self.pos_learned = Parameter(
                    rng.normal(0.0, 0.02, (cfg.num_tokens, tcfg.d_model)), "pos.table")
                self._params.append(self.pos_learned)
            else:
                self.pos_table = positional_encoding(cfg.num_tokens, tcfg.d_model,
                                                     tcfg.pos_encoding)
            for i in range(tcfg.num_layers):
                blk = EncoderBlock(tcfg, rng, f"transformer.block{i}")
                self.blocks.append(blk)
                self._params += blk.parameters()
            head_dim = tcfg.d_model
        else:
            head_dim = token_in

        self.head = HeadParams(head_dim, cfg.num_classes, rng)
        self._params += self.head.parameters()

        names = [p.name for p in self._params]
        assert len(names) == len(set(names)), "duplicate parameter names"

    # -- parameter plumbing --------------------------------------------------

    def parameters(self) -> list[Parameter]:
        return list(self._params)

    def zero_grad(self) -> None:
        for p in self._params:
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self._params}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        by_name = {p.name: p for p in self._params}
        missing = set(by_name) - set(state)
        if missing:
            raise ConfigError(f"checkpoint missing parameters: {sorted(missing)[:5]}")
        for name, p in by_name.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ConfigError(
                    f"checkpoint shape mismatch for {name}: {arr.shape} vs {p.data.shape}")
            p.data[...] = arr

    # -- forward -------------------------------------------------------------

    def forward(self, img: Image, diagnostics: bool = False) -> ForwardResult:
        cfg = self.cfg

        if self.backbone is not None:
            fmap = FeatureMap(self.backbone(img.data), cfg.backbone.total_stride)
        else:
            fmap = FeatureMap(img.data, 1)
        pm = unfold(fmap, cfg.patch_size)

        graph = None
        alphas = None
        if self.gat is not None:
            graph = build_graph(pm, cfg.neighborhood, cfg.sigma_sq)
            x = self.gat(graph, pm.features)
            if diagnostics:
                alphas = self._collect_alphas(graph, pm.features)
        else:
            x = pm.features

        if cfg.ablation != "no_transformer":
            if self.bridge is not None:
                x = matmul(x, self.bridge.T)
            if cfg.pool_first:
                x = global_mean_pool(x)  # single-token encoder input (stage-order ablation)
            elif self.pos_learned is not None:
                x = x + self.pos_learned
            else:
                x = x + self.pos_table
            for blk in self.blocks:
                x = blk(x)

        tokens = x.data.copy() if diagnostics else None
        z = global_mean_pool(x)
        lg = logits(z, self.head)
        probs = softmax(lg, axis=-1)
        return ForwardResult(probs=probs, logits=lg, graph=graph, patches=pm,
                             alphas=alphas, tokens=tokens,
                             pooled=z.data.copy()[0] if diagnostics else None)

    def _collect_alphas(self, graph, feats):
        from .gat import gat_attention
        from .tensor import no_grad
        out = []
        with no_grad():
            x = feats.detach()
            for kind, p in self.gat.layers:
                if kind == "graphconv":
                    from .gat import graph_conv
                    from .tensor import relu
                    x = relu(graph_conv(graph, x, p))
                else:
                    x, a = gat_attention(graph, x, p, activation=(kind == "gat"),
                                         use_edge_weight_bias=self.gat.cfg.use_edge_weight_bias,
                                         self_loops=self.gat.cfg.self_loops)
                    out.append(a)
        return out

    __call__ = forward
