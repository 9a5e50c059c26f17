"""Run configuration: TOML file schema, validation, and model assembly."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .backbone import BackboneConfig, ConfigError
from .gat import GatStackConfig
from .graph import NeighborhoodSpec
from .model import ABLATIONS, ModelConfig, SagVit
from .training import OptimSpec


@dataclass
class DatasetSpec:
    source: str = "synthetic"  # "synthetic" | "cifar10"
    classes: int = 2
    per_class: int = 32
    size: int = 32
    channels: int = 3
    path: str | None = None  # cifar10 batch directory

    def __post_init__(self):
        if self.source not in ("synthetic", "cifar10"):
            raise ConfigError(f"unknown dataset source {self.source!r}")
        if self.source == "cifar10":
            self.classes = 10
            self.size = 32
            self.channels = 3


@dataclass
class RunConfig:
    seed: int = 0
    ablation: str = "full"
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    patch_size: int = 4
    neighborhood: NeighborhoodSpec = field(default_factory=NeighborhoodSpec)
    sigma_sq: float | str = "auto"
    gat: dict = field(default_factory=dict)  # GatStackConfig kwargs minus d_in
    transformer: dict = field(default_factory=dict)
    optim: OptimSpec = field(default_factory=OptimSpec)
    pool_first: bool = False

    def model_config(self) -> ModelConfig:
        from .transformer import TransformerConfig
        cfg = ModelConfig(
            image_size=self.dataset.size,
            in_channels=self.dataset.channels,
            num_classes=self.dataset.classes,
            patch_size=self.patch_size,
            ablation=self.ablation,
            backbone=self.backbone,
            neighborhood=self.neighborhood,
            sigma_sq=self.sigma_sq,
            transformer=TransformerConfig(**self.transformer),
            pool_first=self.pool_first,
        )
        if self.ablation != "no_gat":
            gat_kwargs = dict(self.gat)
            gat_kwargs.pop("d_in", None)
            cfg.gat = GatStackConfig(d_in=cfg.node_dim, **gat_kwargs)
        cfg.validate()
        return cfg

    def build_model(self) -> SagVit:
        return SagVit(self.model_config(), seed=self.seed)

    def load_dataset(self, split: str = "train"):
        from . import data
        if self.dataset.source == "synthetic":
            return data.gen_synthetic(classes=self.dataset.classes,
                                      per_class=self.dataset.per_class,
                                      size=self.dataset.size,
                                      seed=self.seed,
                                      channels=self.dataset.channels)
        if self.dataset.path is None:
            raise ConfigError("cifar10 dataset requires a 'path'")
        return data.load_cifar10(self.dataset.path, split=split)


def _layers_from_toml(raw) -> list[tuple[int, int, int, str]]:
    layers = []
    for spec in raw:
        if len(spec) != 4:
            raise ConfigError(f"backbone layer spec needs 4 entries, got {spec}")
        layers.append((int(spec[0]), int(spec[1]), int(spec[2]), str(spec[3])))
    return layers


def load_config(path) -> RunConfig:
    raw = tomllib.loads(Path(path).read_text())
    cfg = RunConfig()
    cfg.seed = int(raw.get("seed", 0))
    cfg.ablation = raw.get("ablation", "full")
    if cfg.ablation not in ABLATIONS:
        raise ConfigError(f"unknown ablation {cfg.ablation!r} (choose from {ABLATIONS})")
    cfg.pool_first = bool(raw.get("pool_first", False))

    if "dataset" in raw:
        cfg.dataset = DatasetSpec(**raw["dataset"])
    if "backbone" in raw:
        cfg.backbone = BackboneConfig(layers=_layers_from_toml(raw["backbone"]["layers"]))
    if "patching" in raw:
        cfg.patch_size = int(raw["patching"].get("k", 4))
    if "graph" in raw:
        g = raw["graph"]
        cfg.neighborhood = NeighborhoodSpec(mode=g.get("mode", "moore"),
                                            k=int(g.get("k", 8)))
        cfg.sigma_sq = g.get("sigma_sq", "auto")
        if cfg.sigma_sq != "auto":
            cfg.sigma_sq = float(cfg.sigma_sq)
    cfg.gat = dict(raw.get("gat", {}))
    cfg.transformer = dict(raw.get("transformer", {}))
    if "optim" in raw:
        o = dict(raw["optim"])
        if "betas" in o:
            o["betas"] = tuple(o["betas"])
        cfg.optim = OptimSpec(**o)

    if cfg.ablation == "no_backbone" and "optim" not in raw:
        cfg.optim.batch_size = 32  # raw-image graphs are far heavier per step
    return cfg
