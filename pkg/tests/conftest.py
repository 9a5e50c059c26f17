import numpy as np
import pytest

from sagvit import (BackboneConfig, GatStackConfig, ModelConfig,
                    NeighborhoodSpec, SagVit, TransformerConfig)
from sagvit.backbone import Image
from sagvit.patching import PatchGrid, PatchMatrix
from sagvit.tensor import Tensor


def tiny_model_config(ablation="full", mode="moore", knn_k=3, image_size=16,
                      patch_size=2, pos_encoding="sinusoidal"):
    """16x16 single-channel pipeline with all widths <= 8."""
    cfg = ModelConfig(
        image_size=image_size, in_channels=1, num_classes=2,
        patch_size=4 if ablation == "no_backbone" else patch_size,
        ablation=ablation,
        backbone=BackboneConfig(layers=[(4, 3, 2, "relu"), (6, 3, 2, "relu")]),
        neighborhood=NeighborhoodSpec(mode=mode, k=knn_k),
        transformer=TransformerConfig(d_model=8, n_heads=2, num_layers=2, d_ff=16,
                                      pos_encoding=pos_encoding),
    )
    if ablation != "no_gat":
        cfg.gat = GatStackConfig(d_in=cfg.node_dim, d_hidden=8, d_out=8, heads=2)
    return cfg


def tiny_model(ablation="full", mode="moore", seed=3, **kw) -> SagVit:
    return SagVit(tiny_model_config(ablation=ablation, mode=mode, **kw), seed=seed)


def random_image(rng, channels=1, size=16, label=1) -> Image:
    return Image(Tensor(rng.uniform(0.0, 1.0, (channels, size, size))), label=label)


def patch_matrix(rng, rows, cols, dim, k=1) -> PatchMatrix:
    grid = PatchGrid(rows=rows, cols=cols, patch_size=k, feature_dim=dim)
    return PatchMatrix(features=Tensor(rng.normal(size=(rows * cols, dim))), grid=grid)


@pytest.fixture
def rng():
    return np.random.default_rng(42)
