"""Non-overlapping k x k patch extraction from feature maps (and its inverse).

Each patch is vectorized in (row, col, channel) lexicographic order; unfold
is a pure reindexing, so fold reverses it exactly and gradients pass through
as a permutation.
"""

from __future__ import annotations

from dataclasses import dataclass

from .backbone import ConfigError, FeatureMap
from .tensor import Tensor, _make


@dataclass(frozen=True)
class PatchGrid:
    rows: int
    cols: int
    patch_size: int
    feature_dim: int  # k*k*D

    @property
    def num_patches(self) -> int:
        return self.rows * self.cols


@dataclass
class PatchMatrix:
    """Node features X_V: one row per patch, raster order r = i*cols + j."""

    features: Tensor  # [rows*cols, k*k*D]
    grid: PatchGrid


def _patch_view(data, k: int):
    # [D,H,W] -> [rows, cols, k, k, D] -> [rows*cols, k*k*D]
    d, h, w = data.shape
    rows, cols = h // k, w // k
    v = data.reshape(d, rows, k, cols, k)
    v = v.transpose(1, 3, 2, 4, 0)  # rows, cols, kr, kc, D
    return v.reshape(rows * cols, k * k * d)


def unfold(fm: FeatureMap, k: int) -> PatchMatrix:
    d, h, w = fm.data.shape
    if k < 1 or h % k or w % k:
        raise ConfigError(f"patch size {k} must divide feature map extents {h}x{w}")
    grid = PatchGrid(rows=h // k, cols=w // k, patch_size=k, feature_dim=k * k * d)
    x = fm.data

    def bwd(g):
        if x.requires_grad:
            rows, cols = grid.rows, grid.cols
            gv = g.reshape(rows, cols, k, k, d).transpose(4, 0, 2, 1, 3)
            x._accumulate(gv.reshape(d, h, w))

    out = _make(_patch_view(x.data, k), (x,), bwd)
    return PatchMatrix(features=out, grid=grid)


def fold(pm: PatchMatrix, stride: int = 1) -> FeatureMap:
    grid = pm.grid
    k = grid.patch_size
    d = grid.feature_dim // (k * k)
    h, w = grid.rows * k, grid.cols * k
    x = pm.features

    def bwd(g):
        if x.requires_grad:
            x._accumulate(_patch_view(g, k))

    gv = x.data.reshape(grid.rows, grid.cols, k, k, d).transpose(4, 0, 2, 1, 3)
    out = _make(gv.reshape(d, h, w).copy(), (x,), bwd)
    return FeatureMap(data=out, stride=stride)
