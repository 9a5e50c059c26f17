"""Convolutional feature extraction: a small configurable stack standing in
for a heavyweight pretrained backbone, plus a loader for precomputed maps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels, sgt
from .tensor import Parameter, Tensor, _make, relu

_ACTIVATIONS = {"relu", "none"}


class ConfigError(ValueError):
    """Invalid configuration (shapes, strides, divisibility)."""


@dataclass
class Image:
    data: Tensor  # [C, H, W], values in [0, 1]
    label: int | None = None


@dataclass
class FeatureMap:
    data: Tensor  # [D, H', W']
    stride: int = 1


@dataclass
class BackboneConfig:
    """Layer specs: (out_channels, kernel_size, stride, activation)."""

    layers: list[tuple[int, int, int, str]] = field(
        default_factory=lambda: [(16, 3, 2, "relu"), (32, 3, 2, "relu"), (64, 3, 1, "relu")]
    )

    def __post_init__(self):
        for spec in self.layers:
            if spec[3] not in _ACTIVATIONS:
                raise ConfigError(f"unknown activation {spec[3]!r}")

    @property
    def total_stride(self) -> int:
        s = 1
        for _, _, stride, _ in self.layers:
            s *= stride
        return s

    @property
    def out_channels(self) -> int:
        return self.layers[-1][0]


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2D cross-correlation over a [Cin,H,W] input, differentiable."""
    cout, cin, k, _ = weight.shape
    _, h, w = x.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ConfigError(
            f"conv2d output extent {ho}x{wo} <= 0 for input {x.shape}, "
            f"kernel {k}, stride {stride}, padding {padding}")
    if x.shape[0] != cin:
        raise ConfigError(f"conv2d channel mismatch: input {x.shape[0]}, kernel {cin}")

    from .tensor import _flops_add
    _flops_add(2 * cout * cin * k * k * ho * wo)
    out = kernels.conv2d_forward(x.data, weight.data, stride, padding)

    def bwd(g):
        gx, gw = kernels.conv2d_backward(x.data, weight.data, stride, padding, g)
        if x.requires_grad:
            x._accumulate(gx)
        if weight.requires_grad:
            weight._accumulate(gw)

    return _make(out, (x, weight), bwd)


class Backbone:
    """Configurable conv stack producing FeatureMaps.

    Kernel-3 layers use padding 1 so spatial extents shrink only by stride.
    """

    def __init__(self, cfg: BackboneConfig, in_channels: int, rng: np.random.Generator,
                 prefix: str = "backbone"):
        self.cfg = cfg
        self.params: list[Parameter] = []
        self.layers = []
        cin = in_channels
        for i, (cout, k, stride, act) in enumerate(cfg.layers):
            w = Parameter(rng.normal(0.0, 1.0 / np.sqrt(cin * k * k), (cout, cin, k, k)),
                          f"{prefix}.conv{i}.weight")
            b = Parameter(np.zeros(cout), f"{prefix}.conv{i}.bias")
            self.params += [w, b]
            self.layers.append((w, b, stride, k // 2, act))
            cin = cout

    def __call__(self, x: Tensor) -> Tensor:
        for w, b, stride, pad, act in self.layers:
            x = conv2d(x, w, stride=stride, padding=pad) + b.reshape(-1, 1, 1)
            if act == "relu":
                x = relu(x)
        return x


def extract_features(img: Image, backbone: Backbone) -> FeatureMap:
    s = backbone.cfg.total_stride
    _, h, w = img.data.shape
    if h % s or w % s:
        raise ConfigError(f"image extents {h}x{w} not divisible by total stride {s}")
    return FeatureMap(data=backbone(img.data), stride=s)


def load_feature_map(path, stride: int = 1) -> FeatureMap:
    """Read a precomputed rank-3 feature map from an SGT tensor file."""
    arr = sgt.read_sgt(path)
    if arr.ndim != 3:
        raise sgt.SgtFormatError(f"feature map must be rank 3, got rank {arr.ndim}")
    return FeatureMap(data=Tensor(arr), stride=stride)


def save_feature_map(path, fm: FeatureMap) -> None:
    sgt.write_sgt(path, fm.data.data)
