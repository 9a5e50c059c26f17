"""Positional encoding, pre-norm Transformer encoder blocks, pooling and the
softmax classification head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import ConfigError
from .tensor import (Parameter, Tensor, concat, layer_norm, matmul, relu,
                     softmax, take_cols, tmean)


@dataclass
class TransformerConfig:
    d_model: int = 64
    n_heads: int = 4
    num_layers: int = 2
    d_ff: int = 128
    pos_encoding: str = "sinusoidal"  # "sinusoidal" | "learned" | "none"

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.pos_encoding not in ("sinusoidal", "learned", "none"):
            raise ConfigError(f"unknown pos_encoding {self.pos_encoding!r}")

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads


def positional_encoding(num_tokens: int, d_model: int, mode: str = "sinusoidal") -> np.ndarray:
    """Fixed positional table over raster token index (learned mode is handled
    by the model, which owns the Parameter)."""
    if mode == "none":
        return np.zeros((num_tokens, d_model))
    if mode != "sinusoidal":
        raise ConfigError(f"positional_encoding mode {mode!r} is not a fixed table")
    if d_model % 2:
        raise ConfigError(f"sinusoidal encoding needs even d_model, got {d_model}")
    pos = np.arange(num_tokens)[:, None]
    i = np.arange(d_model // 2)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / d_model)
    p = np.zeros((num_tokens, d_model))
    p[:, 0::2] = np.sin(angle)
    p[:, 1::2] = np.cos(angle)
    return p


def _linear(rng: np.random.Generator, d_in: int, d_out: int, prefix: str):
    w = Parameter(rng.normal(0.0, 1.0 / np.sqrt(d_in), (d_out, d_in)), f"{prefix}.weight")
    b = Parameter(np.zeros(d_out), f"{prefix}.bias")
    return w, b


def _apply_linear(x: Tensor, w: Parameter, b: Parameter) -> Tensor:
    return matmul(x, w.T) + b


class SelfAttention:
    """Multi-head scaled dot-product attention with output projection."""

    def __init__(self, cfg: TransformerConfig, rng: np.random.Generator, prefix: str):
        d = cfg.d_model
        self.cfg = cfg
        self.wq, self.bq = _linear(rng, d, d, f"{prefix}.wq")
        self.wk, self.bk = _linear(rng, d, d, f"{prefix}.wk")
        self.wv, self.bv = _linear(rng, d, d, f"{prefix}.wv")
        self.wo, self.bo = _linear(rng, d, d, f"{prefix}.wo")

    def parameters(self):
        return [self.wq, self.bq, self.wk, self.bk, self.wv, self.bv, self.wo, self.bo]

    def __call__(self, x: Tensor, return_weights: bool = False):
        cfg = self.cfg
        q = _apply_linear(x, self.wq, self.bq)
        k = _apply_linear(x, self.wk, self.bk)
        v = _apply_linear(x, self.wv, self.bv)
        heads = []
        weights = []
        for h in range(cfg.n_heads):
            sl = np.arange(h * cfg.d_k, (h + 1) * cfg.d_k)
            qh, kh, vh = take_cols(q, sl), take_cols(k, sl), take_cols(v, sl)
            scores = matmul(qh, kh.T) * (1.0 / np.sqrt(cfg.d_k))
            attn = softmax(scores, axis=-1)
            heads.append(matmul(attn, vh))
            if return_weights:
                weights.append(attn.data.copy())
        out = heads[0] if len(heads) == 1 else concat(heads, axis=1)
        out = _apply_linear(out, self.wo, self.bo)
        return (out, weights) if return_weights else out


class EncoderBlock:
    """Pre-norm residual block: x + Attn(LN(x)), then y + FFN(LN(y))."""

    def __init__(self, cfg: TransformerConfig, rng: np.random.Generator, prefix: str):
        d = cfg.d_model
        self.attn = SelfAttention(cfg, rng, f"{prefix}.attn")
        self.ln1_g = Parameter(np.ones(d), f"{prefix}.ln1.gain")
        self.ln1_b = Parameter(np.zeros(d), f"{prefix}.ln1.bias")
        self.ln2_g = Parameter(np.ones(d), f"{prefix}.ln2.gain")
        self.ln2_b = Parameter(np.zeros(d), f"{prefix}.ln2.bias")
        self.w1, self.b1 = _linear(rng, d, cfg.d_ff, f"{prefix}.ff1")
        self.w2, self.b2 = _linear(rng, cfg.d_ff, d, f"{prefix}.ff2")

    def parameters(self):
        return [*self.attn.parameters(), self.ln1_g, self.ln1_b, self.ln2_g, self.ln2_b,
                self.w1, self.b1, self.w2, self.b2]

    def __call__(self, x: Tensor) -> Tensor:
        y = x + self.attn(layer_norm(x, self.ln1_g, self.ln1_b))
        z = _apply_linear(relu(_apply_linear(layer_norm(y, self.ln2_g, self.ln2_b),
                                             self.w1, self.b1)), self.w2, self.b2)
        return y + z


class HeadParams:
    """Final classifier: probs = softmax(W_out z + b_out)."""

    def __init__(self, d_model: int, num_classes: int, rng: np.random.Generator,
                 prefix: str = "head"):
        if num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {num_classes}")
        self.num_classes = num_classes
        self.w_out = Parameter(rng.normal(0.0, 1.0 / np.sqrt(d_model), (num_classes, d_model)),
                               f"{prefix}.w_out")
        self.b_out = Parameter(np.zeros(num_classes), f"{prefix}.b_out")

    def parameters(self):
        return [self.w_out, self.b_out]


def global_mean_pool(x: Tensor) -> Tensor:
    """Mean over the token axis: [n, d] -> [1, d]."""
    if x.shape[0] == 0:
        raise ValueError("global_mean_pool of zero tokens")
    return tmean(x, axis=0, keepdims=True)


def logits(z: Tensor, head: HeadParams) -> Tensor:
    return _apply_linear(z, head.w_out, head.b_out)


def classify(z: Tensor, head: HeadParams) -> Tensor:
    return softmax(logits(z, head), axis=-1)


def token_correlation(x: np.ndarray) -> np.ndarray:
    """Pearson correlation between token rows; zero-variance rows correlate 0
    off-diagonal, 1 on the diagonal."""
    x = np.asarray(x, dtype=np.float64)
    xc = x - x.mean(axis=1, keepdims=True)
    std = np.sqrt((xc * xc).mean(axis=1))
    n = x.shape[0]
    corr = np.eye(n)
    nz = std > 0
    if nz.any():
        norm = xc[nz] / std[nz][:, None]
        sub = (norm @ norm.T) / x.shape[1]
        idx = np.where(nz)[0]
        corr[np.ix_(idx, idx)] = sub
        corr[idx, idx] = 1.0
    return corr
