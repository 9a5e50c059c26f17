"""Scale-aware graph-attention vision transformer pipeline.

Feature extraction (small conv stack), k x k feature-map patching, patch
graphs with Gaussian similarity weights, multi-head graph attention, a
pre-norm Transformer encoder, and a seeded training harness -- all on a
from-scratch float64 autodiff core so every gradient is checkable against
finite differences.
"""

from .backbone import Backbone, BackboneConfig, FeatureMap, Image, conv2d
from .gat import GatStack, GatStackConfig, gat_attention, graph_conv
from .graph import (NeighborhoodSpec, PatchGraph, adjacency_dense, build_graph,
                    knn_edges, moore_edges, weight_edges)
from .model import ModelConfig, SagVit
from .patching import PatchGrid, PatchMatrix, fold, unfold
from .tensor import Parameter, Tape, Tensor, backward, grad_check, no_grad
from .training import (OptimSpec, TrainState, adam_step, clip_gradients,
                       count_params, cross_entropy, estimate_flops, lr_at,
                       loss_landscape_scan, macro_f1, train_loop)
from .transformer import (EncoderBlock, HeadParams, SelfAttention,
                          TransformerConfig, classify, global_mean_pool,
                          positional_encoding, token_correlation)

__version__ = "0.1.0"
