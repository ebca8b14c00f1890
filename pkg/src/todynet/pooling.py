"""Temporal graph pooling.

Nodes are treated as input channels of a valid 2-D convolution whose kernel
spans one channel row and ``kernel`` time steps.  Contracting those weights
against a learnable vector ``V`` along the kernel axis gives the cluster
assignment ``M`` (``out_nodes x in_nodes``), which coarsens every slot's
adjacency as ``M A M^T``.
"""

from __future__ import annotations

import math

import numpy as np

from .autodiff import ops
from .autodiff.tensor import Parameter, Tensor
from .dygin import SlotFeatures
from .errors import ConfigurationError, DimensionError
from .temporal import slot_merge


def pooled_node_count(n_in, ratio):
    """``max(1, ceil(ratio * n_in))``."""
    if not (0 < ratio <= 1):
        raise ConfigurationError(f"pool ratio must lie in (0, 1], got {ratio}")
    if n_in < 1:
        raise ConfigurationError(f"node count must be >= 1, got {n_in}")
    # round first so e.g. 0.2 * 15 does not ceil to 4
    return max(1, math.ceil(round(ratio * n_in, 9)))


class TgpLayer:
    def __init__(self, in_nodes, out_nodes, kernel, rng, dtype=np.float64, name="tgp"):
        if not 1 <= out_nodes <= in_nodes:
            raise ConfigurationError(f"pooling must keep 1..{in_nodes} nodes, got {out_nodes}")
        bound = 1.0 / np.sqrt(in_nodes * kernel)
        self.weight = Parameter(rng.uniform(-bound, bound, (out_nodes, in_nodes, 1, kernel)),
                                f"{name}.weight", dtype=dtype)
        self.bias = Parameter(rng.uniform(-bound, bound, out_nodes), f"{name}.bias", dtype=dtype)
        vb = 1.0 / np.sqrt(kernel)
        self.v = Parameter(rng.uniform(-vb, vb, (1, kernel)), f"{name}.v", dtype=dtype)
        self.in_nodes = in_nodes
        self.out_nodes = out_nodes
        self.kernel = kernel

    def parameters(self):
        return [self.weight, self.bias, self.v]


def pool_features(x, layer: TgpLayer) -> Tensor:
    """Cluster nodes with the valid convolution; time shrinks by ``kernel - 1``.

    ``x`` is a ``batch x n x c x len`` sequence or :class:`SlotFeatures`
    (merged along time first).
    """
    if isinstance(x, SlotFeatures):
        x = slot_merge(x)
    if x.ndim != 4:
        raise DimensionError(f"expected batch x n x c x len, got {x.shape}")
    if x.shape[1] != layer.in_nodes:
        raise DimensionError(f"pooling expects {layer.in_nodes} nodes, got {x.shape[1]}")
    return ops.conv2d_valid(x, layer.weight, layer.bias)


def build_assignment(layer: TgpLayer) -> Tensor:
    """``M[j, i] = sum_q W[j, i, 0, q] * V[0, q]``."""
    n_out, n_in, _, k = layer.weight.shape
    w2 = ops.reshape(layer.weight, (n_out * n_in, k))
    return ops.reshape(ops.matmul(w2, ops.transpose(layer.v)), (n_out, n_in))


def pool_adjacency(adj: Tensor, assignment: Tensor) -> Tensor:
    """``M A_t M^T`` for every slot (no post-processing)."""
    if adj.ndim != 3 or adj.shape[1] != adj.shape[2]:
        raise DimensionError(f"adjacency must be S x n x n, got {adj.shape}")
    if assignment.ndim != 2 or assignment.shape[1] != adj.shape[1]:
        raise DimensionError(f"assignment {assignment.shape} does not match adjacency {adj.shape}")
    S = adj.shape[0]
    Ms = ops.stack([assignment] * S, axis=0)
    return ops.matmul(ops.matmul(Ms, adj), ops.transpose(Ms, (0, 2, 1)))
