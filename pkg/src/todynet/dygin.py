"""Dynamic graph transform and the dynamic graph isomorphism layer.

Per slot ``t`` the layer computes::

    MLP((A_t + (1 + eps) I) H_t + H_{t-1})

where ``A_t`` is the degree-normalised adjacency and the ``H_{t-1}`` term
(the inter-slot edge from the previous slot's copy of each node) is absent
for the first slot.  Slots are otherwise independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ops
from .autodiff.ops import BatchNormState
from .autodiff.tensor import Parameter, Tensor
from .data import SlotPartition
from .errors import DimensionError

BN_EPS = 1e-5


@dataclass
class SlotFeatures:
    """Node features split into time slots.

    ``values`` is ``batch x n x S x c x tau``; slots shorter than ``tau`` are
    right-padded with zeros and ``mask`` (``S x tau``) marks valid steps.
    """

    values: Tensor
    partition: SlotPartition
    mask: np.ndarray
    layer: int = 0

    def __post_init__(self):
        v = self.values
        if v.ndim != 5:
            raise DimensionError(f"slot features must be 5-D, got {v.shape}")
        if v.shape[2] != self.partition.S or self.mask.shape != (v.shape[2], v.shape[4]):
            raise DimensionError(f"slot features {v.shape} do not match mask {self.mask.shape}")

    @property
    def num_nodes(self):
        return self.values.shape[1]

    @property
    def num_slots(self):
        return self.values.shape[2]

    @property
    def channels(self):
        return self.values.shape[3]

    @property
    def uneven(self):
        return not bool(self.mask.all())

    def mask5(self):
        S, tau = self.mask.shape
        return self.mask.reshape(1, 1, S, 1, tau)

    def with_values(self, values, layer=None):
        return SlotFeatures(values, self.partition, self.mask, self.layer if layer is None else layer)


def slot_mask(partition: SlotPartition) -> np.ndarray:
    tau = partition.max_len
    return np.arange(tau)[None, :] < np.asarray(partition.lengths)[:, None]


def dgt_shift(values: Tensor) -> Tensor:
    """Add each slot's predecessor (along axis 2); the first slot passes through."""
    if values.shape[2] == 1:
        return values
    return ops.add(values, ops.slot_shift(values, axis=2))


class GinLayer:
    """``eps`` (one scalar shared across slots) plus the shared MLP block.

    The MLP is a bias-free linear map over channels, batch normalisation over
    every other axis, then a rectifier.  ``identity=True`` drops the MLP, which
    is handy for checking the aggregation alone.
    """

    def __init__(self, c_in, c_out, rng, dtype=np.float64, identity=False, name="gin"):
        self.eps = Parameter(np.zeros(1), f"{name}.eps", dtype=dtype)
        self.identity = identity
        if identity:
            if c_in != c_out:
                raise DimensionError("an identity MLP needs c_in == c_out")
            self.weight = self.gamma = self.beta = None
            self.bn = None
        else:
            bound = 1.0 / np.sqrt(c_in)
            self.weight = Parameter(rng.uniform(-bound, bound, (c_out, c_in)), f"{name}.weight", dtype=dtype)
            self.gamma = Parameter(np.ones(c_out), f"{name}.bn_gamma", dtype=dtype)
            self.beta = Parameter(np.zeros(c_out), f"{name}.bn_beta", dtype=dtype)
            self.bn = BatchNormState(c_out, dtype=dtype)
        self.c_out = c_out

    def parameters(self):
        if self.identity:
            return [self.eps]
        return [self.eps, self.weight, self.gamma, self.beta]

    def mlp(self, z: Tensor, mask5, training):
        if self.identity:
            return z
        y = ops.linear_axis(z, self.weight, axis=3)
        y = ops.batch_norm(y, self.gamma, self.beta, axis=3, state=self.bn, training=training,
                           mask=mask5, eps=BN_EPS)
        return ops.relu(y)


def _check(feats: SlotFeatures, adj: Tensor):
    if adj.ndim != 3 or adj.shape[1] != adj.shape[2]:
        raise DimensionError(f"adjacency must be S x n x n, got {adj.shape}")
    if adj.shape[1] != feats.num_nodes:
        raise DimensionError(f"adjacency has {adj.shape[1]} nodes, features have {feats.num_nodes}")
    if adj.shape[0] != feats.num_slots:
        raise DimensionError(f"adjacency has {adj.shape[0]} slots, features have {feats.num_slots}")


def dygin_matrix(feats: SlotFeatures, adj_norm: Tensor, layer: GinLayer, training=True, dgt=True) -> SlotFeatures:
    """Vectorised layer over batch, channels and within-slot time."""
    _check(feats, adj_norm)
    H = feats.values
    base = dgt_shift(H) if dgt else H
    z = ops.add(ops.add(ops.node_mix(adj_norm, H), ops.scale(H, layer.eps)), base)
    mask5 = feats.mask5()
    if feats.uneven:
        z = ops.mask_mul(z, mask5)
    out = layer.mlp(z, mask5 if feats.uneven else None, training)
    return feats.with_values(out, feats.layer + 1)


def dygin_node_reference(feats: SlotFeatures, adj_norm, layer: GinLayer, training=True, dgt=True) -> np.ndarray:
    """Node-by-node evaluation in plain numpy; an oracle for :func:`dygin_matrix`.

    Running statistics are read but never updated.
    """
    A = adj_norm.data if isinstance(adj_norm, Tensor) else np.asarray(adj_norm)
    H = feats.values.data
    B, n, S, c, tau = H.shape
    if A.shape != (S, n, n):
        raise DimensionError(f"adjacency {A.shape} does not match features {H.shape}")
    eps = float(layer.eps.data.reshape(-1)[0])
    z = np.zeros_like(H)
    for t in range(S):
        for v in range(n):
            acc = (1.0 + eps) * H[:, v, t]
            if dgt and t >= 1:
                acc = acc + H[:, v, t - 1]
            for u in range(n):
                w = A[t, v, u]
                if w != 0.0:
                    acc = acc + w * H[:, u, t]
            z[:, v, t] = acc
    valid = feats.mask.astype(H.dtype)  # S x tau
    z = z * valid[None, None, :, None, :]
    if layer.identity:
        return z

    y = np.einsum("oc,bnsct->bnsot", layer.weight.data, z)
    out = np.zeros_like(y)
    count = B * n * valid.sum()
    for o in range(layer.c_out):
        ch = y[:, :, :, o, :]
        if training:
            w = np.broadcast_to(valid[None, None], ch.shape)
            mu = (ch * w).sum() / count
            var = (((ch - mu) * w) ** 2).sum() / count
        else:
            mu, var = layer.bn.mean[o], layer.bn.var[o]
        normed = (ch - mu) / np.sqrt(var + BN_EPS) * layer.gamma.data[o] + layer.beta.data[o]
        out[:, :, :, o, :] = np.maximum(normed, 0.0) * valid[None, None]
    return out
