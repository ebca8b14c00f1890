"""Temporal convolution stages and slot splitting."""

from __future__ import annotations

import numpy as np

from .autodiff import ops
from .autodiff.tensor import Parameter, Tensor
from .data import SlotPartition
from .dygin import SlotFeatures, slot_mask
from .errors import ConfigurationError, DimensionError


class TcStage:
    """One padded 1-D convolution + rectifier, shared by every node."""

    def __init__(self, c_in, c_out, kernel, rng, dtype=np.float64, name="tc"):
        if kernel % 2 == 0:
            raise ConfigurationError(f"temporal kernel must be odd, got {kernel}")
        bound = 1.0 / np.sqrt(c_in * kernel)
        self.weight = Parameter(rng.uniform(-bound, bound, (c_out, c_in, kernel)), f"{name}.weight", dtype=dtype)
        self.bias = Parameter(rng.uniform(-bound, bound, c_out), f"{name}.bias", dtype=dtype)
        self.kernel = kernel
        self.c_in = c_in
        self.c_out = c_out

    def parameters(self):
        return [self.weight, self.bias]


def tc_forward(x: Tensor, stage: TcStage) -> Tensor:
    """``batch x n x c_in x len`` -> ``batch x n x c_out x len``."""
    if x.ndim != 4:
        raise DimensionError(f"temporal input must be batch x n x c x len, got {x.shape}")
    B, n, c, L = x.shape
    if c != stage.c_in:
        raise DimensionError(f"stage expects {stage.c_in} input channels, got {c}")
    y = ops.conv1d_same(ops.reshape(x, (B * n, c, L)), stage.weight, stage.bias)
    return ops.reshape(ops.relu(y), (B, n, stage.c_out, L))


def slot_split(x: Tensor, partition: SlotPartition) -> SlotFeatures:
    """Carve the time axis of ``batch x n x c x len`` into slots.

    Shorter slots are zero-padded on the right up to the longest one.
    """
    if x.ndim != 4:
        raise DimensionError(f"expected batch x n x c x len, got {x.shape}")
    if x.shape[3] != partition.length:
        raise DimensionError(f"partition covers {partition.length} steps, series has {x.shape[3]}")
    mask = slot_mask(partition)
    starts = np.asarray(partition.boundaries[:-1])
    index = np.where(mask, starts[:, None] + np.arange(mask.shape[1])[None, :], 0)
    gathered = ops.take_last(x, index, mask)  # B, n, c, S, tau
    return SlotFeatures(ops.transpose(gathered, (0, 1, 3, 2, 4)), partition, mask)


def slot_merge(feats: SlotFeatures) -> Tensor:
    """Inverse of :func:`slot_split`: drop pads, concatenate slots along time."""
    v = ops.transpose(feats.values, (0, 1, 3, 2, 4))  # B, n, c, S, tau
    B, n, c, S, tau = v.shape
    flat = ops.reshape(v, (B, n, c, S * tau))
    if not feats.uneven:
        return flat
    index = np.flatnonzero(feats.mask.reshape(-1))
    return ops.take_last(flat, index)
