"""Learnable per-slot adjacency matrices.

A dynamic adjacency is a Tensor of shape ``S x n x n``: one weighted graph
per time slot over a shared node set.  Row ``i`` holds the outgoing weights
of node ``i``; the aggregation in :mod:`todynet.dygin` reads ``A[t, v, u]``
as the weight node ``v`` gives to neighbour ``u``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .autodiff import ops
from .autodiff.tensor import Parameter, Tensor
from .errors import ConfigurationError, ContractError, DimensionError


@dataclass
class NodeEmbeddingPair:
    """Source/target node embeddings, one length-``n`` row per slot."""

    source: Parameter  # S x n
    target: Parameter  # S x n

    def __post_init__(self):
        if self.source.shape != self.target.shape or self.source.ndim != 2:
            raise DimensionError(f"embedding shapes differ: {self.source.shape} vs {self.target.shape}")

    @classmethod
    def init(cls, num_slots, num_nodes, rng, dtype=np.float64):
        src = rng.uniform(0.0, 1.0, size=(num_slots, num_nodes))
        dst = rng.uniform(0.0, 1.0, size=(num_slots, num_nodes))
        return cls(Parameter(src, "graph.source", dtype=dtype), Parameter(dst, "graph.target", dtype=dtype))

    @property
    def num_slots(self):
        return self.source.shape[0]

    @property
    def num_nodes(self):
        return self.source.shape[1]

    def parameters(self):
        return [self.source, self.target]


def construct_adjacency(emb: NodeEmbeddingPair) -> Tensor:
    """Dense ``A_t = relu(source_t outer target_t)`` for every slot."""
    S, n = emb.source.shape
    col = ops.reshape(emb.source, (S, n, 1))
    row = ops.reshape(emb.target, (S, 1, n))
    return ops.relu(ops.matmul(col, row))


def topk_mask(values: np.ndarray, k: int) -> np.ndarray:
    """Boolean mask keeping the ``k`` largest off-diagonal entries per row.

    Ties go to the smaller column index; the diagonal is never kept.
    """
    n = values.shape[-1]
    if not 1 <= k <= n - 1:
        raise ConfigurationError(f"top-k needs 1 <= k <= n-1 (n={n}), got k={k}")
    v = np.array(values, dtype=np.float64, copy=True)
    eye = np.eye(n, dtype=bool)
    v[..., eye] = -np.inf
    order = np.argsort(-v, axis=-1, kind="stable")[..., :k]
    mask = np.zeros(v.shape, dtype=bool)
    np.put_along_axis(mask, order, True, axis=-1)
    mask[..., eye] = False
    return mask


def topk_sparsify(adj: Tensor, k: int) -> Tensor:
    """Zero the diagonal and all but the top ``k`` entries of each row."""
    if adj.ndim < 2 or adj.shape[-1] != adj.shape[-2]:
        raise DimensionError(f"adjacency must be square, got {adj.shape}")
    return ops.mask_mul(adj, topk_mask(adj.data, k))


def normalize_adjacency(adj: Tensor) -> Tensor:
    """Symmetric degree normalisation ``D^-1/2 A D^-1/2`` (row-sum degrees).

    Isolated nodes keep zero rows and columns.
    """
    if not isinstance(adj, Tensor):
        adj = Tensor(np.asarray(adj, dtype=np.float64))
    if np.any(adj.data < 0):
        raise ContractError("normalize_adjacency requires nonnegative weights")
    return ops.sym_normalize(adj)


def sanitize_adjacency(adj: Tensor) -> Tensor:
    """Clamp negatives and drop self-loops (used after pooling)."""
    n = adj.shape[-1]
    off = np.broadcast_to(~np.eye(n, dtype=bool), adj.shape)
    return ops.mask_mul(ops.relu(adj), off)


class GraphLearner:
    """Holds the embeddings and produces the sparsified dynamic adjacency."""

    def __init__(self, num_slots, num_nodes, k, rng, dtype=np.float64):
        self.embeddings = NodeEmbeddingPair.init(num_slots, num_nodes, rng, dtype)
        self.k = k

    def parameters(self):
        return self.embeddings.parameters()

    @property
    def effective_k(self):
        return min(self.k, self.embeddings.num_nodes - 1)

    def __call__(self) -> Tensor:
        dense = construct_adjacency(self.embeddings)
        if self.embeddings.num_nodes < 2:
            return dense * 0.0
        return topk_sparsify(dense, self.effective_k)


def format_edge_list(adj, slots=None) -> str:
    """Tab-separated ``slot, src, dst, weight`` lines for nonzero entries.

    ``adj`` is ``S x n x n``; slots are numbered from 1, nodes from 0.
    ``slots`` restricts the output to the given 1-based slot numbers.
    """
    A = adj.data if isinstance(adj, Tensor) else np.asarray(adj)
    if A.ndim == 2:
        A = A[None]
    buf = io.StringIO()
    buf.write("# slot\tsrc\tdst\tweight\n")
    wanted = range(1, A.shape[0] + 1) if slots is None else slots
    for s in wanted:
        rows, cols = np.nonzero(A[s - 1])
        for i, j in zip(rows, cols):
            buf.write(f"{s}\t{i}\t{j}\t{float(A[s - 1, i, j])!r}\n")
    return buf.getvalue()


def parse_edge_list(text, num_slots, num_nodes):
    A = np.zeros((num_slots, num_nodes, num_nodes))
    for line in text.splitlines():
        if not line or line.startswith("#"):
            continue
        s, i, j, w = line.split("\t")
        A[int(s) - 1, int(i), int(j)] = float(w)
    return A
