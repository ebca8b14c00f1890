"""The full network: temporal convolution, dynamic GIN and pooling blocks."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .autodiff import ops
from .autodiff.tensor import Parameter, Tensor, no_grad
from .data import partition_slots
from .dygin import GinLayer, dygin_matrix
from .errors import ConfigurationError, DimensionError
from .graph import GraphLearner, normalize_adjacency, sanitize_adjacency
from .pooling import TgpLayer, build_assignment, pool_adjacency, pool_features, pooled_node_count
from .temporal import TcStage, slot_merge, slot_split, tc_forward

DTYPES = {"f32": np.float32, "f64": np.float64}


@dataclass
class ModelConfig:
    num_graphs: int = 4
    topk: int = 3
    pool_ratio: float = 0.2
    kernels: tuple = (11, 3, 3)
    channels: tuple = (64, 128, 256)
    batch_size: int = 16
    lr: float = 1e-4
    epochs: int = 2000
    seed: int = 0
    precision: str = "f32"
    no_graph: bool = False
    no_dygraph: bool = False
    no_gpool: bool = False
    normalize: bool = True
    dgt: bool = True

    def __post_init__(self):
        self.kernels = tuple(int(k) for k in self.kernels)
        self.channels = tuple(int(c) for c in self.channels)
        self.validate()

    def validate(self):
        if len(self.kernels) != len(self.channels) or not self.kernels:
            raise ConfigurationError("kernels and channels must have the same, nonzero length")
        if any(k < 1 or k % 2 == 0 for k in self.kernels):
            raise ConfigurationError(f"temporal kernels must be odd and positive, got {self.kernels}")
        if any(c < 1 for c in self.channels):
            raise ConfigurationError(f"channel counts must be positive, got {self.channels}")
        if self.num_graphs < 1:
            raise ConfigurationError(f"num_graphs must be >= 1, got {self.num_graphs}")
        if self.topk < 1:
            raise ConfigurationError(f"topk must be >= 1, got {self.topk}")
        if not (0 < self.pool_ratio <= 1):
            raise ConfigurationError(f"pool ratio must lie in (0, 1], got {self.pool_ratio}")
        if self.batch_size < 1 or self.epochs < 0 or self.lr <= 0:
            raise ConfigurationError("batch size, epochs and lr must be positive")
        if self.precision not in DTYPES:
            raise ConfigurationError(f"precision must be one of {sorted(DTYPES)}, got {self.precision!r}")

    @property
    def num_slots(self):
        return 1 if self.no_dygraph else self.num_graphs

    @property
    def num_layers(self):
        return len(self.kernels)

    @property
    def dtype(self):
        return DTYPES[self.precision]

    def to_dict(self):
        d = asdict(self)
        d["kernels"] = list(self.kernels)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def architecture(self):
        """Fields that determine parameter shapes and forward semantics."""
        d = self.to_dict()
        for k in ("batch_size", "lr", "epochs", "seed"):
            d.pop(k)
        return d


@dataclass
class Block:
    tc: TcStage
    gin: GinLayer | None = None
    tgp: TgpLayer | None = None
    nodes: int = 0
    length_in: int = 0
    length_out: int = 0


class TodyNet:
    """Three (by default) blocks of TC -> dynamic GIN -> pooling, with a
    mean-pooled readout of every block concatenated into a linear head."""

    def __init__(self, cfg: ModelConfig, num_nodes, length, num_classes):
        cfg.validate()
        if num_classes < 2:
            raise ConfigurationError(f"need at least 2 classes, got {num_classes}")
        self.cfg = cfg
        self.num_nodes = num_nodes
        self.length = length
        self.num_classes = num_classes
        dtype = cfg.dtype
        rng = np.random.default_rng(cfg.seed)
        S = cfg.num_slots
        # Under no_graph the graph, GIN and pooling parameters are still drawn
        # (so shared parts initialise identically across ablations) but the
        # forward pass never reads them.
        self.graph = GraphLearner(S, num_nodes, cfg.topk, rng, dtype)

        self.blocks = []
        c_in, n, L = 1, num_nodes, length  # shapes seen by the parameters
        for b, (k, c) in enumerate(zip(cfg.kernels, cfg.channels)):
            block = Block(TcStage(c_in, c, k, rng, dtype, name=f"block{b}.tc"))
            feasible = L >= S and (cfg.no_gpool or L >= k)
            if not feasible and not cfg.no_graph:
                if L < S:
                    raise ConfigurationError(f"block {b}: length {L} cannot hold {S} slots")
                raise ConfigurationError(f"block {b}: length {L} shorter than pooling kernel {k}")
            if feasible:
                block.gin = GinLayer(c, c, rng, dtype, name=f"block{b}.gin")
                if not cfg.no_gpool:
                    n_out = pooled_node_count(n, cfg.pool_ratio)
                    block.tgp = TgpLayer(n, n_out, k, rng, dtype, name=f"block{b}.tgp")
            block.nodes, block.length_in = (num_nodes, length) if cfg.no_graph else (n, L)
            if block.tgp is not None:
                n, L = block.tgp.out_nodes, L - k + 1
            block.length_out = length if cfg.no_graph else L
            self.blocks.append(block)
            c_in = c

        feat = sum(cfg.channels)
        bound = 1.0 / np.sqrt(feat)
        self.fc_weight = Parameter(rng.uniform(-bound, bound, (feat, num_classes)), "head.weight", dtype=dtype)
        self.fc_bias = Parameter(rng.uniform(-bound, bound, num_classes), "head.bias", dtype=dtype)

    # ------------------------------------------------------------ parameters

    def parameters(self):
        params = list(self.graph.parameters())
        for b in self.blocks:
            params += b.tc.parameters()
            if b.gin is not None:
                params += b.gin.parameters()
            if b.tgp is not None:
                params += b.tgp.parameters()
        return params + [self.fc_weight, self.fc_bias]

    def named_parameters(self):
        return {p.name: p for p in self.parameters()}

    def buffers(self):
        out = {}
        for i, b in enumerate(self.blocks):
            if b.gin is not None and b.gin.bn is not None:
                out[f"block{i}.gin.bn_mean"] = b.gin.bn
        return out

    def state_dict(self):
        state = {name: p.data.copy() for name, p in self.named_parameters().items()}
        for name, bn in self.buffers().items():
            state[name] = bn.mean.copy()
            state[name.replace("bn_mean", "bn_var")] = bn.var.copy()
        return state

    def load_state_dict(self, state):
        for name, p in self.named_parameters().items():
            if name not in state:
                raise KeyError(f"missing parameter {name}")
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise DimensionError(f"{name}: stored shape {value.shape} != model shape {p.shape}")
            p.data = value.astype(p.dtype).copy()
        for name, bn in self.buffers().items():
            bn.mean = np.asarray(state[name]).copy()
            bn.var = np.asarray(state[name.replace("bn_mean", "bn_var")]).copy()

    def parameter_groups(self):
        """Parameters grouped by role (graph, eps, mlp, tc, tgp, head)."""
        groups = {}
        for p in self.parameters():
            if p.name.startswith("graph."):
                key = "graph"
            elif p.name.endswith(".eps"):
                key = "eps"
            elif ".gin." in p.name:
                key = "mlp"
            elif ".tc." in p.name:
                key = "tc"
            elif ".tgp." in p.name:
                key = "tgp"
            else:
                key = "head"
            groups.setdefault(key, []).append(p)
        return groups

    # ------------------------------------------------------------ forward

    def adjacencies(self):
        """Sanitised (unnormalised) adjacency used by each block, as Tensors."""
        if self.cfg.no_graph:
            return []
        adj = self.graph()
        out = []
        for b in self.blocks:
            out.append(adj)
            if b.tgp is not None:
                adj = sanitize_adjacency(pool_adjacency(adj, build_assignment(b.tgp)))
        return out

    def normalized_adjacency(self, layer):
        """Normalised ``S x n x n`` adjacency of a 1-based layer, as numpy."""
        if self.cfg.no_graph:
            raise ConfigurationError("model was built without graphs")
        if not 1 <= layer <= len(self.blocks):
            raise ConfigurationError(f"layer must be in 1..{len(self.blocks)}, got {layer}")
        with no_grad():
            return normalize_adjacency(self.adjacencies()[layer - 1]).data.copy()

    def forward(self, x, training=True) -> Tensor:
        X = x.data if isinstance(x, Tensor) else np.asarray(x)
        if X.ndim != 3 or X.shape[1:] != (self.num_nodes, self.length):
            raise DimensionError(
                f"input {X.shape} does not match model (batch x {self.num_nodes} x {self.length})")
        X = X.astype(self.cfg.dtype, copy=False)
        B = X.shape[0]
        h = Tensor(X.reshape(B, self.num_nodes, 1, self.length))
        adjs = self.adjacencies()
        S = self.cfg.num_slots
        readouts = []
        for i, block in enumerate(self.blocks):
            h = tc_forward(h, block.tc)
            if not self.cfg.no_graph:
                feats = slot_split(h, partition_slots(h.shape[3], S))
                feats = dygin_matrix(feats, normalize_adjacency(adjs[i]), block.gin,
                                     training=training, dgt=self.cfg.dgt)
                h = slot_merge(feats)
                if block.tgp is not None:
                    h = pool_features(h, block.tgp)
            readouts.append(ops.mean(h, axis=(1, 3)))
        z = ops.concat(readouts, axis=1)
        return ops.bias_add(ops.matmul(z, self.fc_weight), self.fc_bias, axis=1)

    __call__ = forward

    def predict_logits(self, X, batch_size=64):
        out = []
        with no_grad():
            for start in range(0, len(X), batch_size):
                out.append(self.forward(X[start:start + batch_size], training=False).data)
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.num_classes))

    def describe(self):
        rows = []
        for i, b in enumerate(self.blocks):
            pooled = "-" if b.tgp is None or self.cfg.no_graph else f"{b.tgp.in_nodes}->{b.tgp.out_nodes}"
            rows.append(f"block{i}: kernel={b.tc.kernel} channels={b.tc.c_out} nodes={b.nodes} "
                        f"len {b.length_in}->{b.length_out} pool={pooled}")
        return "\n".join(rows)
