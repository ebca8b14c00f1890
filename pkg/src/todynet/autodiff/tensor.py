"""Dense arrays with a reverse-mode differentiation tape.

Every differentiable operation appends one :class:`TapeNode` to the active
:class:`Tape` (a Wengert list).  Because nodes are appended in execution
order the tape is already topologically sorted, so :func:`backward` is a
single reverse sweep.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError, NonFiniteError

_ids = itertools.count()


class Tensor:
    """An n-dimensional real array, optionally tracked by the tape."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.id = next(_ids)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self):
        tag = type(self).__name__
        return f"{tag}(shape={self.shape}, dtype={self.dtype})"

    def __len__(self):
        return len(self.data)

    # operator sugar; the ops module owns the adjoints
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __neg__(self):
        from . import ops
        return ops.mul_scalar(self, -1.0)

    def __sub__(self, other):
        from . import ops
        return ops.add(self, ops.mul_scalar(_as_tensor(other, self), -1.0))

    def __mul__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            return ops.mul(self, other)
        return ops.mul_scalar(self, float(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def relu(self):
        from . import ops
        return ops.relu(self)

    def sum(self, axis=None):
        from . import ops
        return ops.sum(self, axis)

    def mean(self, axis=None):
        from . import ops
        return ops.mean(self, axis)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    @property
    def T(self):
        return self.transpose()


class Parameter(Tensor):
    """A trainable array with a gradient accumulator and Adam moments."""

    def __init__(self, data, name="", dtype=None):
        super().__init__(np.array(data, dtype=dtype, copy=True), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def reset_moments(self):
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)

    def astype(self, dtype):
        self.data = self.data.astype(dtype)
        self.grad = self.grad.astype(dtype)
        self.m = self.m.astype(dtype)
        self.v = self.v.astype(dtype)
        return self

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


@dataclass
class TapeNode:
    kind: str
    inputs: tuple
    output: Tensor
    adjoint: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    nodes: list = field(default_factory=list)
    enabled: bool = True

    def record(self, kind, inputs, output, adjoint):
        self.nodes.append(TapeNode(kind, tuple(inputs), output, adjoint))

    def clear(self):
        self.nodes.clear()

    def __len__(self):
        return len(self.nodes)

    def __contains__(self, tensor):
        return any(node.output is tensor for node in self.nodes)


_tape = Tape()


def get_tape() -> Tape:
    return _tape


def reset_tape():
    _tape.clear()


def is_grad_enabled() -> bool:
    return _tape.enabled


@contextmanager
def no_grad():
    """Evaluate without recording anything on the tape."""
    prev = _tape.enabled
    _tape.enabled = False
    try:
        yield
    finally:
        _tape.enabled = prev


def make_output(data, inputs, kind, adjoint) -> Tensor:
    """Wrap ``data`` and record the node if any input is tracked."""
    track = _tape.enabled and any(isinstance(t, Tensor) and t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track)
    if track:
        _tape.record(kind, inputs, out, adjoint)
    return out


def backward(loss: Tensor, check_finite=True):
    """Reverse sweep from a scalar ``loss``; accumulates into ``Parameter.grad``.

    The tape is cleared afterwards, so each forward pass supports exactly one
    backward pass.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {loss.shape}")
    if not loss.requires_grad:
        _tape.clear()
        return
    nodes = _tape.nodes
    if not nodes or not any(n.output is loss for n in reversed(nodes)):
        raise ContractError("loss was not produced on the current tape")
    grads = {loss.id: np.ones_like(loss.data)}
    touched = {}
    try:
        for node in reversed(nodes):
            g = grads.pop(node.output.id, None)
            if g is None:
                continue
            in_grads = node.adjoint(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not isinstance(t, Tensor) or not t.requires_grad:
                    continue
                if isinstance(t, Parameter):
                    t.grad += gi.reshape(t.shape)
                    touched[t.id] = t
                elif t.id in grads:
                    grads[t.id] = grads[t.id] + gi
                else:
                    grads[t.id] = gi
    finally:
        _tape.clear()
    if check_finite:
        assert_finite_grads(touched.values())


def assert_finite_grads(params, where=""):
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            name = getattr(p, "name", "") or "parameter"
            raise NonFiniteError(f"non-finite gradient in {name} {where}".strip())
