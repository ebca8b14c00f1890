"""Differentiable operations over :class:`Tensor`.

Each op computes its forward value with numpy and records a closure that maps
the output adjoint to input adjoints.  Shape alignment is always explicit:
apart from scalar operands nothing broadcasts.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError, ContractError, DataError, DimensionError
from . import conv_kernels
from .tensor import Tensor, make_output

# ops covered by the finite-difference suite
REGISTERED_OPS = (
    "matmul",
    "conv1d_same",
    "conv2d_valid",
    "add",
    "mul",
    "mul_scalar",
    "scale",
    "relu",
    "sum",
    "mean",
    "reshape",
    "transpose",
    "concat",
    "stack",
    "mask_mul",
    "take_last",
    "slot_shift",
    "bias_add",
    "linear_axis",
    "node_mix",
    "sym_normalize",
    "batch_norm",
    "softmax_cross_entropy",
)


def _t(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


# ---------------------------------------------------------------- linear algebra


def matmul(a, b):
    """Matrix product of 2-D operands, or of stacks with equal leading dims."""
    a, b = _t(a), _t(b)
    if a.ndim < 2 or b.ndim < 2 or a.ndim != b.ndim:
        raise DimensionError(f"matmul needs matching-rank (>=2) operands, got {a.shape} and {b.shape}")
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    A, B = a.data, b.data

    def adjoint(g):
        return (g @ np.swapaxes(B, -1, -2), np.swapaxes(A, -1, -2) @ g)

    return make_output(A @ B, (a, b), "matmul", adjoint)


def linear_axis(x, w, axis):
    """Apply ``w`` (``out x in``) along ``axis`` of ``x``; no bias."""
    x, w = _t(x), _t(w)
    axis = axis % x.ndim
    if w.ndim != 2 or w.shape[1] != x.shape[axis]:
        raise DimensionError(f"linear_axis: weight {w.shape} vs input {x.shape} on axis {axis}")
    X, W = x.data, w.data
    out = np.moveaxis(np.tensordot(X, W, axes=([axis], [1])), -1, axis)

    def adjoint(g):
        gm = np.moveaxis(g, axis, -1).reshape(-1, W.shape[0])
        xm = np.moveaxis(X, axis, -1).reshape(-1, W.shape[1])
        dw = gm.T @ xm
        dx = np.moveaxis((gm @ W).reshape(np.moveaxis(X, axis, -1).shape), -1, axis)
        return (dx, dw)

    return make_output(out, (x, w), "linear_axis", adjoint)


def bias_add(x, b, axis):
    """``x + b`` with ``b`` (1-D) laid along ``axis``."""
    x, b = _t(x), _t(b)
    axis = axis % x.ndim
    if b.ndim != 1 or b.shape[0] != x.shape[axis]:
        raise DimensionError(f"bias_add: bias {b.shape} vs input {x.shape} on axis {axis}")
    shape = [1] * x.ndim
    shape[axis] = -1
    others = tuple(i for i in range(x.ndim) if i != axis)

    def adjoint(g):
        return (g, g.sum(axis=others))

    return make_output(x.data + b.data.reshape(shape), (x, b), "bias_add", adjoint)


def node_mix(adj, h):
    """Per-slot neighbour aggregation.

    ``adj`` is ``S x n x n``, ``h`` is ``batch x n x S x c x tau``; the result
    at node ``u``, slot ``s`` is ``sum_v adj[s, u, v] * h[:, v, s]``.
    """
    adj, h = _t(adj), _t(h)
    if adj.ndim != 3 or h.ndim != 5:
        raise DimensionError(f"node_mix expects 3-D adjacency and 5-D features, got {adj.shape}, {h.shape}")
    S, n, n2 = adj.shape
    B, nh, Sh, c, tau = h.shape
    if n != n2 or n != nh or S != Sh:
        raise DimensionError(f"node_mix: adjacency {adj.shape} incompatible with features {h.shape}")
    A = adj.data
    Hs = np.ascontiguousarray(h.data.transpose(2, 1, 0, 3, 4)).reshape(S, n, B * c * tau)
    out = (A @ Hs).reshape(S, n, B, c, tau).transpose(2, 1, 0, 3, 4)

    def adjoint(g):
        Gs = np.ascontiguousarray(g.transpose(2, 1, 0, 3, 4)).reshape(S, n, B * c * tau)
        dA = Gs @ np.swapaxes(Hs, 1, 2)
        dH = (np.swapaxes(A, 1, 2) @ Gs).reshape(S, n, B, c, tau).transpose(2, 1, 0, 3, 4)
        return (dA, dH)

    return make_output(np.ascontiguousarray(out), (adj, h), "node_mix", adjoint)


# ---------------------------------------------------------------- elementwise


def add(a, b):
    """Sum of equal-shape tensors; a Python scalar ``b`` is also accepted."""
    a = _t(a)
    if np.isscalar(b):
        c = float(b)
        return make_output(a.data + c, (a,), "add_const", lambda g: (g,))
    b = _t(b, like=a)
    if a.shape != b.shape:
        raise DimensionError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return make_output(a.data + b.data, (a, b), "add", lambda g: (g, g))


def mul(a, b):
    a, b = _t(a), _t(b)
    if a.shape != b.shape:
        raise DimensionError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    A, B = a.data, b.data
    return make_output(A * B, (a, b), "mul", lambda g: (g * B, g * A))


def mul_scalar(x, s):
    x = _t(x)
    s = float(s)
    return make_output(x.data * s, (x,), "mul_scalar", lambda g: (g * s,))


def scale(x, s):
    """Multiply ``x`` by a one-element tensor ``s`` (differentiable in both)."""
    x, s = _t(x), _t(s)
    if s.size != 1:
        raise DimensionError(f"scale expects a one-element factor, got {s.shape}")
    X = x.data
    sv = s.data.reshape(())

    def adjoint(g):
        return (g * sv, np.asarray(np.sum(g * X)).reshape(s.shape))

    return make_output(X * sv, (x, s), "scale", adjoint)


def relu(x):
    """Rectifier; the subgradient at exactly 0 is 0."""
    x = _t(x)
    out = np.maximum(x.data, 0)
    return make_output(out, (x,), "relu", lambda g: (g * (out > 0),))


def mask_mul(x, mask):
    """Multiply by a constant array of the same shape (pads, top-k masks)."""
    x = _t(x)
    m = np.asarray(mask, dtype=x.dtype)
    if m.shape != x.shape:
        m = np.broadcast_to(m, x.shape)
    return make_output(x.data * m, (x,), "mask_mul", lambda g: (g * m,))


# ---------------------------------------------------------------- reductions / shape


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def sum(x, axis=None):  # noqa: A001
    x = _t(x)
    axes = _norm_axes(axis, x.ndim)
    shape = x.shape

    def adjoint(g):
        return (np.broadcast_to(np.expand_dims(g, axes), shape).copy(),)

    return make_output(x.data.sum(axis=axes), (x,), "sum", adjoint)


def mean(x, axis=None):
    x = _t(x)
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    shape = x.shape

    def adjoint(g):
        return (np.broadcast_to(np.expand_dims(g, axes) / count, shape).copy(),)

    return make_output(x.data.mean(axis=axes), (x,), "mean", adjoint)


def reshape(x, shape):
    x = _t(x)
    old = x.shape
    return make_output(x.data.reshape(shape), (x,), "reshape", lambda g: (g.reshape(old),))


def transpose(x, axes=None):
    x = _t(x)
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_output(np.ascontiguousarray(x.data.transpose(axes)), (x,), "transpose",
                       lambda g: (g.transpose(inv),))


def concat(tensors, axis=0):
    tensors = [_t(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def adjoint(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_output(out, tuple(tensors), "concat", adjoint)


def stack(tensors, axis=0):
    tensors = [_t(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def adjoint(g):
        return tuple(np.moveaxis(g, axis, 0))

    return make_output(out, tuple(tensors), "stack", adjoint)


def take_last(x, index, valid=None):
    """Gather along the last axis: ``out[..., q] = x[..., index[q]] * valid[q]``.

    ``index`` may have any shape; its axes replace the last axis of ``x``.
    Positions with ``valid == 0`` are zero-filled and receive no gradient.
    """
    x = _t(x)
    index = np.asarray(index, dtype=np.intp)
    L = x.shape[-1]
    if index.size and (index.min() < 0 or index.max() >= L):
        raise DimensionError(f"take_last index out of range for length {L}")
    if valid is None:
        valid = np.ones(index.shape, dtype=bool)
    valid = np.asarray(valid, dtype=bool)
    lead = x.shape[:-1]
    flat_idx = index.ravel()
    sel = valid.ravel()
    src = flat_idx[sel]
    unique = np.unique(src).size == src.size
    X2 = x.data.reshape(-1, L)
    out = np.zeros((X2.shape[0], flat_idx.size), dtype=x.dtype)
    out[:, sel] = X2[:, src]

    def adjoint(g):
        g2 = g.reshape(-1, flat_idx.size)
        dx = np.zeros_like(X2)
        if unique:
            dx[:, src] = g2[:, sel]
        else:
            np.add.at(dx, (slice(None), src), g2[:, sel])
        return (dx.reshape(lead + (L,)),)

    return make_output(out.reshape(lead + index.shape), (x,), "take_last", adjoint)


def slot_shift(x, axis):
    """Shift one step forward along ``axis``: ``out[t] = x[t-1]``, ``out[0] = 0``."""
    x = _t(x)
    axis = axis % x.ndim
    X = x.data
    out = np.zeros_like(X)
    n = X.shape[axis]
    dst = [slice(None)] * X.ndim
    srcs = [slice(None)] * X.ndim
    dst[axis] = slice(1, n)
    srcs[axis] = slice(0, n - 1)
    dst, srcs = tuple(dst), tuple(srcs)
    out[dst] = X[srcs]

    def adjoint(g):
        dx = np.zeros_like(g)
        dx[srcs] = g[dst]
        return (dx,)

    return make_output(out, (x,), "slot_shift", adjoint)


# ---------------------------------------------------------------- convolutions


def conv1d_same(x, w, b):
    """Length-preserving 1-D cross-correlation (zero padding ``(k-1)/2``).

    x: ``batch x cin x len``; w: ``cout x cin x k``; b: ``cout``.
    """
    x, w, b = _t(x), _t(w), _t(b)
    if x.ndim != 3 or w.ndim != 3 or b.ndim != 1:
        raise DimensionError(f"conv1d_same expects 3-D x, 3-D w, 1-D b; got {x.shape}, {w.shape}, {b.shape}")
    N, cin, L = x.shape
    cout, cin_w, k = w.shape
    if k % 2 == 0:
        raise ConfigurationError(f"conv1d_same needs an odd kernel size, got {k}")
    if cin_w != cin or b.shape[0] != cout:
        raise DimensionError(f"conv1d_same channel mismatch: x {x.shape}, w {w.shape}, b {b.shape}")
    if L < 1:
        raise DimensionError("conv1d_same needs length >= 1")
    p = (k - 1) // 2
    W = w.data
    out_cm, cols = conv_kernels.corr_forward(x.data.transpose(1, 0, 2), W, p)
    out = out_cm.transpose(1, 0, 2) + b.data[:, None]

    def adjoint(g):
        gcm = np.ascontiguousarray(g.transpose(1, 0, 2))
        dx, dw = conv_kernels.corr_backward(gcm, cols, W, L, p, need_dx=x.requires_grad)
        return (None if dx is None else dx.transpose(1, 0, 2), dw, gcm.sum(axis=(1, 2)))

    return make_output(out, (x, w, b), "conv1d_same", adjoint)


def conv2d_valid(x, w, b):
    """Valid (unpadded) 2-D cross-correlation.

    x: ``batch x cin x h x w``; w: ``cout x cin x kh x kw``; b: ``cout``.
    Each kernel row is a 1-D correlation over the matching input rows.
    """
    x, w, b = _t(x), _t(w), _t(b)
    if x.ndim != 4 or w.ndim != 4 or b.ndim != 1:
        raise DimensionError(f"conv2d_valid expects 4-D x, 4-D w, 1-D b; got {x.shape}, {w.shape}, {b.shape}")
    N, cin, H, Wd = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin_w != cin or b.shape[0] != cout:
        raise DimensionError(f"conv2d_valid channel mismatch: x {x.shape}, w {w.shape}, b {b.shape}")
    if kh > H or kw > Wd:
        raise DimensionError(f"conv2d_valid kernel {kh}x{kw} larger than input {H}x{Wd}")
    Ho = H - kh + 1
    W = w.data
    xcm = x.data.transpose(1, 0, 2, 3)
    out_cm = None
    saved = []
    for i in range(kh):
        o, cols = conv_kernels.corr_forward(xcm[:, :, i:i + Ho, :], W[:, :, i, :], 0)
        out_cm = o if out_cm is None else out_cm + o
        saved.append(cols)
    out = out_cm.transpose(1, 0, 2, 3) + b.data.reshape(1, cout, 1, 1)

    def adjoint(g):
        gcm = np.ascontiguousarray(g.transpose(1, 0, 2, 3))
        dw = np.zeros_like(W)
        dxcm = np.zeros(xcm.shape, dtype=g.dtype) if x.requires_grad else None
        for i in range(kh):
            dxi, dw[:, :, i, :] = conv_kernels.corr_backward(gcm, saved[i], W[:, :, i, :], Wd, 0,
                                                             need_dx=x.requires_grad)
            if dxcm is not None:
                dxcm[:, :, i:i + Ho, :] += dxi
        dx = None if dxcm is None else dxcm.transpose(1, 0, 2, 3)
        return (dx, dw, gcm.sum(axis=(1, 2, 3)))

    return make_output(out, (x, w, b), "conv2d_valid", adjoint)


# ---------------------------------------------------------------- graph / normalisation


def sym_normalize(adj):
    """``D^-1/2 A D^-1/2`` per matrix, with ``D_ii = sum_j A_ij``.

    Nodes of zero degree use ``D_ii = 1`` so isolated rows/columns stay zero.
    Accepts ``n x n`` or a stack ``S x n x n``.
    """
    adj = _t(adj)
    A = adj.data
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise DimensionError(f"sym_normalize needs square matrices, got {A.shape}")
    if np.any(A < 0):
        raise ContractError("sym_normalize requires nonnegative entries")
    deg = A.sum(axis=-1)
    live = deg > 0
    safe = np.where(live, deg, 1.0)
    r = safe ** -0.5
    out = A * r[..., :, None] * r[..., None, :]

    def adjoint(g):
        ga = g * A
        dr = (ga * r[..., None, :]).sum(axis=-1) + (ga * r[..., :, None]).sum(axis=-2)
        dd = np.where(live, -0.5 * safe ** -1.5 * dr, 0.0)
        return (g * r[..., :, None] * r[..., None, :] + dd[..., :, None],)

    return make_output(out.astype(A.dtype), (adj,), "sym_normalize", adjoint)


class BatchNormState:
    """Running statistics for :func:`batch_norm` (frozen at evaluation)."""

    def __init__(self, channels, dtype=np.float64, momentum=0.1):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)
        self.momentum = momentum


def batch_norm(x, gamma, beta, axis, state=None, training=True, mask=None, eps=1e-5):
    """Per-channel affine normalisation over every axis except ``axis``.

    ``mask`` (broadcastable to ``x``, 1 = valid) excludes padded positions
    from the statistics and zeroes them in the output.
    """
    x, gamma, beta = _t(x), _t(gamma), _t(beta)
    axis = axis % x.ndim
    C = x.shape[axis]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise DimensionError(f"batch_norm: affine params {gamma.shape}/{beta.shape} vs {C} channels")
    X = x.data
    red = tuple(i for i in range(X.ndim) if i != axis)
    pshape = [1] * X.ndim
    pshape[axis] = C
    w = None if mask is None else np.broadcast_to(np.asarray(mask, dtype=X.dtype), X.shape)
    G = gamma.data.reshape(pshape)
    Bt = beta.data.reshape(pshape)

    if training:
        count = float(np.prod([X.shape[i] for i in red])) if w is None else float(w.sum() / C)
        if count < 1:
            raise DimensionError("batch_norm: no valid positions")
        xs = X if w is None else X * w
        mu = xs.sum(axis=red, keepdims=True) / count
        xc = X - mu
        if w is not None:
            xc = xc * w
        var = (xc * xc).sum(axis=red, keepdims=True) / count
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        if state is not None:
            m = state.momentum
            unbiased = var * (count / (count - 1)) if count > 1 else var
            state.mean = (1 - m) * state.mean + m * mu.reshape(C)
            state.var = (1 - m) * state.var + m * unbiased.reshape(C)

        def adjoint(g):
            gw = g if w is None else g * w
            dgamma = (gw * xhat).sum(axis=red)
            dbeta = gw.sum(axis=red)
            dxh = gw * G
            dx = inv / count * (count * dxh - dxh.sum(axis=red, keepdims=True)
                                - xhat * (dxh * xhat).sum(axis=red, keepdims=True))
            if w is not None:
                dx = dx * w
            return (dx, dgamma, dbeta)
    else:
        if state is None:
            raise ContractError("batch_norm in evaluation mode needs running statistics")
        inv = (1.0 / np.sqrt(state.var + eps)).astype(X.dtype).reshape(pshape)
        xhat = (X - state.mean.astype(X.dtype).reshape(pshape)) * inv

        def adjoint(g):
            gw = g if w is None else g * w
            return (gw * G * inv, (gw * xhat).sum(axis=red), gw.sum(axis=red))

    out = G * xhat + Bt
    if w is not None:
        out = out * w
    return make_output(out.astype(X.dtype), (x, gamma, beta), "batch_norm", adjoint)


# ---------------------------------------------------------------- loss


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``."""
    logits = _t(logits)
    Z = logits.data
    if Z.ndim != 2:
        raise DimensionError(f"logits must be batch x classes, got {Z.shape}")
    B, C = Z.shape
    if C < 2:
        raise ConfigurationError(f"softmax_cross_entropy needs at least 2 classes, got {C}")
    y = np.asarray(labels)
    if y.shape != (B,):
        raise DimensionError(f"labels shape {y.shape} does not match batch {B}")
    for i, lab in enumerate(y):
        if not (0 <= int(lab) < C) or int(lab) != lab:
            raise DataError(f"label {lab!r} of sample {i} outside [0, {C})")
    y = y.astype(np.intp)
    shifted = Z - Z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    nll = lse - shifted[np.arange(B), y]
    loss = np.asarray(nll.mean(), dtype=Z.dtype)

    def adjoint(g):
        p = np.exp(shifted - lse[:, None])
        p[np.arange(B), y] -= 1.0
        return (p * (g / B),)

    return make_output(loss, (logits,), "softmax_cross_entropy", adjoint)
