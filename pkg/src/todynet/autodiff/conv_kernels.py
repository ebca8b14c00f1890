"""Channel-major 1-D correlation kernels shared by both convolution ops.

Arrays are laid out ``cin x (batch axes...) x L``.  Two equivalent
strategies are used, whichever needs the smaller scratch buffer:

* input columns (``cin*k x batch*Lo``): classic im2col, one GEMM each for
  the output, the weight gradient and the column gradient;
* output taps (``cout*k x batch*L``): project every input step through all
  taps first and shift-add the results, which is much cheaper when few
  output channels are produced (node pooling).
"""

import numpy as np


def _span(q, pad, L, Lo):
    # output positions [lo, hi) read input positions [lo + q - pad, hi + q - pad)
    lo = max(0, pad - q)
    hi = min(Lo, L + pad - q)
    return lo, hi


def im2col(xcm, k, pad):
    cin, *batch, L = xcm.shape
    Lo = L + 2 * pad - k + 1
    cols = np.zeros((cin, k, *batch, Lo), dtype=xcm.dtype)
    for q in range(k):
        lo, hi = _span(q, pad, L, Lo)
        if hi > lo:
            cols[:, q, ..., lo:hi] = xcm[..., lo + q - pad:hi + q - pad]
    return cols.reshape(cin * k, -1), Lo


def col2im(dcols, cin, k, batch, L, Lo, pad):
    d = dcols.reshape(cin, k, *batch, Lo)
    dx = np.zeros((cin, *batch, L), dtype=dcols.dtype)
    for q in range(k):
        lo, hi = _span(q, pad, L, Lo)
        if hi > lo:
            dx[..., lo + q - pad:hi + q - pad] += d[:, q, ..., lo:hi]
    return dx


def _use_taps(cin, cout):
    return cout < cin


def corr_forward(xcm, w, pad):
    """``out[o, ..., t] = sum_{c,q} w[o, c, q] * x[c, ..., t + q - pad]``.

    Returns ``(out, saved)``; ``saved`` feeds :func:`corr_backward`.
    """
    cout, cin, k = w.shape
    batch = xcm.shape[1:-1]
    L = xcm.shape[-1]
    Lo = L + 2 * pad - k + 1
    if not _use_taps(cin, cout):
        cols, _ = im2col(xcm, k, pad)
        out = (w.reshape(cout, cin * k) @ cols).reshape(cout, *batch, Lo)
        return out, cols
    x2 = np.ascontiguousarray(xcm).reshape(cin, -1)
    taps = (w.transpose(0, 2, 1).reshape(cout * k, cin) @ x2).reshape(cout, k, *batch, L)
    out = np.zeros((cout, *batch, Lo), dtype=taps.dtype)
    for q in range(k):
        lo, hi = _span(q, pad, L, Lo)
        if hi > lo:
            out[..., lo:hi] += taps[:, q, ..., lo + q - pad:hi + q - pad]
    return out, x2


def corr_backward(gcm, saved, w, L, pad, need_dx=True):
    cout, cin, k = w.shape
    batch = gcm.shape[1:-1]
    Lo = gcm.shape[-1]
    if not _use_taps(cin, cout):
        g2 = gcm.reshape(cout, -1)
        dw = (g2 @ saved.T).reshape(w.shape)
        dx = None
        if need_dx:
            dx = col2im(w.reshape(cout, cin * k).T @ g2, cin, k, batch, L, Lo, pad)
        return dx, dw
    # gather the output gradient back onto input positions, one row per tap
    gt = np.zeros((cout, k, *batch, L), dtype=gcm.dtype)
    for q in range(k):
        lo, hi = _span(q, pad, L, Lo)
        if hi > lo:
            gt[:, q, ..., lo + q - pad:hi + q - pad] = gcm[..., lo:hi]
    gt = gt.reshape(cout * k, -1)
    dw = (gt @ saved.T).reshape(cout, k, cin).transpose(0, 2, 1)
    dx = None
    if need_dx:
        dx = (w.transpose(1, 0, 2).reshape(cin, cout * k) @ gt).reshape(cin, *batch, L)
    return dx, dw
