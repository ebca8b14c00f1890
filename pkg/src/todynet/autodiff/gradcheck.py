"""Central finite differences against tape gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Parameter, backward, no_grad, reset_tape


def _coords(p, n, rng):
    if n is None or n >= p.size:
        return np.arange(p.size)
    return np.sort(rng.choice(p.size, size=n, replace=False))


def tape_gradients(f, x, params):
    for p in params:
        p.zero_grad()
    reset_tape()
    loss = f(x)
    backward(loss)
    return [p.grad.copy() for p in params]


def finite_difference_check(f, x, h=1e-5, coords_per_param=None, seed=0, return_details=False):
    """Max relative error between tape and central-difference gradients.

    ``f(x)`` must return a scalar Tensor.  ``x`` is a :class:`Parameter` or a
    list of them; ``coords_per_param`` subsamples coordinates of large ones.
    The relative error of a coordinate is ``|fd - g| / max(|g|, 1e-8)`` with
    ``g`` the tape gradient.
    """
    params = [x] if isinstance(x, Parameter) else list(x)
    rng = np.random.default_rng(seed)
    grads = tape_gradients(f, x, params)
    worst = 0.0
    details = []
    with no_grad():
        for p, g in zip(params, grads):
            flat = p.data.reshape(-1)
            gflat = g.reshape(-1)
            for i in _coords(p, coords_per_param, rng):
                orig = flat[i]
                flat[i] = orig + h
                fp = float(f(x).data)
                flat[i] = orig - h
                fm = float(f(x).data)
                flat[i] = orig
                fd = (fp - fm) / (2 * h)
                err = abs(fd - gflat[i]) / max(abs(gflat[i]), 1e-8)
                worst = max(worst, err)
                if return_details:
                    details.append((p.name, int(i), float(gflat[i]), fd, err))
    if return_details:
        return worst, details
    return worst
