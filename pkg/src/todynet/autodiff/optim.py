import numpy as np


class Adam:
    """Adam with bias correction; moments live on each :class:`Parameter`."""

    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p in self.params:
            g = p.grad
            p.m = b1 * p.m + (1.0 - b1) * g
            p.v = b2 * p.v + (1.0 - b2) * (g * g)
            m_hat = p.m / c1
            v_hat = p.v / c2
            p.data = (p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)

    def state_dict(self):
        return {"t": self.t, "lr": self.lr}


def adam_step(params, lr, optimizer=None):
    """One Adam update over ``params``; pass the same ``optimizer`` to keep the step count."""
    opt = optimizer if optimizer is not None else Adam(params, lr=lr)
    opt.lr = lr
    opt.step()
    return opt
