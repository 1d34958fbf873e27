"""In-place optimizers over lists of numpy arrays."""

import numpy as np


class SGD:
    def __init__(self, lr=0.01, weight_decay=0.0):
        self.lr = lr
        self.weight_decay = weight_decay

    def step(self, params, grads):
        for p, g in zip(params, grads):
            if self.weight_decay:
                g = g + self.weight_decay * p
            p -= self.lr * g


class Adam:
    """Adam with L2 penalty folded into the gradient (torch semantics)."""

    def __init__(self, lr=0.01, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, grads):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if self.weight_decay:
                g = g + self.weight_decay * p
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            g = g * g
            g *= 1 - self.b2
            v += g
            denom = np.sqrt(v)
            denom *= 1.0 / np.sqrt(c2)
            denom += self.eps
            np.divide(m, denom, out=denom)
            denom *= self.lr / c1
            p -= denom


def make_optimizer(name, lr, weight_decay=0.0):
    if name == "adam":
        return Adam(lr, weight_decay=weight_decay)
    if name in ("sgd", "gd"):
        return SGD(lr, weight_decay=weight_decay)
    raise ValueError(f"unknown optimizer {name!r}")
