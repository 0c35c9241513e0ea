"""Parameter update rules.

Both optimizers consume whatever is in ``Parameter.grad`` at step time
(i.e. post-modulation gradients) and zero the gradients afterwards.
"""

import numpy as np

from .errors import ContractError


class MomentumSGD:
    """EMA-style momentum: v = beta*v + (1-beta)*g, then theta -= lr*v.

    With beta == 0 the velocity equals the raw gradient and the update
    is plain gradient descent.
    """

    def __init__(self, params, lr, beta=0.9):
        if lr <= 0:
            raise ContractError(f"learning rate must be > 0, got {lr}")
        if not 0.0 <= beta < 1.0:
            raise ContractError(f"momentum beta must be in [0, 1), got {beta}")
        self.params = list(params)
        self.lr = float(lr)
        self.beta = float(beta)
        self.velocity = {id(p): np.zeros_like(p.data) for p in self.params}

    def step(self):
        for p in self.params:
            v = self.velocity[id(p)]
            v *= self.beta
            v += (1.0 - self.beta) * p.grad
            p.data -= self.lr * v
            p.grad[...] = 0.0


class AdamW:
    """Adaptive moments with decoupled weight decay and bias correction."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.01):
        if lr <= 0:
            raise ContractError(f"learning rate must be > 0, got {lr}")
        self.params = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.t = 0
        self.m = {id(p): np.zeros_like(p.data) for p in self.params}
        self.v = {id(p): np.zeros_like(p.data) for p in self.params}

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p in self.params:
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
            m = self.m[id(p)]
            v = self.v[id(p)]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad ** 2
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.grad[...] = 0.0


def make_optimizer(name, params, lr, momentum_beta=0.9, weight_decay=0.01):
    name = name.lower()
    if name == "adamw":
        return AdamW(params, lr=lr, weight_decay=weight_decay)
    if name in ("momentum", "sgd"):
        return MomentumSGD(params, lr=lr, beta=momentum_beta)
    raise ContractError(f"unknown optimizer {name!r}; use 'adamw' or 'momentum'")
