"""Bias-corrected Adam, operating in place on named parameter tensors."""

from __future__ import annotations

import numpy as np


class AdamState:
    """First/second moment buffers for one tensor, zero-initialized."""

    __slots__ = ("m", "v")

    def __init__(self, shape):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)


def adam_step(params, state, lr, beta1=0.9, beta2=0.999, eps=1e-8, t=1):
    """Apply one bias-corrected Adam update in place; advances the moments.

    params: sequence of (name, Tensor); state: dict name -> AdamState,
    moments zero at t = 0; t: 1-based step index. Tensors whose grad is
    None are treated as zero-gradient (moments decay, update is zero).
    """
    if lr <= 0 or eps <= 0:
        raise ValueError("adam_step: lr and eps must be positive")
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in params:
        s = state[name]
        g = p.grad if p.grad is not None else 0.0
        s.m *= beta1
        s.m += (1.0 - beta1) * g
        s.v *= beta2
        s.v += (1.0 - beta2) * np.square(g)
        p.data -= lr * (s.m / bc1) / (np.sqrt(s.v / bc2) + eps)


class Adam:
    """Convenience wrapper tying state, step counter, and hyperparameters."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0 or eps <= 0:
            raise ValueError("Adam: lr and eps must be positive")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.state = {name: AdamState(p.data.shape) for name, p in self.params}

    def step(self, lr=None):
        self.t += 1
        adam_step(self.params, self.state, lr if lr is not None else self.lr,
                  self.beta1, self.beta2, self.eps, self.t)

    def zero_grad(self):
        for _, p in self.params:
            p.zero_grad()
