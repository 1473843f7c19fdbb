"""Adam over dicts of numpy arrays, and the linear learning-rate ramp."""
from __future__ import annotations

import numpy as np


def linear_lr(epoch: int, epochs: int, lr_start: float, lr_end: float) -> float:
    """Learning rate for 1-based ``epoch``; exactly ``lr_start`` at 1 and ``lr_end`` at ``epochs``."""
    if epochs == 1:
        return lr_start
    if epoch == epochs:
        return lr_end
    return lr_start + (epoch - 1) / (epochs - 1) * (lr_end - lr_start)


class Adam:
    def __init__(self, params: dict, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict, lr: float) -> dict:
        """Return updated copies of ``params``; inputs are not modified.

        Tensors missing from ``grads`` are frozen and passed through unchanged.
        """
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        out = {}
        for k, p in params.items():
            if k not in grads:
                out[k] = p
                continue
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            out[k] = p - lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
        return out
