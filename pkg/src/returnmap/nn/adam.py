"""Adam optimizer with decoupled weight decay.

The decay multiplies parameters by ``1 - lr * weight_decay`` before the
bias-corrected moment update, so decay strength does not feed through the
adaptive scaling. Stepping also folds the forward cache's batch statistics
into the batch-norm running statistics and invalidates older caches.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Adam"]


class Adam:
    def __init__(self, net, lr=1e-3, weight_decay=1e-4,
                 beta1=0.9, beta2=0.999, eps=1e-8):
        self.net = net
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in net.params()]
        self.v = [np.zeros_like(p) for p in net.params()]

    def step(self, cache, grads) -> None:
        """Apply one update from gradients produced with ``cache``."""
        if cache["version"] != self.net.version:
            raise RuntimeError("gradients come from a stale forward cache")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        decay = 1.0 - self.lr * self.weight_decay
        for p, g, m, v in zip(self.net.params(), grads, self.m, self.v):
            if self.weight_decay:
                p *= decay
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        self.net.apply_batch_stats(cache)
        self.net.version += 1
