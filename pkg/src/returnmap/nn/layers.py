"""Network building blocks with explicit forward and backward passes.

All layers are numpy-only and operate on channels-last batches (N, H, W, C):
patch extraction then writes contiguous channel runs, convolutions reduce to
plain matrix products without any transposes, and per-channel batch-norm
arithmetic broadcasts along the contiguous last axis. A training forward
pushes whatever the backward pass needs onto a caller-owned stack; backward
pops in reverse order and leaves parameter gradients on the layer
(``g``-prefixed attributes). Large scratch buffers are reused across calls.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Conv2d", "BatchNorm2d", "ReLU", "GlobalAvgPool", "Linear"]


class Conv2d:
    """Bias-free 2-D convolution (cross-correlation), square kernel.

    The weight is stored as (c_out, k, k, c_in) to line up with the patch
    matrix layout, so forward is a single GEMM on contiguous operands.
    """

    def __init__(self, c_in, c_out, k, stride=1, rng=None, dtype=np.float64):
        self.c_in, self.c_out, self.k, self.stride = c_in, c_out, k, stride
        self.pad = (k - 1) // 2
        fan_in = c_in * k * k
        bound = np.sqrt(6.0 / fan_in)
        rng = rng or np.random.default_rng()
        self.weight = rng.uniform(-bound, bound, size=(c_out, k, k, c_in)).astype(dtype)
        self.gw = None
        self._xp = None   # padded-input scratch, borders stay zero
        self._cols = None  # patch-matrix scratch

    def _out_hw(self, h, w):
        oh = (h + 2 * self.pad - self.k) // self.stride + 1
        ow = (w + 2 * self.pad - self.k) // self.stride + 1
        return oh, ow

    def _padded(self, x):
        if self.pad == 0:
            return x
        n, h, w, c = x.shape
        shape = (n, h + 2 * self.pad, w + 2 * self.pad, c)
        if self._xp is None or self._xp.shape != shape:
            self._xp = np.zeros(shape, dtype=x.dtype)
        self._xp[:, self.pad : self.pad + h, self.pad : self.pad + w, :] = x
        return self._xp

    def _im2col(self, x):
        n, h, w, c = x.shape
        oh, ow = self._out_hw(h, w)
        k, s = self.k, self.stride
        xp = self._padded(x)
        shape = (n, oh, ow, k, k, c)
        if self._cols is None or self._cols.shape != shape:
            self._cols = np.empty(shape, dtype=x.dtype)
        cols = self._cols
        for ki in range(k):
            for kj in range(k):
                cols[:, :, :, ki, kj, :] = xp[:, ki : ki + oh * s : s, kj : kj + ow * s : s, :]
        return cols.reshape(n * oh * ow, k * k * c), (n, h, w, c, oh, ow)

    def forward(self, x, train, stack):
        cols, shape = self._im2col(x)
        n, _, _, _, oh, ow = shape
        w2 = self.weight.reshape(self.c_out, -1)
        out = cols @ w2.T
        if train:
            # hand the patch buffer to the cache; backward returns it
            stack.append((self._cols, shape))
            self._cols = None
        return out.reshape(n, oh, ow, self.c_out)

    def backward(self, dy, stack, need_dx=True):
        cols6, shape = stack.pop()
        n, h, w, c, oh, ow = shape
        k, s, p = self.k, self.stride, self.pad
        cols = cols6.reshape(n * oh * ow, k * k * c)
        dy2 = dy.reshape(n * oh * ow, self.c_out)
        self.gw = (dy2.T @ cols).reshape(self.weight.shape)
        self._cols = cols6
        if not need_dx:
            return None
        dcols = dy2 @ self.weight.reshape(self.c_out, -1)
        d6 = dcols.reshape(n, oh, ow, k, k, c)
        dxp = np.zeros((n, h + 2 * p, w + 2 * p, c), dtype=dy.dtype)
        for ki in range(k):
            for kj in range(k):
                dxp[:, ki : ki + oh * s : s, kj : kj + ow * s : s, :] += d6[:, :, :, ki, kj, :]
        if p:
            return dxp[:, p : p + h, p : p + w, :]
        return dxp

    def params(self):
        return [self.weight]

    def grads(self):
        return [self.gw]


class BatchNorm2d:
    """Per-channel batch normalization with affine scale and shift.

    Training-mode forward normalizes with batch statistics and records them
    (mean and unbiased variance) in the cache's ``bn_stats`` list; running
    statistics are only refreshed later, from those records, by the optimizer
    step. Eval mode normalizes with the running statistics.
    """

    def __init__(self, c, momentum=0.1, eps=1e-5, dtype=np.float64):
        self.gamma = np.ones(c, dtype=dtype)
        self.beta = np.zeros(c, dtype=dtype)
        self.running_mean = np.zeros(c, dtype=dtype)
        self.running_var = np.ones(c, dtype=dtype)
        self.momentum = momentum
        self.eps = eps
        self.ggamma = None
        self.gbeta = None

    def forward(self, x, train, stack, bn_stats=None):
        c = x.shape[-1]
        if train:
            flat = x.reshape(-1, c)
            m = flat.shape[0]
            mean = flat.mean(axis=0)
            xhat = x - mean
            var = np.einsum("nc,nc->c", xhat.reshape(-1, c), xhat.reshape(-1, c)) / m
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat *= inv_std
            if bn_stats is not None:
                unbiased = var * (m / max(m - 1, 1))
                bn_stats.append((self, mean, unbiased))
            stack.append((xhat, inv_std))
            out = xhat * self.gamma
            out += self.beta
            return out
        inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
        scale = self.gamma * inv_std
        out = x * scale
        out += self.beta - self.running_mean * scale
        return out

    def backward(self, dy, stack):
        xhat, inv_std = stack.pop()
        c = dy.shape[-1]
        m = dy.size // c
        dy2 = dy.reshape(-1, c)
        self.gbeta = dy2.sum(axis=0)
        self.ggamma = np.einsum("nc,nc->c", dy2, xhat.reshape(-1, c))
        dx = dy - self.gbeta / m
        xhat *= self.ggamma / m  # cache entry, consumed here
        dx -= xhat
        dx *= self.gamma * inv_std
        return dx

    def refresh_running(self, mean, unbiased_var):
        self.running_mean += self.momentum * (mean - self.running_mean)
        self.running_var += self.momentum * (unbiased_var - self.running_var)

    def params(self):
        return [self.gamma, self.beta]

    def grads(self):
        return [self.ggamma, self.gbeta]

    def buffers(self):
        return [self.running_mean, self.running_var]


class ReLU:
    def forward(self, x, train, stack):
        y = np.maximum(x, 0.0)
        if train:
            stack.append(x > 0.0)
        return y

    def backward(self, dy, stack):
        # masks dy in place; callers hand over ownership of the gradient
        mask = stack.pop()
        dy *= mask
        return dy

    def params(self):
        return []

    def grads(self):
        return []


class GlobalAvgPool:
    """Mean over the spatial grid: (N, H, W, C) -> (N, C)."""

    def forward(self, x, train, stack):
        if train:
            stack.append(x.shape)
        return x.mean(axis=(1, 2))

    def backward(self, dy, stack):
        n, h, w, c = stack.pop()
        return np.broadcast_to(dy[:, None, None, :], (n, h, w, c)) / (h * w)

    def params(self):
        return []

    def grads(self):
        return []


class Linear:
    def __init__(self, c_in, c_out, dtype=np.float64, zero_init=True, rng=None):
        if zero_init:
            self.weight = np.zeros((c_out, c_in), dtype=dtype)
        else:
            bound = np.sqrt(6.0 / c_in)
            rng = rng or np.random.default_rng()
            self.weight = rng.uniform(-bound, bound, size=(c_out, c_in)).astype(dtype)
        self.bias = np.zeros(c_out, dtype=dtype)
        self.gw = None
        self.gb = None

    def forward(self, x, train, stack):
        if train:
            stack.append(x)
        return x @ self.weight.T + self.bias

    def backward(self, dy, stack):
        x = stack.pop()
        self.gw = dy.T @ x
        self.gb = dy.sum(axis=0)
        return dy @ self.weight

    def params(self):
        return [self.weight, self.bias]

    def grads(self):
        return [self.gw, self.gb]
