"""Residual convolutional regression network.

Architecture: a 3x3 stem convolution with batch norm and ReLU, a configurable
sequence of residual stages (two 3x3 conv + BN pairs per block, identity or
1x1-projected shortcut, stride at stage entry), global average pooling and a
linear head. The default configuration is sized for 64x64 single-channel
return-map images on a CPU; widths, depths and input size all scale through
:class:`NetConfig`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .layers import BatchNorm2d, Conv2d, GlobalAvgPool, Linear, ReLU

__all__ = ["NetConfig", "ConvRegressor", "StaleCacheError"]


class StaleCacheError(RuntimeError):
    """A forward cache was used after the parameters already changed."""


@dataclass(frozen=True)
class NetConfig:
    height: int = 64
    width: int = 64
    in_channels: int = 1
    stem_channels: int = 16
    # one entry per stage: (residual blocks, channels, entry stride)
    stages: tuple = ((2, 16, 2), (2, 32, 2), (2, 64, 2))
    out_dim: int = 2
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(tuple(s) for s in self.stages))
        for blocks, channels, stride in self.stages:
            if stride not in (1, 2):
                raise ValueError("stage strides must be 1 or 2")
            if blocks < 1 or channels < 1:
                raise ValueError("stages need at least one block and channel")
        if self.out_dim < 1:
            raise ValueError("out_dim must be >= 1")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["stages"] = tuple(tuple(s) for s in d["stages"])
        return cls(**d)


class _ResidualBlock:
    def __init__(self, c_in, c_out, stride, cfg: NetConfig, rng, dtype):
        bn = lambda c: BatchNorm2d(c, cfg.bn_momentum, cfg.bn_eps, dtype=dtype)
        self.conv1 = Conv2d(c_in, c_out, 3, stride, rng=rng, dtype=dtype)
        self.bn1 = bn(c_out)
        self.relu1 = ReLU()
        self.conv2 = Conv2d(c_out, c_out, 3, 1, rng=rng, dtype=dtype)
        self.bn2 = bn(c_out)
        self.relu_out = ReLU()
        if stride != 1 or c_in != c_out:
            self.proj = Conv2d(c_in, c_out, 1, stride, rng=rng, dtype=dtype)
            self.bn_proj = bn(c_out)
        else:
            self.proj = None
            self.bn_proj = None

    def forward(self, x, train, stack, bn_stats):
        main = self.conv1.forward(x, train, stack)
        main = self.bn1.forward(main, train, stack, bn_stats)
        main = self.relu1.forward(main, train, stack)
        main = self.conv2.forward(main, train, stack)
        main = self.bn2.forward(main, train, stack, bn_stats)
        if self.proj is not None:
            skip = self.proj.forward(x, train, stack)
            skip = self.bn_proj.forward(skip, train, stack, bn_stats)
        else:
            skip = x
        main += skip
        return self.relu_out.forward(main, train, stack)

    def backward(self, dy, stack):
        dsum = self.relu_out.backward(dy, stack)
        if self.proj is not None:
            dskip = self.bn_proj.backward(dsum, stack)
            dskip = self.proj.backward(dskip, stack)
        else:
            dskip = dsum
        dmain = self.bn2.backward(dsum, stack)
        dmain = self.conv2.backward(dmain, stack)
        dmain = self.relu1.backward(dmain, stack)
        dmain = self.bn1.backward(dmain, stack)
        dmain = self.conv1.backward(dmain, stack)
        dmain += dskip
        return dmain

    def modules(self):
        mods = [self.conv1, self.bn1, self.conv2, self.bn2]
        if self.proj is not None:
            mods += [self.proj, self.bn_proj]
        return mods


class ConvRegressor:
    """Maps a batch of single-channel images to parameter vectors."""

    def __init__(self, cfg: NetConfig, seed: int = 0, dtype=np.float64):
        self.cfg = cfg
        self.dtype = dtype
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xC0DE,)))
        self.stem = Conv2d(cfg.in_channels, cfg.stem_channels, 3, 1, rng=rng, dtype=dtype)
        self.stem_bn = BatchNorm2d(cfg.stem_channels, cfg.bn_momentum, cfg.bn_eps, dtype=dtype)
        self.stem_relu = ReLU()
        self.blocks = []
        c_in = cfg.stem_channels
        for n_blocks, channels, stride in cfg.stages:
            for b in range(n_blocks):
                s = stride if b == 0 else 1
                self.blocks.append(_ResidualBlock(c_in, channels, s, cfg, rng, dtype))
                c_in = channels
        self.pool = GlobalAvgPool()
        self.head = Linear(c_in, cfg.out_dim, dtype=dtype, zero_init=True)
        self.version = 0

    # -- plumbing ----------------------------------------------------------

    def modules(self):
        mods = [self.stem, self.stem_bn]
        for blk in self.blocks:
            mods += blk.modules()
        mods.append(self.head)
        return mods

    def params(self) -> list[np.ndarray]:
        return [p for m in self.modules() for p in m.params()]

    def grads(self) -> list[np.ndarray]:
        return [g for m in self.modules() for g in m.grads()]

    def buffers(self) -> list[np.ndarray]:
        out = []
        for m in self.modules():
            if isinstance(m, BatchNorm2d):
                out += m.buffers()
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    # -- forward / backward -------------------------------------------------

    def _to_batch(self, images) -> np.ndarray:
        """Coerce (H, W) / (N, H, W) image stacks into channels-last batches."""
        x = np.asarray(images, dtype=self.dtype)
        if x.ndim == 2:
            x = x[None]
        if x.ndim == 3:
            x = x[..., None]
        if x.shape[1:] != (self.cfg.height, self.cfg.width, self.cfg.in_channels):
            raise ValueError(
                f"expected images of shape (*, {self.cfg.height}, "
                f"{self.cfg.width}, {self.cfg.in_channels}), got {x.shape}"
            )
        return np.ascontiguousarray(x)

    def forward(self, images, mode: str = "eval"):
        """Run the network; returns ``(predictions, cache)``.

        ``mode="train"`` normalizes with batch statistics and fills the cache
        for a later backward; nothing on the network itself is mutated.
        ``mode="eval"`` uses running statistics and returns an empty cache.
        """
        if mode not in ("train", "eval"):
            raise ValueError("mode must be 'train' or 'eval'")
        x = self._to_batch(images)
        train = mode == "train"
        stack: list = []
        bn_stats: list = []
        y = self.stem.forward(x, train, stack)
        y = self.stem_bn.forward(y, train, stack, bn_stats)
        y = self.stem_relu.forward(y, train, stack)
        for blk in self.blocks:
            y = blk.forward(y, train, stack, bn_stats)
        y = self.pool.forward(y, train, stack)
        pred = self.head.forward(y, train, stack)
        cache = {"stack": stack, "bn_stats": bn_stats, "version": self.version} if train else None
        return pred, cache

    def backward(self, cache, dpred) -> list[np.ndarray]:
        """Backpropagate a prediction gradient; returns parameter gradients."""
        if cache is None:
            raise StaleCacheError("backward requires a train-mode cache")
        if cache["version"] != self.version:
            raise StaleCacheError("cache predates the last parameter update")
        stack = cache["stack"]
        dy = self.head.backward(np.asarray(dpred, dtype=self.dtype), stack)
        dy = self.pool.backward(dy, stack)
        for blk in reversed(self.blocks):
            dy = blk.backward(dy, stack)
        dy = self.stem_relu.backward(dy, stack)
        dy = self.stem_bn.backward(dy, stack)
        self.stem.backward(dy, stack, need_dx=False)
        return self.grads()

    def apply_batch_stats(self, cache) -> None:
        """Fold the cache's batch statistics into the BN running statistics."""
        for bn, mean, unbiased_var in cache["bn_stats"]:
            bn.refresh_running(mean, unbiased_var)
