"""Forward passes of CBAM, squeeze-and-excitation, ASPP and the AS-SE composition.

Fully connected weights are stored as ``(in_features, out_features)`` and
applied as ``z @ W + b``. No batch normalization anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pave_forge.core import (Kernel2D, as_tensor, conv2d, global_avg_pool, global_max_pool,
                             relu, sigmoid, upsample_bilinear)

DEFAULT_REDUCTION = 16
ASPP_RATES = (6, 12, 18)
SPATIAL_KERNEL = 7


def _hidden(channels: int, reduction: int) -> int:
    if channels < 1:
        raise ValueError("channels must be >= 1")
    if reduction < 1 or channels % reduction:
        raise ValueError(f"reduction {reduction} must be >= 1 and divide channels {channels}")
    return channels // reduction


def _frozen(arr, shape, name):
    a = np.array(arr, dtype=np.float64)
    if a.shape != shape:
        raise ValueError(f"{name} has shape {a.shape}, expected {shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TwoLayerGate:
    """``FC2(relu(FC1(z)))`` shared by channel attention and SE excitation."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        w1 = np.asarray(self.w1)
        if w1.ndim != 2:
            raise ValueError("w1 must be 2-D")
        c, hid = w1.shape
        object.__setattr__(self, "w1", _frozen(self.w1, (c, hid), "w1"))
        object.__setattr__(self, "b1", _frozen(self.b1, (hid,), "b1"))
        object.__setattr__(self, "w2", _frozen(self.w2, (hid, c), "w2"))
        object.__setattr__(self, "b2", _frozen(self.b2, (c,), "b2"))

    @property
    def channels(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    @property
    def reduction(self) -> int:
        return self.channels // self.hidden

    @property
    def n_params(self) -> int:
        return self.w1.size + self.b1.size + self.w2.size + self.b2.size

    def mlp(self, z: np.ndarray) -> np.ndarray:
        return relu(z @ self.w1 + self.b1) @ self.w2 + self.b2

    @classmethod
    def zeros(cls, channels: int, reduction: int = DEFAULT_REDUCTION):
        hid = _hidden(channels, reduction)
        return cls(np.zeros((channels, hid)), np.zeros(hid),
                   np.zeros((hid, channels)), np.zeros(channels))

    @classmethod
    def random(cls, channels: int, reduction: int = DEFAULT_REDUCTION,
               rng: np.random.Generator | None = None, scale: float = 0.5):
        rng = np.random.default_rng() if rng is None else rng
        hid = _hidden(channels, reduction)
        return cls(rng.normal(0, scale, (channels, hid)), rng.normal(0, scale, hid),
                   rng.normal(0, scale, (hid, channels)), rng.normal(0, scale, channels))

    def _check(self, x: np.ndarray):
        if x.shape[1] != self.channels:
            raise ValueError(f"input has {x.shape[1]} channels, parameters expect {self.channels}")


class ChannelAttentionParams(TwoLayerGate):
    pass


class SEParams(TwoLayerGate):
    pass


@dataclass(frozen=True)
class SpatialAttentionParams:
    kernel: Kernel2D

    def __post_init__(self):
        k = self.kernel
        if k.weights.shape != (1, 2, SPATIAL_KERNEL, SPATIAL_KERNEL):
            raise ValueError(f"spatial attention kernel must be 1x2x7x7, got {k.weights.shape}")
        if k.bias is None:
            object.__setattr__(self, "kernel", Kernel2D(k.weights, np.zeros(1)))

    @property
    def n_params(self) -> int:
        return self.kernel.n_params

    @classmethod
    def zeros(cls):
        return cls(Kernel2D(np.zeros((1, 2, 7, 7)), np.zeros(1)))

    @classmethod
    def random(cls, rng: np.random.Generator | None = None, scale: float = 0.2):
        rng = np.random.default_rng() if rng is None else rng
        return cls(Kernel2D(rng.normal(0, scale, (1, 2, 7, 7)), rng.normal(0, scale, 1)))


@dataclass(frozen=True)
class ASPPParams:
    """Five parallel branches concatenated as (image, 1x1, rate 6, rate 12, rate 18)
    and projected by a final 1x1 convolution."""

    conv1x1: Kernel2D
    atrous: tuple
    image_pool: Kernel2D
    project: Kernel2D
    rates: tuple = ASPP_RATES

    def __post_init__(self):
        object.__setattr__(self, "atrous", tuple(self.atrous))
        object.__setattr__(self, "rates", tuple(int(r) for r in self.rates))
        if len(self.atrous) != len(self.rates):
            raise ValueError("need one atrous kernel per rate")
        c = self.conv1x1.in_channels
        width = self.conv1x1.out_channels
        if self.conv1x1.size != (1, 1) or self.image_pool.size != (1, 1):
            raise ValueError("1x1 and image-pool branches need 1x1 kernels")
        for k in (self.image_pool, *self.atrous):
            if k.in_channels != c or k.out_channels != width:
                raise ValueError("every branch must map the same channels to the same width")
        for k in self.atrous:
            if k.size != (3, 3):
                raise ValueError("atrous branches use 3x3 kernels")
        if self.project.size != (1, 1) or self.project.in_channels != width * (2 + len(self.atrous)):
            raise ValueError("projection must be 1x1 over the concatenated branches")

    @property
    def in_channels(self) -> int:
        return self.conv1x1.in_channels

    @property
    def branch_channels(self) -> int:
        return self.conv1x1.out_channels

    @property
    def out_channels(self) -> int:
        return self.project.out_channels

    @property
    def kernels(self) -> list[Kernel2D]:
        return [self.image_pool, self.conv1x1, *self.atrous, self.project]

    @property
    def n_params(self) -> int:
        return sum(k.n_params for k in self.kernels)

    @classmethod
    def random(cls, channels: int, rng: np.random.Generator | None = None,
               branch_channels: int | None = None, out_channels: int | None = None,
               scale: float = 0.3, bias: bool = True):
        rng = np.random.default_rng() if rng is None else rng
        cb = channels if branch_channels is None else branch_channels
        co = channels if out_channels is None else out_channels

        def make(o, i, k):
            b = rng.normal(0, scale, o) if bias else None
            return Kernel2D(rng.normal(0, scale, (o, i, k, k)), b)

        return cls(make(cb, channels, 1), tuple(make(cb, channels, 3) for _ in ASPP_RATES),
                   make(cb, channels, 1), make(co, 5 * cb, 1))


def channel_attention(x, p: ChannelAttentionParams) -> np.ndarray:
    """Channel weights ``sigmoid(MLP(avgpool) + MLP(maxpool))`` of shape (N, C, 1, 1)."""
    x = as_tensor(x)
    p._check(x)
    n, c = x.shape[:2]
    avg = global_avg_pool(x).reshape(n, c)
    mx = global_max_pool(x).reshape(n, c)
    return sigmoid(p.mlp(avg) + p.mlp(mx)).reshape(n, c, 1, 1)


def spatial_attention(x, p: SpatialAttentionParams) -> np.ndarray:
    """Spatial weights of shape (N, 1, H, W) from the channel-wise mean and max maps."""
    x = as_tensor(x)
    pooled = np.concatenate([x.mean(axis=1, keepdims=True), x.max(axis=1, keepdims=True)], axis=1)
    return sigmoid(conv2d(pooled, p.kernel, padding="same", pad_mode="zero"))


def cbam(x, cp: ChannelAttentionParams, sp: SpatialAttentionParams) -> np.ndarray:
    x = as_tensor(x)
    refined = channel_attention(x, cp) * x
    return spatial_attention(refined, sp) * refined


def se_block(u, p: SEParams) -> np.ndarray:
    u = as_tensor(u)
    p._check(u)
    n, c = u.shape[:2]
    squeezed = global_avg_pool(u).reshape(n, c)
    excitation = sigmoid(p.mlp(squeezed))
    return u * excitation.reshape(n, c, 1, 1)


def aspp_branches(a, p: ASPPParams) -> list[np.ndarray]:
    """Branch outputs at input resolution, in concatenation order."""
    a = as_tensor(a)
    if a.shape[1] != p.in_channels:
        raise ValueError(f"input has {a.shape[1]} channels, ASPP expects {p.in_channels}")
    h, w = a.shape[2:]
    pooled = conv2d(global_avg_pool(a), p.image_pool, padding="valid")
    out = [upsample_bilinear(pooled, h, w), conv2d(a, p.conv1x1, padding="same")]
    for k, rate in zip(p.atrous, p.rates):
        out.append(conv2d(a, k, dilation=rate, padding="same", pad_mode="zero"))
    return out


def aspp(a, p: ASPPParams) -> np.ndarray:
    return conv2d(np.concatenate(aspp_branches(a, p), axis=1), p.project, padding="valid")


def as_se(a, se: SEParams, aspp_p: ASPPParams) -> np.ndarray:
    """SE channel reweighting followed by ASPP."""
    return aspp(se_block(a, se), aspp_p)
