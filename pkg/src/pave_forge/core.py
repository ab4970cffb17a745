"""Tensor primitives: dilated convolution, pooling, activations, resampling.

Tensors are plain ``numpy`` arrays of shape ``(N, C, H, W)`` holding float64.
Everything here is a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

PAD_MODES = ("zero", "reflect")


def as_tensor(x, name: str = "input") -> np.ndarray:
    """Validate and return ``x`` as a finite float64 rank-4 array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 4:
        raise ValueError(f"{name} must be rank-4 (N, C, H, W), got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ValueError(f"{name} has an empty dimension: {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


@dataclass(frozen=True)
class Kernel2D:
    """Convolution weights laid out as (out_channels, in_channels, kH, kW)."""

    weights: np.ndarray
    bias: Optional[np.ndarray] = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim == 2:
            w = w[None, None]
        if w.ndim != 4:
            raise ValueError(f"kernel weights must be rank-4, got shape {w.shape}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if self.bias is not None:
            b = np.asarray(self.bias, dtype=np.float64).reshape(-1)
            if b.shape[0] != w.shape[0]:
                raise ValueError(
                    f"bias length {b.shape[0]} != out_channels {w.shape[0]}")
            b.setflags(write=False)
            object.__setattr__(self, "bias", b)

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def size(self) -> tuple[int, int]:
        return self.weights.shape[2], self.weights.shape[3]

    @property
    def n_params(self) -> int:
        return self.weights.size + (0 if self.bias is None else self.bias.size)

    def dilated(self, rate: int) -> "Kernel2D":
        """Return the equivalent dense kernel with ``rate - 1`` zeros between taps."""
        if rate < 1:
            raise ValueError("dilation rate must be >= 1")
        o, i, kh, kw = self.weights.shape
        w = np.zeros((o, i, (kh - 1) * rate + 1, (kw - 1) * rate + 1))
        w[:, :, ::rate, ::rate] = self.weights
        return Kernel2D(w, self.bias)


def _pad_amounts(padding, eff: int) -> tuple[int, int]:
    if padding == "same":
        total = eff - 1
        return total // 2, total - total // 2
    if padding == "valid":
        return 0, 0
    if isinstance(padding, (int, np.integer)) and padding >= 0:
        return int(padding), int(padding)
    raise ValueError(f"padding must be 'same', 'valid' or a non-negative int, got {padding!r}")


def pad_planes(x: np.ndarray, pads: tuple[tuple[int, int], tuple[int, int]],
               mode: str) -> np.ndarray:
    """Pad the last two axes. ``reflect`` mirrors without repeating the edge."""
    if mode not in PAD_MODES:
        raise ValueError(f"pad mode must be one of {PAD_MODES}, got {mode!r}")
    width = [(0, 0)] * (x.ndim - 2) + list(pads)
    if mode == "zero":
        return np.pad(x, width, mode="constant")
    (top, bottom), (left, right) = pads
    if (x.shape[-2] == 1 and top + bottom) or (x.shape[-1] == 1 and left + right):
        raise ValueError("reflect padding needs at least 2 samples along a padded axis")
    return np.pad(x, width, mode="reflect")


def conv2d(x, kernel: Kernel2D, dilation: int = 1, stride: int = 1,
           padding: Union[str, int] = "same", pad_mode: str = "zero") -> np.ndarray:
    """Dilated 2-D cross-correlation, ``out[i] = sum_k x[i + dilation*k] * w[k]``.

    ``padding="same"`` pads ``eff - 1`` in total (extra sample after) where
    ``eff = k + (k - 1)(dilation - 1)``; with ``stride=1`` this keeps H and W.
    """
    x = as_tensor(x)
    if dilation < 1 or stride < 1:
        raise ValueError("dilation and stride must be >= 1")
    n, c, h, w = x.shape
    if c != kernel.in_channels:
        raise ValueError(
            f"input has {c} channels but kernel expects {kernel.in_channels}")
    kh, kw = kernel.size
    eh = kh + (kh - 1) * (dilation - 1)
    ew = kw + (kw - 1) * (dilation - 1)
    xp = pad_planes(x, (_pad_amounts(padding, eh), _pad_amounts(padding, ew)), pad_mode)
    hp, wp = xp.shape[-2:]
    if eh > hp or ew > wp:
        raise ValueError(
            f"effective kernel {eh}x{ew} is larger than padded input {hp}x{wp}")
    ho = (hp - eh) // stride + 1
    wo = (wp - ew) // stride + 1
    out = np.zeros((n, kernel.out_channels, ho, wo))
    for i in range(kh):
        r0 = i * dilation
        for j in range(kw):
            c0 = j * dilation
            patch = xp[:, :, r0:r0 + (ho - 1) * stride + 1:stride,
                       c0:c0 + (wo - 1) * stride + 1:stride]
            out += np.einsum("nchw,oc->nohw", patch, kernel.weights[:, :, i, j])
    if kernel.bias is not None:
        out += kernel.bias[None, :, None, None]
    return out


def global_avg_pool(x) -> np.ndarray:
    x = as_tensor(x)
    return x.mean(axis=(2, 3), keepdims=True)


def global_max_pool(x) -> np.ndarray:
    x = as_tensor(x)
    return x.max(axis=(2, 3), keepdims=True)


def sigmoid(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def relu(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def activate(x, kind: str) -> np.ndarray:
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "relu":
        return relu(x)
    raise ValueError(f"unknown activation {kind!r}")


def _bilinear_axis(n_in: int, n_out: int):
    # half-pixel centres, source coordinate clamped to the valid range
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize over the first two axes (align_corners disabled)."""
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be >= 1")
    img = np.asarray(img, dtype=np.float64)
    r0, r1, fr = _bilinear_axis(img.shape[0], out_h)
    c0, c1, fc = _bilinear_axis(img.shape[1], out_w)
    extra = (None,) * (img.ndim - 2)
    fr = fr[(slice(None), None) + extra]
    fc = fc[(None, slice(None)) + extra]
    top = img[r0][:, c0] * (1 - fc) + img[r0][:, c1] * fc
    bot = img[r1][:, c0] * (1 - fc) + img[r1][:, c1] * fc
    return top * (1 - fr) + bot * fr


def upsample_bilinear(x, out_h: int, out_w: int) -> np.ndarray:
    x = as_tensor(x)
    moved = np.moveaxis(x, (2, 3), (0, 1))
    return np.moveaxis(resize_bilinear(moved, out_h, out_w), (0, 1), (2, 3))


def correlate_separable(img: np.ndarray, taps: np.ndarray, pad_mode: str = "reflect") -> np.ndarray:
    """Filter the first two axes of ``img`` with the outer product of ``taps``.

    ``taps`` must have odd length; the output keeps the input size.
    """
    img = np.asarray(img, dtype=np.float64)
    taps = np.asarray(taps, dtype=np.float64)
    if taps.ndim != 1 or taps.size % 2 == 0:
        raise ValueError("taps must be a 1-D array of odd length")
    r = taps.size // 2
    h, w = img.shape[:2]
    moved = np.moveaxis(img, (0, 1), (-2, -1))
    padded = pad_planes(moved, ((r, r), (0, 0)), pad_mode)
    rows = sum(t * padded[..., k:k + h, :] for k, t in enumerate(taps))
    padded = pad_planes(rows, ((0, 0), (r, r)), pad_mode)
    cols = sum(t * padded[..., :, k:k + w] for k, t in enumerate(taps))
    return np.moveaxis(cols, (-2, -1), (0, 1))
