"""Gaussian / Laplacian pyramids and multiband fusion.

Images are ``(H, W)`` or ``(H, W, C)`` float arrays; weight maps are ``(H, W)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from pave_forge.core import correlate_separable

BINOMIAL_TAPS = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
DEFAULT_LEVELS = 4
DEFAULT_SIGMA = 2.0


def pyr_down(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.shape[0] < 2 or img.shape[1] < 2:
        raise ValueError(f"pyr_down needs at least 2x2 input, got {img.shape[:2]}")
    return correlate_separable(img, BINOMIAL_TAPS, "reflect")[::2, ::2]


def pyr_up(image: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    if target_h not in (2 * h - 1, 2 * h) or target_w not in (2 * w - 1, 2 * w):
        raise ValueError(
            f"cannot upsample {h}x{w} to {target_h}x{target_w}; "
            "target must be 2n-1 or 2n along each axis")
    up = np.zeros((target_h, target_w) + img.shape[2:])
    up[::2, ::2] = img
    # reflect padding keeps the even/odd sample pattern, so 4x the binomial
    # kernel restores unit gain everywhere
    return correlate_separable(up, 2.0 * BINOMIAL_TAPS, "reflect")


@dataclass(frozen=True)
class GaussianPyramid:
    levels: tuple

    def __len__(self):
        return len(self.levels)


@dataclass(frozen=True)
class LaplacianPyramid:
    details: tuple
    top: np.ndarray

    def __len__(self):
        return len(self.details) + 1

    @property
    def shapes(self) -> list[tuple]:
        return [d.shape for d in self.details] + [self.top.shape]


def max_levels(h: int, w: int) -> int:
    """Largest level count whose coarsest level is still at least 2x2."""
    n = 1
    while math.ceil(h / 2) >= 2 and math.ceil(w / 2) >= 2:
        h, w = math.ceil(h / 2), math.ceil(w / 2)
        n += 1
    return n


def build_gaussian(image: np.ndarray, levels: int) -> GaussianPyramid:
    img = np.asarray(image, dtype=np.float64)
    if levels < 2:
        raise ValueError("a pyramid needs at least 2 levels")
    limit = max_levels(*img.shape[:2])
    if levels > limit:
        raise ValueError(
            f"{levels} levels is too many for a {img.shape[0]}x{img.shape[1]} image "
            f"(at most {limit})")
    out = [img]
    for _ in range(levels - 1):
        out.append(pyr_down(out[-1]))
    return GaussianPyramid(tuple(out))


def build_laplacian(image: np.ndarray, levels: int = DEFAULT_LEVELS) -> LaplacianPyramid:
    g = build_gaussian(image, levels).levels
    details = tuple(g[i] - pyr_up(g[i + 1], *g[i].shape[:2]) for i in range(levels - 1))
    return LaplacianPyramid(details, g[-1])


def collapse(lp: LaplacianPyramid) -> np.ndarray:
    cur = lp.top
    for detail in reversed(lp.details):
        cur = detail + pyr_up(cur, *detail.shape[:2])
    return cur


def make_weight_map(mask: np.ndarray, feather_sigma: float = DEFAULT_SIGMA) -> np.ndarray:
    """Feather a binary mask into a [0, 1] weight map with a truncated Gaussian."""
    if feather_sigma < 0:
        raise ValueError("feather_sigma must be >= 0")
    m = np.asarray(mask, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("mask must be 2-D")
    if feather_sigma == 0:
        return np.clip(m, 0.0, 1.0)
    radius = math.ceil(3.0 * feather_sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-x * x / (2.0 * feather_sigma ** 2))
    taps /= taps.sum()
    return np.clip(correlate_separable(m, taps, "reflect"), 0.0, 1.0)


def _expand(w: np.ndarray, like: np.ndarray) -> np.ndarray:
    return w[:, :, None] if like.ndim == 3 else w


def fuse(lp_a: LaplacianPyramid, lp_b: LaplacianPyramid, weight_a: np.ndarray,
         clamp: bool = True) -> np.ndarray:
    """Blend two pyramids with ``wA * lpA + (1 - wA) * lpB`` per level and collapse.

    The weight map is itself Gaussian-pyramided so each level sees a matching
    resolution of the weights.
    """
    if lp_a.shapes != lp_b.shapes:
        raise ValueError(f"pyramid shapes differ: {lp_a.shapes} vs {lp_b.shapes}")
    w = np.asarray(weight_a, dtype=np.float64)
    base = lp_a.shapes[0][:2]
    if w.shape != base:
        raise ValueError(f"weight map shape {w.shape} != image shape {base}")
    if w.min() < 0 or w.max() > 1:
        raise ValueError("weight map values must lie in [0, 1]")
    wp = build_gaussian(w, len(lp_a)).levels
    details = tuple(_expand(wi, la) * la + (1 - _expand(wi, lb)) * lb
                    for wi, la, lb in zip(wp, lp_a.details, lp_b.details))
    wt = _expand(wp[-1], lp_a.top)
    out = collapse(LaplacianPyramid(details, wt * lp_a.top + (1 - wt) * lp_b.top))
    return np.clip(out, 0.0, 1.0) if clamp else out


def blend_images(fg: np.ndarray, bg: np.ndarray, weight_fg: np.ndarray,
                 levels: int = DEFAULT_LEVELS, clamp: bool = True) -> np.ndarray:
    """Multiband-blend ``fg`` over ``bg`` (same shape) with per-pixel weights."""
    fg = np.asarray(fg, dtype=np.float64)
    bg = np.asarray(bg, dtype=np.float64)
    if fg.shape != bg.shape:
        raise ValueError(f"image shapes differ: {fg.shape} vs {bg.shape}")
    return fuse(build_laplacian(fg, levels), build_laplacian(bg, levels), weight_fg, clamp)
