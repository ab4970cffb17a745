"""Four-direction Scharr gradients and the salience / foreground-mask helpers."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from pave_forge.core import Kernel2D, conv2d

DIRECTIONS = (0, 45, 90, 135)

# max single-direction response magnitude used to normalize the score
RESPONSE_SCALE = 52.0
DEFAULT_THRESHOLD = 0.05
DEFAULT_QUANTILE = 0.90

_K0 = np.array([[-3.0, 0.0, 3.0],
                [-10.0, 0.0, 10.0],
                [-3.0, 0.0, 3.0]])
_K45 = np.array([[0.0, 3.0, 10.0],
                 [-3.0, 0.0, 3.0],
                 [-10.0, -3.0, 0.0]])


def scharr_kernels() -> dict[int, Kernel2D]:
    """Kernels keyed by direction in degrees."""
    return {
        0: Kernel2D(_K0),
        45: Kernel2D(_K45),
        90: Kernel2D(_K0.T),
        135: Kernel2D(np.rot90(_K45, -1)),
    }


@dataclass(frozen=True)
class GradientField:
    g0: np.ndarray
    g45: np.ndarray
    g90: np.ndarray
    g135: np.ndarray
    magnitude: np.ndarray

    @classmethod
    def from_planes(cls, g0, g45, g90, g135) -> "GradientField":
        planes = [np.asarray(p, dtype=np.float64) for p in (g0, g45, g90, g135)]
        if len({p.shape for p in planes}) != 1 or planes[0].ndim != 2:
            raise ValueError("gradient planes must be 2-D with identical shapes")
        mag = np.sqrt(sum(p * p for p in planes))
        return cls(*planes, mag)

    @property
    def shape(self) -> tuple[int, int]:
        return self.magnitude.shape

    def magnitude_2dir(self) -> np.ndarray:
        """Magnitude of the classic 0/90 degree Scharr pair."""
        return np.sqrt(self.g0 ** 2 + self.g90 ** 2)


@dataclass(frozen=True)
class SalienceReport:
    score: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.score >= self.threshold


@dataclass(frozen=True)
class FeatureMask:
    mask: np.ndarray
    # (x0, y0, x1, y1) in pixels, end-exclusive; None when nothing was found
    bbox: Optional[tuple[int, int, int, int]]

    @property
    def has_feature(self) -> bool:
        return self.bbox is not None


def compute_gradients(image: np.ndarray) -> GradientField:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    if img.ndim != 2:
        raise ValueError(
            f"compute_gradients needs a single-channel image, got shape {img.shape}; "
            "convert to grayscale first")
    if min(img.shape) < 3:
        raise ValueError("image must be at least 3x3")
    x = img[None, None]
    k = scharr_kernels()
    planes = [conv2d(x, k[d], padding="same", pad_mode="reflect")[0, 0] for d in DIRECTIONS]
    return GradientField.from_planes(*planes)


def salience_score(field: GradientField) -> float:
    return float(field.magnitude.mean() / (RESPONSE_SCALE * math.sqrt(2.0)))


def assess(image: np.ndarray, threshold: float = DEFAULT_THRESHOLD) -> SalienceReport:
    return SalienceReport(salience_score(compute_gradients(image)), threshold)


def extract_feature_mask(field: GradientField, quantile: float = DEFAULT_QUANTILE) -> FeatureMask:
    if not 0.0 < quantile < 1.0:
        raise ValueError(f"quantile must lie in (0, 1), got {quantile}")
    mag = field.magnitude
    if mag.size == 0:
        raise ValueError("empty gradient field")
    if not np.any(mag > 0):
        return FeatureMask(np.zeros(mag.shape, dtype=bool), None)
    # zero-gradient pixels never count, even when the quantile itself is 0
    mask = (mag >= np.quantile(mag, quantile)) & (mag > 0)
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    bbox = (int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)
    return FeatureMask(mask, bbox)
