"""IoU, CIoU and EIoU box losses with analytic gradients w.r.t. the predicted box.

Gradients are ordered ``(d/dx1, d/dy1, d/dx2, d/dy2)``. At the kinks of the
min/max terms (equal edges) a one-sided derivative is returned; boxes that
only touch have zero intersection and take the gradient from the disjoint side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for name in ("x1", "y1", "x2", "y2"):
            object.__setattr__(self, name, float(getattr(self, name)))
        vals = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"box has non-finite coordinates: {vals}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"degenerate box {vals}: need x1 < x2 and y1 < y2")

    @classmethod
    def from_center(cls, cx, cy, w, h) -> "Box":
        return cls(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)

    @classmethod
    def parse(cls, text: str) -> "Box":
        parts = [float(p) for p in text.replace(",", " ").split()]
        if len(parts) != 4:
            raise ValueError(f"expected 4 coordinates, got {text!r}")
        return cls(*parts)

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.x1 + self.x2) / 2, (self.y1 + self.y2) / 2

    def astuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def shifted(self, dx: float, dy: float) -> "Box":
        return Box(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)

    def scaled(self, s: float) -> "Box":
        return Box(self.x1 * s, self.y1 * s, self.x2 * s, self.y2 * s)


@dataclass(frozen=True)
class LossValue:
    value: float
    gradient: np.ndarray


def iou(a: Box, b: Box) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


class _Terms:
    """Shared geometry of a (pred, gt) pair plus its partial derivatives."""

    def __init__(self, p: Box, g: Box):
        self.p, self.g = p, g
        # intersection
        iw = min(p.x2, g.x2) - max(p.x1, g.x1)
        ih = min(p.y2, g.y2) - max(p.y1, g.y1)
        if iw > 0 and ih > 0:
            inter = iw * ih
            d_iw = np.array([-float(p.x1 > g.x1), 0.0, float(p.x2 < g.x2), 0.0])
            d_ih = np.array([0.0, -float(p.y1 > g.y1), 0.0, float(p.y2 < g.y2)])
            d_inter = ih * d_iw + iw * d_ih
        else:
            inter, d_inter = 0.0, np.zeros(4)
        w, h = p.width, p.height
        d_w = np.array([-1.0, 0.0, 1.0, 0.0])
        d_h = np.array([0.0, -1.0, 0.0, 1.0])
        union = p.area + g.area - inter
        d_union = h * d_w + w * d_h - d_inter
        self.iou = inter / union
        self.d_iou = (d_inter * union - inter * d_union) / union ** 2

        # normalized centre distance rho^2 / c^2
        pcx, pcy = p.center
        gcx, gcy = g.center
        rho2 = (pcx - gcx) ** 2 + (pcy - gcy) ** 2
        d_rho2 = np.array([pcx - gcx, pcy - gcy, pcx - gcx, pcy - gcy])
        self.ew = max(p.x2, g.x2) - min(p.x1, g.x1)
        self.eh = max(p.y2, g.y2) - min(p.y1, g.y1)
        self.d_ew = np.array([-float(p.x1 < g.x1), 0.0, float(p.x2 > g.x2), 0.0])
        self.d_eh = np.array([0.0, -float(p.y1 < g.y1), 0.0, float(p.y2 > g.y2)])
        c2 = self.ew ** 2 + self.eh ** 2
        d_c2 = 2 * self.ew * self.d_ew + 2 * self.eh * self.d_eh
        self.dist = rho2 / c2
        self.d_dist = (d_rho2 * c2 - rho2 * d_c2) / c2 ** 2

        self.w, self.h, self.d_w, self.d_h = w, h, d_w, d_h


def iou_loss(pred: Box, gt: Box) -> LossValue:
    t = _Terms(pred, gt)
    return LossValue(1.0 - t.iou, -t.d_iou)


def aspect_term(pred: Box, gt: Box) -> float:
    """Aspect-ratio consistency ``4/pi^2 (atan(wg/hg) - atan(w/h))^2``."""
    diff = math.atan(gt.width / gt.height) - math.atan(pred.width / pred.height)
    return 4.0 / math.pi ** 2 * diff * diff


def ciou_alpha(pred: Box, gt: Box) -> float:
    v = aspect_term(pred, gt)
    denom = (1.0 - iou(pred, gt)) + v
    return v / denom if denom > 0 else 0.0


def ciou_loss(pred: Box, gt: Box, alpha: Optional[float] = None) -> LossValue:
    """``1 - IoU + rho^2/c^2 + alpha*V`` with alpha held constant in the gradient.

    Pass ``alpha`` to freeze it at a given value instead of computing it here.
    """
    t = _Terms(pred, gt)
    v = aspect_term(pred, gt)
    if alpha is None:
        alpha = ciou_alpha(pred, gt)
    diff = math.atan(gt.width / gt.height) - math.atan(t.w / t.h)
    r2 = t.w ** 2 + t.h ** 2
    # d atan(w/h) = (h dw - w dh) / (w^2 + h^2)
    d_v = -8.0 / math.pi ** 2 * diff * (t.h * t.d_w - t.w * t.d_h) / r2
    value = 1.0 - t.iou + t.dist + alpha * v
    return LossValue(value, -t.d_iou + t.d_dist + alpha * d_v)


def eiou_loss(pred: Box, gt: Box) -> LossValue:
    """``1 - IoU + rho^2/c^2 + (w - wg)^2/Cw^2 + (h - hg)^2/Ch^2``.

    ``Cw``/``Ch`` are the width and height of the smallest enclosing box.
    """
    t = _Terms(pred, gt)
    dw = t.w - gt.width
    dh = t.h - gt.height
    w_term = dw * dw / t.ew ** 2
    h_term = dh * dh / t.eh ** 2
    d_wterm = 2 * dw * t.d_w / t.ew ** 2 - 2 * dw * dw * t.d_ew / t.ew ** 3
    d_hterm = 2 * dh * t.d_h / t.eh ** 2 - 2 * dh * dh * t.d_eh / t.eh ** 3
    value = 1.0 - t.iou + t.dist + w_term + h_term
    return LossValue(value, -t.d_iou + t.d_dist + d_wterm + d_hterm)


LOSSES = {"iou": iou_loss, "ciou": ciou_loss, "eiou": eiou_loss}
