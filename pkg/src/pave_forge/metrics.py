"""Detection evaluation (matching, P/R/accuracy, AP, mAP) and block cost counting."""

from __future__ import annotations

import warnings
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Hashable, Optional, Sequence

import numpy as np

from pave_forge.attention import ASPP_RATES, DEFAULT_REDUCTION
from pave_forge.box_losses import Box, iou


class MetricWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Detection:
    image_id: Hashable
    class_id: int
    box: Box
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")


@dataclass(frozen=True)
class GroundTruth:
    image_id: Hashable
    class_id: int
    box: Box


@dataclass(frozen=True)
class MatchResult:
    """Per-detection outcome in input order plus the number of unmatched GTs."""

    is_tp: tuple
    matched_gt: tuple
    fn: int

    @property
    def tp(self) -> int:
        return sum(self.is_tp)

    @property
    def fp(self) -> int:
        return len(self.is_tp) - self.tp


def match_detections(dets: Sequence[Detection], gts: Sequence[GroundTruth],
                     iou_threshold: float = 0.5) -> MatchResult:
    """Greedy one-to-one matching within each (image, class).

    Detections are visited by descending confidence (input order breaks ties)
    and take the unmatched GT with the highest IoU (first GT breaks ties),
    provided that IoU reaches the threshold.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError("iou_threshold must lie in (0, 1)")
    gt_groups = defaultdict(list)
    for gi, g in enumerate(gts):
        gt_groups[(g.image_id, g.class_id)].append(gi)
    taken = [False] * len(gts)
    is_tp = [False] * len(dets)
    matched: list[Optional[int]] = [None] * len(dets)
    for di in sorted(range(len(dets)), key=lambda i: -dets[i].confidence):
        d = dets[di]
        best, best_iou = None, -1.0
        for gi in gt_groups.get((d.image_id, d.class_id), ()):
            if taken[gi]:
                continue
            v = iou(d.box, gts[gi].box)
            if v > best_iou:
                best, best_iou = gi, v
        if best is not None and best_iou >= iou_threshold:
            taken[best] = True
            is_tp[di] = True
            matched[di] = best
    return MatchResult(tuple(is_tp), tuple(matched), taken.count(False))


@dataclass(frozen=True)
class Rates:
    precision: float
    recall: float
    accuracy: Optional[float]
    warnings: tuple = ()


def precision_recall_accuracy(tp: int, fp: int, fn: int, tn: Optional[int] = None) -> Rates:
    """Zero denominators give 0 and add a message to ``warnings``."""
    if min(tp, fp, fn, tn or 0) < 0:
        raise ValueError("counts must be non-negative")
    notes = []

    def ratio(num, den, name):
        if den == 0:
            notes.append(f"{name} undefined (zero denominator); reported as 0")
            return 0.0
        return num / den

    p = ratio(tp, tp + fp, "precision")
    r = ratio(tp, tp + fn, "recall")
    acc = None if tn is None else ratio(tp + tn, tp + fp + fn + tn, "accuracy")
    return Rates(p, r, acc, tuple(notes))


def _pr_points(confidences: np.ndarray, is_tp: np.ndarray, n_gt: int):
    """Precision/recall at every distinct confidence cutoff, highest first."""
    order = np.argsort(-confidences, kind="stable")
    conf = confidences[order]
    hits = is_tp[order].astype(np.int64)
    ctp = np.cumsum(hits)
    cfp = np.cumsum(1 - hits)
    # one point per distinct threshold: the last index of each tie group
    last = np.flatnonzero(np.append(conf[1:] != conf[:-1], True))
    tp, fp = ctp[last], cfp[last]
    return tp / (tp + fp), tp / n_gt


def _ap_from_curve(precision: np.ndarray, recall: np.ndarray, interpolation: str) -> float:
    if interpolation == "all":
        mrec = np.concatenate([[0.0], recall, [1.0]])
        mpre = np.concatenate([[0.0], precision, [0.0]])
        mpre = np.maximum.accumulate(mpre[::-1])[::-1]
        steps = np.flatnonzero(mrec[1:] != mrec[:-1])
        return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))
    if interpolation == "11point":
        total = 0.0
        for t in np.linspace(0.0, 1.0, 11):
            above = precision[recall >= t]
            total += above.max() if above.size else 0.0
        return total / 11.0
    raise ValueError(f"unknown interpolation {interpolation!r}")


def average_precision(dets: Sequence[Detection], gts: Sequence[GroundTruth], class_id: int,
                      iou_threshold: float = 0.5, interpolation: str = "all",
                      match: Optional[MatchResult] = None) -> float:
    """Area under the precision envelope for one class; NaN if the class has no GT."""
    n_gt = sum(1 for g in gts if g.class_id == class_id)
    if n_gt == 0:
        warnings.warn(f"class {class_id} has no ground truth; AP undefined", MetricWarning,
                      stacklevel=2)
        return float("nan")
    if match is None:
        match = match_detections(dets, gts, iou_threshold)
    idx = [i for i, d in enumerate(dets) if d.class_id == class_id]
    if not idx:
        return 0.0
    conf = np.array([dets[i].confidence for i in idx])
    hits = np.array([match.is_tp[i] for i in idx])
    precision, recall = _pr_points(conf, hits, n_gt)
    return _ap_from_curve(precision, recall, interpolation)


def mean_average_precision(dets, gts, iou_threshold: float = 0.5,
                           interpolation: str = "all") -> tuple[float, dict]:
    """mAP over the classes present in the ground truth, plus per-class AP."""
    match = match_detections(dets, gts, iou_threshold)
    gt_classes = sorted({g.class_id for g in gts})
    for c in sorted({d.class_id for d in dets} - set(gt_classes)):
        warnings.warn(f"class {c} has detections but no ground truth; excluded from mAP",
                      MetricWarning, stacklevel=2)
    per_class = {c: average_precision(dets, gts, c, iou_threshold, interpolation, match)
                 for c in gt_classes}
    m = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return m, per_class


@dataclass
class EvalReport:
    ap: dict
    map: float
    precision: float
    recall: float
    accuracy: Optional[float]
    tp: int
    fp: int
    fn: int
    tn: Optional[int]
    iou_threshold: float
    interpolation: str
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ap"] = {str(k): v for k, v in self.ap.items()}
        if self.accuracy is None:
            del d["accuracy"]
        return d

    def to_text(self) -> str:
        lines = [f"mAP@{self.iou_threshold:g} ({self.interpolation}): {self.map:.6f}"]
        lines += [f"  AP[class {c}]: {v:.6f}" for c, v in self.ap.items()]
        lines.append(f"precision: {self.precision:.6f}")
        lines.append(f"recall: {self.recall:.6f}")
        if self.accuracy is not None:
            lines.append(f"accuracy: {self.accuracy:.6f}")
        counts = f"TP={self.tp} FP={self.fp} FN={self.fn}"
        if self.tn is not None:
            counts += f" TN={self.tn}"
        lines.append(counts)
        lines += [f"warning: {w}" for w in self.warnings]
        return "\n".join(lines)


def evaluate(dets: Sequence[Detection], gts: Sequence[GroundTruth], iou_threshold: float = 0.5,
             tn: Optional[int] = None, interpolation: str = "all") -> EvalReport:
    """Full report; accuracy only when the caller supplies a TN count."""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", MetricWarning)
        m, per_class = mean_average_precision(dets, gts, iou_threshold, interpolation)
    match = match_detections(dets, gts, iou_threshold)
    rates = precision_recall_accuracy(match.tp, match.fp, match.fn, tn)
    notes = [str(w.message) for w in caught] + list(rates.warnings)
    return EvalReport(per_class, m, rates.precision, rates.recall, rates.accuracy,
                      match.tp, match.fp, match.fn, tn, iou_threshold, interpolation, notes)


def _records(text: str, n_fields: int, what: str):
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != n_fields:
            raise ValueError(f"{what} line {lineno}: expected {n_fields} fields, got {len(parts)}")
        yield lineno, parts


def parse_detections(text: str) -> list[Detection]:
    """Lines of ``image_id class conf x1 y1 x2 y2``."""
    out = []
    for lineno, p in _records(text, 7, "detection"):
        try:
            out.append(Detection(p[0], int(p[1]), Box(*map(float, p[3:])), float(p[2])))
        except ValueError as exc:
            raise ValueError(f"detection line {lineno}: {exc}") from None
    return out


def parse_ground_truth(text: str) -> list[GroundTruth]:
    """Lines of ``image_id class x1 y1 x2 y2``."""
    out = []
    for lineno, p in _records(text, 6, "ground-truth"):
        try:
            out.append(GroundTruth(p[0], int(p[1]), Box(*map(float, p[2:]))))
        except ValueError as exc:
            raise ValueError(f"ground-truth line {lineno}: {exc}") from None
    return out


# ---------------------------------------------------------------------------
# parameter / FLOP counting

BLOCK_KINDS = ("cbam", "se", "aspp", "asse")


@dataclass(frozen=True)
class BlockCost:
    """FLOPs are 2 x multiply-accumulates for convolutions and FC layers plus one
    operation per element for pooling, activations, adds and rescaling."""

    params: int
    conv_flops: int
    fc_flops: int
    elementwise_flops: int

    @property
    def flops(self) -> int:
        return self.conv_flops + self.fc_flops + self.elementwise_flops


def _conv(cout, cin, k, hw):
    return 2 * cout * cin * k * k * hw


def _se_cost(c, hw, r):
    hid = c // r
    params = c * hid + hid + hid * c + c
    fc = 2 * c * hid * 2
    elem = c * hw + hid + c + c * hw  # pool, relu, sigmoid, rescale
    return BlockCost(params, 0, fc, elem)


def _cbam_cost(c, hw, r):
    hid = c // r
    params = 2 * c * hid + hid + c + 2 * 49 + 1
    fc = 2 * (2 * c * hid * 2)
    elem = 2 * c * hw + 2 * hid + c + c + c * hw  # two pools, relu, add, sigmoid, rescale
    conv = _conv(1, 2, 7, hw)
    elem += 2 * c * hw + hw + c * hw  # channel mean/max, sigmoid, rescale
    return BlockCost(params, conv, fc, elem)


def _aspp_cost(c, hw, cb, co):
    n_branch = 2 + len(ASPP_RATES)
    params = 2 * (cb * c + cb) + len(ASPP_RATES) * (cb * c * 9 + cb) + co * n_branch * cb + co
    conv = _conv(cb, c, 1, hw) + len(ASPP_RATES) * _conv(cb, c, 3, hw) + _conv(co, n_branch * cb, 1, hw)
    fc = 2 * cb * c  # image-pool 1x1 conv runs on a 1x1 map
    elem = c * hw + cb * hw  # global pool, upsample of the pooled branch
    return BlockCost(params, conv, fc, elem)


def count_params_flops(kind: str, channels: int, height: int, width: int, batch: int = 1,
                       reduction: int = DEFAULT_REDUCTION, branch_channels: Optional[int] = None,
                       out_channels: Optional[int] = None) -> BlockCost:
    """Exact parameter count (weights + biases) and FLOPs for one forward pass."""
    if min(channels, height, width, batch) < 1:
        raise ValueError(f"all dimensions must be >= 1, got C={channels} H={height} W={width} N={batch}")
    hw = height * width
    cb = channels if branch_channels is None else branch_channels
    co = channels if out_channels is None else out_channels
    if kind in ("cbam", "se", "asse") and (reduction < 1 or channels % reduction):
        raise ValueError(f"reduction {reduction} must divide channels {channels}")
    if kind == "se":
        cost = _se_cost(channels, hw, reduction)
    elif kind == "cbam":
        cost = _cbam_cost(channels, hw, reduction)
    elif kind == "aspp":
        cost = _aspp_cost(channels, hw, cb, co)
    elif kind == "asse":
        a, b = _se_cost(channels, hw, reduction), _aspp_cost(channels, hw, cb, co)
        cost = BlockCost(a.params + b.params, a.conv_flops + b.conv_flops,
                         a.fc_flops + b.fc_flops, a.elementwise_flops + b.elementwise_flops)
    else:
        raise ValueError(f"unknown block {kind!r}; expected one of {BLOCK_KINDS}")
    return BlockCost(cost.params, batch * cost.conv_flops, batch * cost.fc_flops,
                     batch * cost.elementwise_flops)


def peak_flops(cores: int, clock_hz: float, ops_per_cycle: float) -> float:
    """Hardware peak: cores x clock speed x operations per cycle."""
    return cores * clock_hz * ops_per_cycle
