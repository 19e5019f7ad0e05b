"""Saliency metrics (Acc, IoU, max F-beta) and CorLoc single-object localization."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._backend import kernels

N_THRESHOLDS = 255


class MetricUndefinedError(ValueError):
    """The metric has no value for this input (e.g. recall with an empty ground truth)."""


class EmptyPredictionError(ValueError):
    """No foreground pixel to localize."""


@dataclass(frozen=True)
class BBox:
    """Inclusive pixel box."""

    top: int
    left: int
    bottom: int
    right: int

    def __post_init__(self):
        if self.bottom < self.top or self.right < self.left:
            raise ValueError(f"invalid box {self}")

    @property
    def area(self) -> int:
        return (self.bottom - self.top + 1) * (self.right - self.left + 1)

    def as_list(self) -> list:
        return [self.top, self.left, self.bottom, self.right]


@dataclass
class SaliencyReport:
    acc: float
    iou: float
    max_f_beta: float | None
    curve: np.ndarray = field(repr=False)

    def as_dict(self) -> dict:
        return {"acc": self.acc, "iou": self.iou, "max_f_beta": self.max_f_beta}


def binarize(m, t: float = 0.5) -> np.ndarray:
    """Foreground where ``m > t`` (strict)."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {t}")
    return np.asarray(m) > t


def _pair(pred, gt):
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    return pred, gt


def pixel_accuracy(pred, gt) -> float:
    pred, gt = _pair(pred, gt)
    return float(np.mean(pred == gt))


def iou(pred, gt) -> float:
    """Intersection over union of two binary masks; 1.0 when both are empty."""
    pred, gt = _pair(pred, gt)
    union = np.count_nonzero(pred | gt)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred & gt) / union


def f_beta_curve(pred, gt, beta_sq: float = 0.3) -> np.ndarray:
    """F-beta at thresholds ``k / 255`` for ``k = 0..254``."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    n_pos = np.count_nonzero(gt)
    if n_pos == 0:
        raise MetricUndefinedError("ground truth is empty; recall is undefined")
    thresholds = np.arange(N_THRESHOLDS) / 255.0
    # number of predictions above each threshold, split by gt label
    pos_vals = np.sort(pred[gt])
    all_vals = np.sort(pred.ravel())
    tp = pos_vals.size - np.searchsorted(pos_vals, thresholds, side="right")
    n_pred = all_vals.size - np.searchsorted(all_vals, thresholds, side="right")
    precision = np.divide(tp, n_pred, out=np.zeros(N_THRESHOLDS), where=n_pred > 0)
    recall = tp / n_pos
    den = beta_sq * precision + recall
    return np.divide((1 + beta_sq) * precision * recall, den, out=np.zeros(N_THRESHOLDS), where=den > 0)


def max_f_beta(pred, gt, beta_sq: float = 0.3):
    """Maximum F-beta over the 255-threshold sweep; returns ``(max, curve)``."""
    curve = f_beta_curve(pred, gt, beta_sq)
    return float(curve.max()), curve


def saliency_report(pred, gt, threshold: float = 0.5, beta_sq: float = 0.3) -> SaliencyReport:
    gt_bin = np.asarray(gt) > 0.5
    pred_bin = binarize(pred, threshold)
    try:
        mf, curve = max_f_beta(pred, gt_bin, beta_sq)
    except MetricUndefinedError:
        mf, curve = None, np.full(N_THRESHOLDS, np.nan)
    return SaliencyReport(pixel_accuracy(pred_bin, gt_bin), iou(pred_bin, gt_bin), mf, curve)


def aggregate_reports(reports: Sequence[SaliencyReport]) -> dict:
    """Unweighted per-image means; images with undefined max F-beta are left out of that mean."""
    if not reports:
        raise ValueError("no reports to aggregate")
    fb = [r.max_f_beta for r in reports if r.max_f_beta is not None]
    if len(fb) < len(reports):
        warnings.warn(f"{len(reports) - len(fb)} image(s) with empty ground truth excluded "
                      "from the max F-beta mean", stacklevel=2)
    return {
        "acc": float(np.mean([r.acc for r in reports])),
        "iou": float(np.mean([r.iou for r in reports])),
        "max_f_beta": float(np.mean(fb)) if fb else None,
        "count": len(reports),
    }


# --------------------------------------------------------------------------
# localization


def connected_components(m):
    """8-connected labels (0 = background) numbered in raster order of first pixel."""
    m = np.ascontiguousarray(np.asarray(m, dtype=bool), dtype=np.uint8)
    labels, count = kernels.label8(m)
    return np.asarray(labels, dtype=np.int32), int(count)


def component_boxes(labels: np.ndarray, count: int) -> list[BBox]:
    boxes = []
    for lab in range(1, count + 1):
        rows, cols = np.nonzero(labels == lab)
        boxes.append(BBox(int(rows.min()), int(cols.min()), int(rows.max()), int(cols.max())))
    return boxes


def largest_bbox_component(m) -> BBox:
    """Box of the component with the largest box area (first component wins ties)."""
    labels, count = connected_components(m)
    if count == 0:
        raise EmptyPredictionError("mask has no foreground pixel")
    boxes = component_boxes(labels, count)
    best = boxes[0]
    for box in boxes[1:]:
        if box.area > best.area:
            best = box
    return best


def bbox_iou(a: BBox, b: BBox) -> float:
    ih = min(a.bottom, b.bottom) - max(a.top, b.top) + 1
    iw = min(a.right, b.right) - max(a.left, b.left) + 1
    if ih <= 0 or iw <= 0:
        return 0.0
    inter = ih * iw
    return inter / (a.area + b.area - inter)


def corloc_hit(pred, gt_boxes: Sequence[BBox], t_bin: float = 0.5, iou_thresh: float = 0.5):
    """``(hit, predicted_box, best_iou)`` for one image; empty predictions miss."""
    try:
        box = largest_bbox_component(binarize(pred, t_bin))
    except EmptyPredictionError:
        return False, None, 0.0
    best = max((bbox_iou(box, g) for g in gt_boxes), default=0.0)
    return best >= iou_thresh, box, best


def corloc(preds: Sequence, gt_boxes: Sequence[Sequence[BBox]], t_bin: float = 0.5) -> float:
    if len(preds) != len(gt_boxes):
        raise ValueError(f"{len(preds)} predictions but {len(gt_boxes)} box sets")
    if not preds:
        raise ValueError("corloc of an empty dataset")
    hits = sum(corloc_hit(p, g, t_bin)[0] for p, g in zip(preds, gt_boxes))
    return hits / len(preds)
