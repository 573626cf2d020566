"""False-positive pruning: box-area filter, confidence filter, then NMS."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .detection import DetectionSet, Level
from .errors import ConfigError

DEFAULT_MAX_BOX_AREA = 35.0 * 35.0
DEFAULT_NMS_IOU = 0.7


def iou(a, b):
    """Intersection over union of two ``(cx, cy, w, h)`` boxes."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    iw = min(ax + aw / 2, bx + bw / 2) - max(ax - aw / 2, bx - bw / 2)
    ih = min(ay + ah / 2, by + bh / 2) - max(ay - ah / 2, by - bh / 2)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    return min(1.0, inter / union)


def iou_matrix(boxes_a, boxes_b):
    """Pairwise IoU between two arrays of ``(cx, cy, w, h)`` boxes."""
    a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    a_lo = a[:, None, :2] - a[:, None, 2:] / 2
    a_hi = a[:, None, :2] + a[:, None, 2:] / 2
    b_lo = b[None, :, :2] - b[None, :, 2:] / 2
    b_hi = b[None, :, :2] + b[None, :, 2:] / 2
    wh = np.clip(np.minimum(a_hi, b_hi) - np.maximum(a_lo, b_lo), 0, None)
    inter = wh[..., 0] * wh[..., 1]
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None, :] - inter
    return np.minimum(1.0, inter / union)


@dataclass
class PrunerConfig:
    """Thresholds for the three pruning filters.

    `confidence_thresholds` maps each detection level to its minimum
    confidence; levels absent from the map are an error at filter time.
    """
    max_box_area: float = DEFAULT_MAX_BOX_AREA
    confidence_thresholds: dict = field(default_factory=lambda: {lv: 0.0 for lv in Level})
    nms_iou: float = DEFAULT_NMS_IOU

    def __post_init__(self):
        if not self.max_box_area > 0:
            raise ConfigError('max_box_area must be positive')
        if not 0 < self.nms_iou < 1:
            raise ConfigError(f'nms_iou must lie in (0, 1), got {self.nms_iou}')
        thresholds = {}
        for key, value in dict(self.confidence_thresholds).items():
            value = float(value)
            if not 0 <= value <= 1:
                raise ConfigError(f'confidence threshold for {key} must lie in [0, 1]')
            thresholds[Level.parse(key)] = value
        self.confidence_thresholds = thresholds


def area_filter(dets: DetectionSet, max_area=DEFAULT_MAX_BOX_AREA) -> DetectionSet:
    """Drop boxes whose area ``w * h`` exceeds `max_area`."""
    if max_area is None or math.isinf(max_area):
        return dets.select(lambda d: True)
    return dets.select(lambda d: d.w * d.h <= max_area)


def confidence_filter(dets: DetectionSet, thresholds) -> DetectionSet:
    """Keep a detection iff its confidence reaches its level's threshold."""
    thresholds = {Level.parse(k): float(v) for k, v in thresholds.items()}
    missing = {d.level for d in dets} - set(thresholds)
    if missing:
        raise ConfigError(f'no confidence threshold for levels {sorted(m.value for m in missing)}')
    return dets.select(lambda d: d.confidence >= thresholds[d.level])


def nms_frame(dets, iou_threshold):
    """Greedy suppression within one frame; returns survivors in input order.

    Boxes are visited by descending confidence (stable on ties). A box is
    suppressed when its IoU with an already kept box is strictly greater
    than `iou_threshold`.
    """
    n = len(dets)
    if n < 2:
        return list(dets)
    conf = np.array([d.confidence for d in dets])
    order = np.argsort(-conf, kind='stable')
    ious = iou_matrix([d.box for d in dets], [d.box for d in dets])
    alive = np.ones(n, dtype=bool)
    keep = np.zeros(n, dtype=bool)
    for i in order:
        if not alive[i]:
            continue
        keep[i] = True
        alive &= ~(ious[i] > iou_threshold)
    return [d for d, k in zip(dets, keep) if k]


def nms(dets: DetectionSet, iou_threshold=DEFAULT_NMS_IOU) -> DetectionSet:
    """Per-frame greedy non-maximum suppression across all levels."""
    return dets.map_frames(lambda frame: nms_frame(frame, iou_threshold))


def prune(dets: DetectionSet, cfg: PrunerConfig, stages=None) -> DetectionSet:
    """Apply the area, confidence and NMS filters in that order.

    If `stages` is a dict, the intermediate sets are stored in it under
    ``'area'``, ``'confidence'`` and ``'nms'``.
    """
    after_area = area_filter(dets, cfg.max_box_area)
    after_conf = confidence_filter(after_area, cfg.confidence_thresholds)
    after_nms = nms(after_conf, cfg.nms_iou)
    if stages is not None:
        stages.update(area=after_area, confidence=after_conf, nms=after_nms)
    return after_nms
