"""Detection data model, detection-file I/O, level merging and a blob detector.

Detection files are comma-separated with the header
``frame,cx,cy,w,h,confidence``: one row per box, centre coordinates in
pixels, origin top-left, y pointing down. Files written after levels have
been merged carry an extra trailing ``level`` column so per-level
thresholds still apply downstream.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ConfigError, FormatError, LoadError

HEADER = ('frame', 'cx', 'cy', 'w', 'h', 'confidence')
BUILTIN_BOX = 30.0


class Level(str, enum.Enum):
    LOW = 'low'
    MEDIUM = 'medium'
    HIGH = 'high'
    BUILTIN = 'builtin'

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ConfigError(f'unknown detection level {value!r}; '
                              f'expected one of {[m.value for m in cls]}') from None

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class Detection:
    frame_idx: int
    cx: float
    cy: float
    w: float
    h: float
    confidence: float
    level: Level = Level.BUILTIN

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ConfigError(f'box size must be positive, got {self.w}x{self.h}')
        if not 0.0 <= self.confidence <= 1.0:
            raise ConfigError(f'confidence {self.confidence} outside [0, 1]')

    @property
    def box(self):
        """``(cx, cy, w, h)``."""
        return (self.cx, self.cy, self.w, self.h)

    @property
    def area(self):
        return self.w * self.h


class DetectionSet:
    """Per-frame lists of detections for one video of `n_frames` frames.

    The per-frame order is meaningful: it is the "file order" used to break
    confidence ties in NMS.
    """

    def __init__(self, n_frames, frames=None):
        if n_frames < 0:
            raise ConfigError('n_frames must be >= 0')
        self.n_frames = int(n_frames)
        self._frames = [[] for _ in range(self.n_frames)]
        if frames is not None:
            for t, dets in enumerate(frames):
                for d in dets:
                    self.add(d)

    @classmethod
    def from_detections(cls, detections, n_frames=None):
        detections = list(detections)
        if n_frames is None:
            n_frames = max((d.frame_idx for d in detections), default=-1) + 1
        out = cls(n_frames)
        for d in detections:
            out.add(d)
        return out

    def add(self, det: Detection):
        if not 0 <= det.frame_idx < self.n_frames:
            raise ConfigError(f'frame index {det.frame_idx} outside [0, {self.n_frames})')
        self._frames[det.frame_idx].append(det)

    def frame(self, t):
        return self._frames[t]

    def __iter__(self):
        for dets in self._frames:
            yield from dets

    def __len__(self):
        return sum(len(f) for f in self._frames)

    def __eq__(self, other):
        if not isinstance(other, DetectionSet):
            return NotImplemented
        return self.n_frames == other.n_frames and self._frames == other._frames

    def __repr__(self):
        return f'DetectionSet(n_frames={self.n_frames}, detections={len(self)})'

    @property
    def levels(self):
        return sorted({d.level for d in self}, key=lambda lv: list(Level).index(lv))

    def counts(self):
        return [len(f) for f in self._frames]

    def map_frames(self, fn):
        """New set with ``fn(list_of_detections)`` applied to every frame."""
        out = DetectionSet(self.n_frames)
        for t, dets in enumerate(self._frames):
            out._frames[t] = list(fn(dets))
        return out

    def select(self, keep):
        return self.map_frames(lambda dets: [d for d in dets if keep(d)])

    def with_n_frames(self, n_frames):
        out = DetectionSet(max(n_frames, self.n_frames))
        for t, dets in enumerate(self._frames):
            out._frames[t] = list(dets)
        return out


def _fmt(x):
    return repr(float(x))


def write_detections(path, dets: DetectionSet, include_level=None):
    """Write `dets` in the detection-file format.

    The ``level`` column is added when `include_level` is true, or, when it is
    None, whenever the set mixes more than one level.
    """
    if include_level is None:
        include_level = len(dets.levels) > 1
    header = HEADER + (('level',) if include_level else ())
    with open(path, 'w', newline='') as fh:
        writer = csv.writer(fh, lineterminator='\n')
        writer.writerow(header)
        for d in dets:
            row = [d.frame_idx, _fmt(d.cx), _fmt(d.cy), _fmt(d.w), _fmt(d.h), _fmt(d.confidence)]
            if include_level:
                row.append(d.level.value)
            writer.writerow(row)


def read_detections(path, level=Level.BUILTIN, n_frames=None) -> DetectionSet:
    """Parse a detection file, tagging every row with `level`.

    A trailing ``level`` column, when present, overrides `level` per row.
    `n_frames` fixes the video length; otherwise it is one past the largest
    frame index in the file.
    """
    level = Level.parse(level)
    path = Path(path)
    try:
        fh = open(path, newline='')
    except OSError as exc:
        raise LoadError(f'cannot open detection file {path}: {exc}') from exc
    detections = []
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return DetectionSet(n_frames or 0)
        header = tuple(h.strip() for h in header)
        if header not in (HEADER, HEADER + ('level',)):
            raise FormatError(f'bad header {",".join(header)!r}, expected {",".join(HEADER)!r}',
                              path, 1)
        has_level = len(header) == 7
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise FormatError(f'expected {len(header)} fields, got {len(row)}', path, lineno)
            try:
                frame = int(row[0])
                cx, cy, w, h, conf = (float(c) for c in row[1:6])
            except ValueError as exc:
                raise FormatError(f'non-numeric field: {exc}', path, lineno) from None
            if not all(math.isfinite(v) for v in (cx, cy, w, h, conf)):
                raise FormatError('non-finite value', path, lineno)
            if not 0.0 <= conf <= 1.0:
                raise FormatError(f'confidence {conf} outside [0, 1]', path, lineno)
            if w <= 0 or h <= 0:
                raise FormatError(f'non-positive box size {w}x{h}', path, lineno)
            if frame < 0 or (n_frames is not None and frame >= n_frames):
                raise FormatError(f'frame index {frame} out of range', path, lineno)
            try:
                lv = Level.parse(row[6]) if has_level else level
            except ConfigError as exc:
                raise FormatError(str(exc), path, lineno) from None
            detections.append(Detection(frame, cx, cy, w, h, conf, lv))
    return DetectionSet.from_detections(detections, n_frames)


def merge_levels(sets) -> DetectionSet:
    """Concatenate per-level detection sets frame by frame, keeping level tags.

    No deduplication happens here; overlapping boxes are left for NMS.
    """
    sets = list(sets)
    if not sets:
        return DetectionSet(0)
    n = max(s.n_frames for s in sets)
    out = DetectionSet(n)
    for s in sets:
        for t in range(s.n_frames):
            out._frames[t].extend(s.frame(t))
    return out


@dataclass(frozen=True)
class BlobParams:
    """Settings for the built-in median-deviation blob detector.

    `threshold` applies to the 8-bit median-deviation channel; areas are in
    pixels.
    """
    threshold: float = 60.0
    min_area: int = 4
    max_area: int = 400
    box_size: float = BUILTIN_BOX

    def __post_init__(self):
        if self.min_area > self.max_area:
            raise ConfigError(f'min_area {self.min_area} exceeds max_area {self.max_area}')
        if self.min_area < 1:
            raise ConfigError('min_area must be >= 1')
        if not 0 <= self.threshold <= 255:
            raise ConfigError('threshold must lie in [0, 255]')
        if self.box_size <= 0:
            raise ConfigError('box_size must be positive')


_EIGHT = np.ones((3, 3), dtype=bool)


def detect_frame(deviation, frame_idx, params: BlobParams):
    """Blob detections on one median-deviation channel."""
    deviation = np.asarray(deviation)
    mask = deviation > params.threshold
    labels, n = ndimage.label(mask, structure=_EIGHT)
    if n == 0:
        return []
    index = np.arange(1, n + 1)
    areas = ndimage.sum_labels(np.ones_like(labels), labels, index)
    values = deviation.astype(np.float64)
    means = ndimage.mean(values, labels, index)
    centroids = ndimage.center_of_mass(values, labels, index)
    out = []
    for area, mean, (cy, cx) in zip(areas, means, centroids):
        if params.min_area <= area <= params.max_area:
            conf = min(1.0, max(0.0, float(mean) / 255.0))
            out.append(Detection(frame_idx, float(cx), float(cy), params.box_size,
                                 params.box_size, conf, Level.BUILTIN))
    return out


def blob_detect(stacks, params: BlobParams | None = None) -> DetectionSet:
    """Threshold each frame's median-deviation channel and emit one box per blob.

    Components are 8-connected; the centre is the intensity-weighted centroid
    and the confidence is the component's mean channel value over 255.
    """
    params = params or BlobParams()
    stacks = list(stacks)
    if not stacks:
        raise ConfigError('blob_detect needs at least one feature stack')
    out = DetectionSet(len(stacks))
    for t, st in enumerate(stacks):
        for d in detect_frame(st.deviation, t, params):
            out.add(d)
    return out
