"""Interpolated SORT tracker and track-length filter.

Each live tracklet carries a constant-velocity Kalman filter over
``[cx, cy, area, aspect, d(cx), d(cy), d(area)]``. Frame by frame, live
tracklets are predicted, matched to detections by Hungarian assignment on
``1 - IoU``, and updated. A tracklet that misses a frame records its Kalman
prediction as an interpolated state; once it has missed more than
``max_age`` consecutive frames it is closed and its trailing predictions
are dropped, so every track begins and ends on a detection.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigError, FormatError, LoadError, NumericalError
from .pruning import iou_matrix

# Defaults follow the original SORT tracker, with the noise on aspect
# ratio reduced because boxes here are fixed-shape.
MEASUREMENT_NOISE = (1.0, 1.0, 10.0, 0.01)
PROCESS_NOISE = (1.0, 1.0, 1.0, 0.01, 0.01, 0.01, 1e-4)
INITIAL_POSITION_VAR = 10.0
INITIAL_VELOCITY_VAR = 1000.0
MIN_AREA = 1.0

_F = np.eye(7)
_F[0, 4] = _F[1, 5] = _F[2, 6] = 1.0
_H = np.eye(4, 7)


@dataclass(frozen=True)
class KalmanState:
    mean: np.ndarray
    cov: np.ndarray

    @property
    def box(self):
        """``(cx, cy, w, h)`` implied by the state."""
        cx, cy, s, r = self.mean[:4]
        s = max(s, MIN_AREA)
        r = max(r, 1e-6)
        w = math.sqrt(s * r)
        return (float(cx), float(cy), w, s / w)


@dataclass(frozen=True)
class KalmanNoise:
    measurement: tuple = MEASUREMENT_NOISE
    process: tuple = PROCESS_NOISE
    initial_position_var: float = INITIAL_POSITION_VAR
    initial_velocity_var: float = INITIAL_VELOCITY_VAR


DEFAULT_NOISE = KalmanNoise()


def box_to_measurement(box):
    cx, cy, w, h = box
    return np.array([cx, cy, w * h, w / h], dtype=np.float64)


def kalman_init(det, noise: KalmanNoise = DEFAULT_NOISE) -> KalmanState:
    """State from a single detection (or box): zero velocity, broad velocity prior."""
    box = det.box if hasattr(det, 'box') else det
    mean = np.zeros(7)
    mean[:4] = box_to_measurement(box)
    cov = np.diag([noise.initial_position_var] * 4 + [noise.initial_velocity_var] * 3)
    return KalmanState(mean, cov)


def kalman_predict(state: KalmanState, noise: KalmanNoise = DEFAULT_NOISE) -> KalmanState:
    mean = _F @ state.mean
    if mean[2] < MIN_AREA:
        mean[2] = MIN_AREA
    cov = _F @ state.cov @ _F.T + np.diag(noise.process)
    cov = 0.5 * (cov + cov.T)
    return KalmanState(mean, cov)


def kalman_update(state: KalmanState, det, noise: KalmanNoise = DEFAULT_NOISE) -> KalmanState:
    """Linear-Gaussian measurement update with the Joseph-form covariance."""
    box = det.box if hasattr(det, 'box') else det
    z = box_to_measurement(box)
    R = np.diag(noise.measurement)
    S = _H @ state.cov @ _H.T + R
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise NumericalError('innovation covariance is not positive definite') from exc
    PHt = state.cov @ _H.T
    # K = P H^T S^-1 via two triangular solves
    K = np.linalg.solve(L.T, np.linalg.solve(L, PHt.T)).T
    innovation = z - _H @ state.mean
    mean = state.mean + K @ innovation
    IKH = np.eye(7) - K @ _H
    cov = IKH @ state.cov @ IKH.T + K @ R @ K.T
    cov = 0.5 * (cov + cov.T)
    return KalmanState(mean, cov)


def assign_min_cost(cost):
    """Minimum-cost assignment of a rectangular cost matrix.

    Returns ``(rows, cols)`` index arrays covering ``min(n, m)`` pairs.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.size == 0:
        return np.empty(0, dtype=int), np.empty(0, dtype=int)
    rows, cols = linear_sum_assignment(cost)
    return rows, cols


def associate_iou(ious, iou_threshold=0.3):
    """Match tracks (rows) to detections (columns) given their IoU matrix.

    The assignment minimizes total ``1 - IoU`` over the gated matrix, in
    which pairs with IoU below `iou_threshold` cost 1, the same as leaving
    both sides unmatched. Such pairs are released after the solve.

    Returns
    -------
    matches : list of (track_index, detection_index)
    unmatched_tracks, unmatched_detections : list of int
    """
    ious = np.asarray(ious, dtype=np.float64)
    n_t, n_d = ious.shape
    matches = []
    if n_t and n_d:
        gated = ious >= iou_threshold
        rows, cols = assign_min_cost(np.where(gated, 1.0 - ious, 1.0))
        matches = [(int(r), int(c)) for r, c in zip(rows, cols) if gated[r, c]]
    matched_t = {m[0] for m in matches}
    matched_d = {m[1] for m in matches}
    return (matches,
            [i for i in range(n_t) if i not in matched_t],
            [j for j in range(n_d) if j not in matched_d])


def associate(predicted, detections, iou_threshold=0.3):
    """Hungarian association of predicted track boxes with detection boxes."""
    predicted = [tuple(b) for b in predicted]
    detections = [tuple(d.box) if hasattr(d, 'box') else tuple(d) for d in detections]
    return associate_iou(iou_matrix(predicted, detections).reshape(len(predicted), len(detections)),
                         iou_threshold)


@dataclass
class TrackerConfig:
    max_age: int = 25
    iou_match_threshold: float = 0.3
    min_track_length: int = 60
    noise: KalmanNoise = DEFAULT_NOISE

    def __post_init__(self):
        if self.max_age < 0:
            raise ConfigError('max_age must be >= 0')
        if self.min_track_length < 1:
            raise ConfigError('min_track_length must be >= 1')
        if not 0 <= self.iou_match_threshold <= 1:
            raise ConfigError('iou_match_threshold must lie in [0, 1]')

    @classmethod
    def for_medium(cls, medium, **kwargs):
        """Defaults for a medium: 60-frame minimum in collagen, 30 in liquid."""
        length = 30 if str(medium).lower() in ('aqueous', 'liquid', 'water') else 60
        kwargs.setdefault('min_track_length', length)
        return cls(**kwargs)


@dataclass(frozen=True)
class TrackState:
    frame_idx: int
    cx: float
    cy: float
    w: float
    h: float
    interpolated: bool = False
    det_index: int | None = None

    @property
    def box(self):
        return (self.cx, self.cy, self.w, self.h)


@dataclass
class Tracklet:
    id: int
    states: list = field(default_factory=list)
    age_since_update: int = 0
    hits: int = 0
    hit_streak: int = 0

    def __len__(self):
        """Frames spanned, interpolated states included."""
        return len(self.states)

    @property
    def start(self):
        return self.states[0].frame_idx

    @property
    def end(self):
        return self.states[-1].frame_idx

    @property
    def detected_states(self):
        return [s for s in self.states if not s.interpolated]

    def positions(self):
        """Array of ``(frame, cx, cy)`` rows."""
        return np.array([(s.frame_idx, s.cx, s.cy) for s in self.states], dtype=np.float64)

    def trim(self):
        """Drop trailing interpolated states."""
        while self.states and self.states[-1].interpolated:
            self.states.pop()


class _Live:
    __slots__ = ('track', 'kf')

    def __init__(self, track, kf):
        self.track = track
        self.kf = kf


def track(dets, cfg: TrackerConfig | None = None, n_frames=None) -> list:
    """Run the interpolated SORT loop over a pruned DetectionSet.

    Returns every tracklet (closed and still live at the end), ordered by id.
    Ids are assigned in order of first appearance, detections within a frame
    in file order.
    """
    cfg = cfg or TrackerConfig()
    T = dets.n_frames if n_frames is None else int(n_frames)
    if T < 1:
        raise ConfigError('need at least one frame')
    noise = cfg.noise
    live = []
    done = []
    next_id = 0
    for t in range(T):
        frame_dets = dets.frame(t) if t < dets.n_frames else []
        for lt in live:
            lt.kf = kalman_predict(lt.kf, noise)
        predicted = [lt.kf.box for lt in live]
        matches, unmatched_t, unmatched_d = associate(
            predicted, [d.box for d in frame_dets], cfg.iou_match_threshold)
        for ti, di in matches:
            lt = live[ti]
            d = frame_dets[di]
            lt.kf = kalman_update(lt.kf, d, noise)
            tr = lt.track
            tr.states.append(TrackState(t, d.cx, d.cy, d.w, d.h, False, di))
            tr.age_since_update = 0
            tr.hits += 1
            tr.hit_streak += 1
        missed = set(unmatched_t)
        survivors = []
        for i, lt in enumerate(live):
            if i in missed:
                tr = lt.track
                tr.age_since_update += 1
                tr.hit_streak = 0
                if tr.age_since_update > cfg.max_age:
                    tr.trim()
                    done.append(tr)
                    continue
                cx, cy, w, h = predicted[i]
                tr.states.append(TrackState(t, cx, cy, w, h, True, None))
            survivors.append(lt)
        live = survivors
        for di in unmatched_d:
            d = frame_dets[di]
            tr = Tracklet(next_id, [TrackState(t, d.cx, d.cy, d.w, d.h, False, di)], 0, 1, 1)
            next_id += 1
            live.append(_Live(tr, kalman_init(d, noise)))
    for lt in live:
        lt.track.trim()
        done.append(lt.track)
    done.sort(key=lambda tr: tr.id)
    return done


def track_length_filter(tracks, min_len):
    """Keep tracklets spanning at least `min_len` frames."""
    if min_len < 1:
        raise ConfigError('min_len must be >= 1')
    return [tr for tr in tracks if len(tr) >= min_len]


TRACK_HEADER = ('track_id', 'frame', 'cx', 'cy', 'w', 'h', 'interpolated')


def write_tracks(path, tracks):
    with open(path, 'w', newline='') as fh:
        writer = csv.writer(fh, lineterminator='\n')
        writer.writerow(TRACK_HEADER)
        for tr in tracks:
            for s in tr.states:
                writer.writerow([tr.id, s.frame_idx, repr(float(s.cx)), repr(float(s.cy)),
                                 repr(float(s.w)), repr(float(s.h)), int(s.interpolated)])


def read_tracks(path):
    """Parse a track file back into Tracklets (ordered by id)."""
    try:
        fh = open(path, newline='')
    except OSError as exc:
        raise LoadError(f'cannot open track file {path}: {exc}') from exc
    by_id = {}
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        if tuple(h.strip() for h in header) != TRACK_HEADER:
            raise FormatError(f'bad header, expected {",".join(TRACK_HEADER)!r}', path, 1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(TRACK_HEADER):
                raise FormatError(f'expected {len(TRACK_HEADER)} fields, got {len(row)}',
                                  path, lineno)
            try:
                tid, frame = int(row[0]), int(row[1])
                cx, cy, w, h = (float(c) for c in row[2:6])
                interp = int(row[6])
            except ValueError as exc:
                raise FormatError(f'non-numeric field: {exc}', path, lineno) from None
            if interp not in (0, 1):
                raise FormatError('interpolated must be 0 or 1', path, lineno)
            tr = by_id.setdefault(tid, Tracklet(tid))
            if tr.states and frame != tr.states[-1].frame_idx + 1:
                raise FormatError(f'track {tid} frames are not contiguous', path, lineno)
            tr.states.append(TrackState(frame, cx, cy, w, h, bool(interp)))
    return [by_id[k] for k in sorted(by_id)]
