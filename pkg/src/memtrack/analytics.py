"""Motility analytics and evaluation against ground truth.

Covers lag-dependent diffusivity and the four motility classes, population
speed, detection- and track-level matching, per-stage precision/recall/F1
reports and confidence-threshold calibration.
"""
from __future__ import annotations

import csv
import enum
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .detection import DetectionSet, Level
from .errors import ConfigError, FormatError, LoadError
from .pruning import area_filter, nms

DEFAULT_RADIUS = 15.0
DEFAULT_MAJORITY = 0.5
DEFAULT_WINDOW_SECONDS = 2.5
DEFAULT_MAX_LAG_SECONDS = 1.0
CALIBRATION_GRID = np.round(np.linspace(0.0, 1.0, 101), 2)
CRITERIA = ('max_precision', 'max_f1')

GT_HEADER = ('id', 'frame', 'x', 'y')


# ---------------------------------------------------------------- ground truth

class GroundTruth:
    """Annotated centroids: ``tracks[id]`` is an array of ``(frame, x, y)`` rows."""

    def __init__(self, tracks=None):
        self.tracks = {}
        for gid, rows in (tracks or {}).items():
            arr = np.asarray(rows, dtype=np.float64).reshape(-1, 3)
            if arr.shape[0] > 1 and np.any(np.diff(arr[:, 0]) <= 0):
                raise ConfigError(f'ground-truth frames for id {gid} must strictly increase')
            self.tracks[int(gid)] = arr
        self._by_frame = None

    @property
    def ids(self):
        return sorted(self.tracks)

    def __len__(self):
        return len(self.tracks)

    @property
    def n_frames(self):
        last = [int(a[-1, 0]) for a in self.tracks.values() if len(a)]
        return max(last) + 1 if last else 0

    def at_frame(self, t):
        """``(ids, xy)`` of every annotated object on frame `t`."""
        if self._by_frame is None:
            rows = {}
            for gid in self.ids:
                for f, x, y in self.tracks[gid]:
                    rows.setdefault(int(f), []).append((gid, x, y))
            self._by_frame = {
                f: (np.array([r[0] for r in v], dtype=int), np.array([r[1:] for r in v]))
                for f, v in rows.items()
            }
        return self._by_frame.get(int(t), (np.empty(0, dtype=int), np.empty((0, 2))))

    def __eq__(self, other):
        if not isinstance(other, GroundTruth):
            return NotImplemented
        return self.ids == other.ids and all(
            np.array_equal(self.tracks[i], other.tracks[i]) for i in self.ids)


def write_ground_truth(path, gt: GroundTruth):
    with open(path, 'w', newline='') as fh:
        writer = csv.writer(fh, lineterminator='\n')
        writer.writerow(GT_HEADER)
        for gid in gt.ids:
            for f, x, y in gt.tracks[gid]:
                writer.writerow([gid, int(f), repr(float(x)), repr(float(y))])


def read_ground_truth(path) -> GroundTruth:
    try:
        fh = open(path, newline='')
    except OSError as exc:
        raise LoadError(f'cannot open ground-truth file {path}: {exc}') from exc
    rows = {}
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return GroundTruth()
        if tuple(h.strip().lower() for h in header) != GT_HEADER:
            raise FormatError(f'bad header, expected {",".join(GT_HEADER)!r}', path, 1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise FormatError(f'expected 4 fields, got {len(row)}', path, lineno)
            try:
                gid, frame = int(row[0]), int(row[1])
                x, y = float(row[2]), float(row[3])
            except ValueError as exc:
                raise FormatError(f'non-numeric field: {exc}', path, lineno) from None
            rows.setdefault(gid, []).append((frame, x, y))
    tracks = {}
    for gid, r in rows.items():
        r.sort()
        frames = [f for f, _, _ in r]
        if len(set(frames)) != len(frames):
            raise FormatError(f'id {gid} has two rows for one frame', path)
        tracks[gid] = r
    return GroundTruth(tracks)


# ---------------------------------------------------------------- diffusivity

@dataclass(frozen=True)
class DiffusivityCurve:
    lags: np.ndarray      # seconds
    values: np.ndarray    # um^2/s

    @property
    def peak(self):
        return float(np.max(self.values))

    def plateau(self, tail=0.5):
        """Mean D over the last `tail` fraction of lags."""
        n = len(self.values)
        k = min(n - 1, int(math.floor(n * (1 - tail))))
        return float(np.mean(self.values[k:]))


def _as_positions(track):
    if hasattr(track, 'positions'):
        return track.positions()
    arr = np.asarray(track, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] < 3:
        raise ConfigError('positions must be rows of (frame, x, y)')
    return arr[:, :3]


def diffusivity_curve(positions, fps, pixel_scale, window_seconds=DEFAULT_WINDOW_SECONDS,
                      max_lag_seconds=DEFAULT_MAX_LAG_SECONDS) -> DiffusivityCurve:
    """Lag-dependent diffusivity of one track.

    For each lag ``tau = k / fps`` up to ``min(span, max_lag_seconds)``,
    ``D(tau)`` is the mean over start frames within the first
    `window_seconds` of the track of the squared displacement over `tau`,
    divided by ``4 tau``. Positions are ``(frame, x, y)`` rows in pixels;
    frames may have gaps, in which case only pairs with both ends present
    count. Lags with no such pair are omitted.
    """
    pos = _as_positions(positions)
    if len(pos) < 2:
        raise ConfigError('diffusivity needs a track spanning at least two frames')
    frames = np.rint(pos[:, 0]).astype(int)
    f0 = frames.min()
    span = frames.max() - f0
    xy = np.full((span + 1, 2), np.nan)
    xy[frames - f0] = pos[:, 1:3] * pixel_scale
    max_start = int(math.floor(window_seconds * fps + 1e-9))
    max_lag = min(span, int(math.floor(max_lag_seconds * fps + 1e-9)))
    lags, values = [], []
    for k in range(1, max_lag + 1):
        starts = xy[:min(max_start, span - k) + 1]
        ends = xy[k:k + len(starts)]
        sq = np.sum((ends - starts) ** 2, axis=1)
        sq = sq[~np.isnan(sq)]
        if sq.size:
            tau = k / fps
            lags.append(tau)
            values.append(float(np.mean(sq)) / (4.0 * tau))
    if not lags:
        raise ConfigError('no feasible lag for this track')
    return DiffusivityCurve(np.array(lags), np.array(values))


def population_curve(curves) -> DiffusivityCurve:
    """Lag-wise mean of several curves over the lags they have in common."""
    curves = list(curves)
    if not curves:
        raise ConfigError('no curves to average')
    common = set(np.round(curves[0].lags, 12))
    for c in curves[1:]:
        common &= set(np.round(c.lags, 12))
    if not common:
        raise ConfigError('curves share no lag')
    lags = np.array(sorted(common))
    vals = np.zeros(len(lags))
    for c in curves:
        lookup = dict(zip(np.round(c.lags, 12), c.values))
        vals += np.array([lookup[t] for t in lags])
    return DiffusivityCurve(lags, vals / len(curves))


class MotilityClass(str, enum.Enum):
    NONE = 'none'
    LOW = 'low'
    MEDIUM = 'medium'
    HIGH = 'high'

    def __str__(self):
        return self.value


MOTILITY_ORDER = (MotilityClass.NONE, MotilityClass.LOW, MotilityClass.MEDIUM, MotilityClass.HIGH)
MOTILITY_BOUNDS = (0.075, 0.25, 1.0)


def classify_motility(curve, bounds=MOTILITY_BOUNDS) -> MotilityClass:
    """Class from peak diffusivity: <=0.075 none, <=0.25 low, <=1 medium, else high."""
    peak = curve.peak if isinstance(curve, DiffusivityCurve) else float(curve)
    for cls, upper in zip(MOTILITY_ORDER, bounds):
        if peak <= upper:
            return cls
    return MotilityClass.HIGH


# ---------------------------------------------------------------- speed

def mean_speed(track, fps, pixel_scale):
    """Path length over time for one track, in um/s.

    Segments run from each detected state to the following state; segments
    that start on an interpolated state are skipped together with their
    duration. Bare ``(frame, x, y)`` arrays count as fully detected.
    """
    if hasattr(track, 'states'):
        pos = track.positions()
        detected = np.array([not s.interpolated for s in track.states])
    else:
        pos = _as_positions(track)
        detected = np.ones(len(pos), dtype=bool)
    if len(pos) < 2:
        raise ConfigError('speed needs at least two states')
    seg = np.diff(pos, axis=0)
    use = detected[:-1]
    if not np.any(use):
        raise ConfigError('no detected segment in track')
    length = np.hypot(seg[use, 1], seg[use, 2]).sum() * pixel_scale
    duration = seg[use, 0].sum() / fps
    return float(length / duration)


@dataclass(frozen=True)
class SpeedSummary:
    n: int
    mean: float
    sem: float


def summarize_speeds(speeds) -> SpeedSummary:
    s = np.asarray(list(speeds), dtype=np.float64)
    if s.size == 0:
        return SpeedSummary(0, float('nan'), float('nan'))
    sem = float(np.std(s, ddof=1) / math.sqrt(s.size)) if s.size > 1 else 0.0
    return SpeedSummary(int(s.size), float(s.mean()), sem)


def speed_comparison(tracks, gt: GroundTruth, fps, pixel_scale):
    """Population speed of annotated objects vs. of all output tracks.

    Tracks are compared irrespective of whether they match an annotation.
    Returns ``{'ground_truth': SpeedSummary, 'tracked': SpeedSummary}``.
    """
    gt_speeds = [mean_speed(gt.tracks[i], fps, pixel_scale) for i in gt.ids
                 if len(gt.tracks[i]) >= 2]
    tr_speeds = [mean_speed(tr, fps, pixel_scale) for tr in tracks if len(tr) >= 2]
    return {'ground_truth': summarize_speeds(gt_speeds), 'tracked': summarize_speeds(tr_speeds)}


# ---------------------------------------------------------------- metrics

def precision(tp, fp):
    return tp / (tp + fp) if tp + fp > 0 else 0.0


def recall(tp, fn):
    return tp / (tp + fn) if tp + fn > 0 else 0.0


def f1_score(p, r):
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


@dataclass(frozen=True)
class FrameMatch:
    pairs: list          # (detection index, gt id)
    false_positives: list  # detection indices
    false_negatives: list  # gt ids


@dataclass(frozen=True)
class DetectionMatch:
    frames: list

    @property
    def tp(self):
        return sum(len(f.pairs) for f in self.frames)

    @property
    def fp(self):
        return sum(len(f.false_positives) for f in self.frames)

    @property
    def fn(self):
        return sum(len(f.false_negatives) for f in self.frames)


def gated_assignment(dist, radius):
    """Maximum-cardinality, then minimum-distance, matching with ``dist <= radius``.

    Returns a list of ``(row, col)`` pairs.
    """
    dist = np.asarray(dist, dtype=np.float64)
    if dist.size == 0:
        return []
    ok = dist <= radius
    if not ok.any():
        return []
    big = (min(dist.shape) * radius + 1.0) * 2.0
    cost = np.where(ok, dist, big)
    rows, cols = linear_sum_assignment(cost)
    return [(int(r), int(c)) for r, c in zip(rows, cols) if ok[r, c]]


def match_frame(boxes_xy, gt_ids, gt_xy, radius):
    boxes_xy = np.asarray(boxes_xy, dtype=np.float64).reshape(-1, 2)
    gt_xy = np.asarray(gt_xy, dtype=np.float64).reshape(-1, 2)
    if len(boxes_xy) and len(gt_xy):
        dist = np.hypot(boxes_xy[:, None, 0] - gt_xy[None, :, 0],
                        boxes_xy[:, None, 1] - gt_xy[None, :, 1])
        pairs = gated_assignment(dist, radius)
    else:
        pairs = []
    used_d = {p[0] for p in pairs}
    used_g = {p[1] for p in pairs}
    return FrameMatch([(d, int(gt_ids[g])) for d, g in pairs],
                      [i for i in range(len(boxes_xy)) if i not in used_d],
                      [int(gt_ids[j]) for j in range(len(gt_xy)) if j not in used_g])


def match_detections(dets: DetectionSet, gt: GroundTruth, radius_px=DEFAULT_RADIUS) -> DetectionMatch:
    """Per-frame optimal matching of detection centres to annotated centroids.

    A pair counts only if the centres are within `radius_px`. Frames beyond
    the detection set's length still contribute their annotations as misses.
    """
    if not radius_px > 0:
        raise ConfigError('radius_px must be positive')
    n = max(dets.n_frames, gt.n_frames)
    frames = []
    for t in range(n):
        fd = dets.frame(t) if t < dets.n_frames else []
        ids, xy = gt.at_frame(t)
        frames.append(match_frame([(d.cx, d.cy) for d in fd], ids, xy, radius_px))
    return DetectionMatch(frames)


@dataclass
class TrackMatch:
    """Track-level evaluation.

    `assignment` maps every track id to the ground-truth id it was credited
    to, or None for a false-positive track.
    """
    assignment: dict
    n_gt: int

    @property
    def tp(self):
        return sum(1 for g in self.assignment.values() if g is not None)

    @property
    def fp(self):
        return sum(1 for g in self.assignment.values() if g is None)

    @property
    def recovered(self):
        return sorted({g for g in self.assignment.values() if g is not None})

    @property
    def fn(self):
        return self.n_gt - len(self.recovered)

    @property
    def precision(self):
        return precision(self.tp, self.fp)

    @property
    def recall(self):
        return recall(len(self.recovered), self.fn)


def majority_vote(votes, n_frames, majority):
    """Winning label if it holds at least `majority` of `n_frames`, else None.

    ``None`` entries in `votes` are abstentions; count ties go to the smaller label.
    """
    counts = Counter(v for v in votes if v is not None)
    if not counts or n_frames == 0:
        return None
    best = min(counts, key=lambda g: (-counts[g], g))
    return best if counts[best] >= majority * n_frames - 1e-12 else None


def match_tracks(tracks, gt: GroundTruth, radius_px=DEFAULT_RADIUS,
                 majority=DEFAULT_MAJORITY) -> TrackMatch:
    """Credit each track to the annotated object it follows most of the time.

    On every detected state the track votes for the nearest annotation within
    `radius_px` (no vote if none). A track is a true positive when one id
    collects at least `majority` of its detected frames. An id counts once
    toward recall however many tracks claim it.
    """
    if not 0.5 <= majority <= 1:
        raise ConfigError('majority must lie in [0.5, 1]')
    if not radius_px > 0:
        raise ConfigError('radius_px must be positive')
    assignment = {}
    for tr in tracks:
        states = [s for s in tr.states if not s.interpolated]
        votes = []
        for s in states:
            ids, xy = gt.at_frame(s.frame_idx)
            if len(ids) == 0:
                votes.append(None)
                continue
            d = np.hypot(xy[:, 0] - s.cx, xy[:, 1] - s.cy)
            order = np.lexsort((ids, d))
            j = order[0]
            votes.append(int(ids[j]) if d[j] <= radius_px else None)
        assignment[tr.id] = majority_vote(votes, len(states), majority)
    return TrackMatch(assignment, len(gt))


# ---------------------------------------------------------------- reports

@dataclass(frozen=True)
class StageMetrics:
    """Counts for one pipeline stage.

    For detection stages `tp_gt` equals `tp`. For track stages `tp` counts
    true-positive tracks (precision side) and `tp_gt` counts recovered
    annotated objects (recall side), so ``recall = tp_gt / (tp_gt + fn)``.
    """
    stage: str
    kind: str
    tp: int
    fp: int
    fn: int
    tp_gt: int

    @property
    def precision(self):
        return precision(self.tp, self.fp)

    @property
    def recall(self):
        return recall(self.tp_gt, self.fn)

    @property
    def f1(self):
        return f1_score(self.precision, self.recall)

    def as_dict(self):
        d = asdict(self)
        d.update(precision=self.precision, recall=self.recall, f1=self.f1)
        return d


@dataclass(frozen=True)
class MotilityRow:
    motility: str
    ground_truth: int
    true_positive: int

    @property
    def detected_fraction(self):
        return self.true_positive / self.ground_truth if self.ground_truth else 0.0


@dataclass
class EvalReport:
    stages: list
    motility: list = field(default_factory=list)
    speeds: dict = field(default_factory=dict)

    def stage(self, name):
        for s in self.stages:
            if s.stage == name:
                return s
        raise KeyError(name)

    def as_dict(self):
        return {
            'stages': [s.as_dict() for s in self.stages],
            'motility': [dict(asdict(m), detected_fraction=m.detected_fraction)
                         for m in self.motility],
            'speeds': {k: asdict(v) for k, v in self.speeds.items()},
        }

    def to_text(self):
        lines = [f'{"stage":<20}{"kind":<11}{"TP":>7}{"FP":>7}{"FN":>7}'
                 f'{"precision":>11}{"recall":>9}{"F1":>8}']
        for s in self.stages:
            lines.append(f'{s.stage:<20}{s.kind:<11}{s.tp:>7}{s.fp:>7}{s.fn:>7}'
                         f'{s.precision:>11.3f}{s.recall:>9.3f}{s.f1:>8.3f}')
        if self.motility:
            lines += ['', f'{"motility":<10}{"GT":>6}{"TP":>6}{"% detected":>12}']
            for m in self.motility:
                lines.append(f'{m.motility:<10}{m.ground_truth:>6}{m.true_positive:>6}'
                             f'{100 * m.detected_fraction:>12.0f}')
        if self.speeds:
            lines += ['', f'{"population":<14}{"N":>5}{"mean um/s":>11}{"SEM":>8}']
            for k, v in self.speeds.items():
                lines.append(f'{k:<14}{v.n:>5}{v.mean:>11.2f}{v.sem:>8.2f}')
        return '\n'.join(lines) + '\n'

    def write(self, directory, stem='report'):
        """Write ``<stem>.txt``, ``<stem>.json`` and ``<stem>_stages.csv``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / f'{stem}.txt').write_text(self.to_text())
        (directory / f'{stem}.json').write_text(json.dumps(self.as_dict(), indent=2, sort_keys=True) + '\n')
        with open(directory / f'{stem}_stages.csv', 'w', newline='') as fh:
            w = csv.writer(fh, lineterminator='\n')
            w.writerow(['stage', 'kind', 'tp', 'fp', 'fn', 'tp_gt', 'precision', 'recall', 'f1'])
            for s in self.stages:
                w.writerow([s.stage, s.kind, s.tp, s.fp, s.fn, s.tp_gt,
                            f'{s.precision:.6f}', f'{s.recall:.6f}', f'{s.f1:.6f}'])


def detection_stage(name, dets, gt, radius_px=DEFAULT_RADIUS):
    m = match_detections(dets, gt, radius_px)
    return StageMetrics(name, 'detection', m.tp, m.fp, m.fn, m.tp)


def track_stage(name, tracks, gt, radius_px=DEFAULT_RADIUS, majority=DEFAULT_MAJORITY):
    m = match_tracks(tracks, gt, radius_px, majority)
    return StageMetrics(name, 'track', m.tp, m.fp, m.fn, len(m.recovered))


def motility_table(tracks, gt, fps, pixel_scale, radius_px=DEFAULT_RADIUS,
                   majority=DEFAULT_MAJORITY, window_seconds=DEFAULT_WINDOW_SECONDS,
                   bounds=MOTILITY_BOUNDS):
    """Annotated and recovered object counts per motility class."""
    recovered = set(match_tracks(tracks, gt, radius_px, majority).recovered)
    gt_counts = Counter()
    tp_counts = Counter()
    for gid in gt.ids:
        pos = gt.tracks[gid]
        if len(pos) < 2:
            continue
        cls = classify_motility(diffusivity_curve(pos, fps, pixel_scale, window_seconds), bounds)
        gt_counts[cls] += 1
        if gid in recovered:
            tp_counts[cls] += 1
    return [MotilityRow(c.value, gt_counts[c], tp_counts[c]) for c in MOTILITY_ORDER]


def stage_report(intermediates, gt: GroundTruth, radius_px=DEFAULT_RADIUS,
                 majority=DEFAULT_MAJORITY, fps=None, pixel_scale=None,
                 window_seconds=DEFAULT_WINDOW_SECONDS, bounds=MOTILITY_BOUNDS) -> EvalReport:
    """Precision/recall/F1 at every stage of one pipeline run.

    `intermediates` is an ordered mapping from stage name to either a
    DetectionSet (scored per detection) or a list of tracks (scored per
    track). With `fps` and `pixel_scale`, the report also carries the
    per-motility detected fractions and the population-speed comparison,
    both taken from the last track stage.
    """
    stages = []
    last_tracks = None
    for name, value in intermediates.items():
        if isinstance(value, DetectionSet):
            stages.append(detection_stage(name, value, gt, radius_px))
        else:
            value = list(value)
            stages.append(track_stage(name, value, gt, radius_px, majority))
            last_tracks = value
    report = EvalReport(stages)
    if last_tracks is not None and fps and pixel_scale:
        report.motility = motility_table(last_tracks, gt, fps, pixel_scale, radius_px,
                                         majority, window_seconds, bounds)
        report.speeds = speed_comparison(last_tracks, gt, fps, pixel_scale)
    return report


def track_length_sweep(tracks, gt, lengths, radius_px=DEFAULT_RADIUS, majority=DEFAULT_MAJORITY):
    """Track-level metrics after filtering at each minimum length in `lengths`."""
    tracks = list(tracks)
    m = match_tracks(tracks, gt, radius_px, majority)
    rows = []
    for L in lengths:
        kept = [tr for tr in tracks if len(tr) >= L]
        sub = TrackMatch({tr.id: m.assignment[tr.id] for tr in kept}, m.n_gt)
        rows.append(StageMetrics(f'length>={L}', 'track', sub.tp, sub.fp, sub.fn,
                                 len(sub.recovered)))
    return rows


# ---------------------------------------------------------------- calibration

@dataclass
class CalibrationCurve:
    level: Level
    thresholds: np.ndarray
    precision: np.ndarray   # NaN where nothing survives
    recall: np.ndarray
    f1: np.ndarray
    n_detections: np.ndarray

    def rows(self):
        for i in range(len(self.thresholds)):
            yield (self.level.value, float(self.thresholds[i]), int(self.n_detections[i]),
                   float(self.precision[i]), float(self.recall[i]), float(self.f1[i]))


@dataclass
class CalibrationResult:
    curves: dict            # Level -> CalibrationCurve
    chosen: dict            # criterion -> {Level: threshold}

    def thresholds(self, criterion='max_precision'):
        return dict(self.chosen[criterion])

    def write_curves(self, path):
        with open(path, 'w', newline='') as fh:
            w = csv.writer(fh, lineterminator='\n')
            w.writerow(['level', 'threshold', 'n_detections', 'precision', 'recall', 'f1'])
            for lv in sorted(self.curves, key=lambda x: list(Level).index(x)):
                for row in self.curves[lv].rows():
                    w.writerow([row[0], f'{row[1]:.2f}', row[2]] + [f'{v:.6f}' for v in row[3:]])

    def write_chosen(self, path):
        data = {c: {lv.value: t for lv, t in sel.items()} for c, sel in self.chosen.items()}
        Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + '\n')


def pick_threshold(thresholds, scores):
    """Grid value maximizing `scores` (NaN ignored); ties go to the higher threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    valid = ~np.isnan(scores)
    if not valid.any():
        raise ConfigError('no threshold leaves any detection')
    best = np.max(scores[valid])
    idx = np.flatnonzero(valid & (scores == best))[-1]
    return float(thresholds[idx])


def calibrate_thresholds(dets_by_level, gt: GroundTruth, criterion=None,
                         max_box_area=35.0 * 35.0, nms_iou=0.7, radius_px=DEFAULT_RADIUS,
                         grid=CALIBRATION_GRID) -> CalibrationResult:
    """Sweep confidence thresholds per detector level on validation data.

    For each level and each grid threshold, the level's detections go
    through the area filter, the confidence cut and NMS, and are scored
    against `gt`. Both criteria are always evaluated; `criterion`, when
    given, is only validated. `gt` may also map each level to its own
    ground truth when the validation annotations are split by motility.
    """
    if criterion is not None and criterion not in CRITERIA:
        raise ConfigError(f'criterion must be one of {CRITERIA}')
    curves = {}
    chosen = {c: {} for c in CRITERIA}
    grid = np.asarray(grid, dtype=np.float64)
    for level, dets in dets_by_level.items():
        level = Level.parse(level)
        level_gt = gt.get(level, gt.get(level.value)) if isinstance(gt, dict) else gt
        if level_gt is None:
            raise ConfigError(f'no ground truth for level {level.value}')
        base = area_filter(dets, max_box_area)
        n = len(grid)
        prec = np.full(n, np.nan)
        rec = np.full(n, np.nan)
        f1 = np.full(n, np.nan)
        counts = np.zeros(n, dtype=int)
        for i, thr in enumerate(grid):
            kept = nms(base.select(lambda d, thr=thr: d.confidence >= thr), nms_iou)
            counts[i] = len(kept)
            if counts[i] == 0:
                continue
            m = match_detections(kept, level_gt, radius_px)
            prec[i] = precision(m.tp, m.fp)
            rec[i] = recall(m.tp, m.fn)
            f1[i] = f1_score(prec[i], rec[i])
        if not counts.any():
            raise ConfigError(f'level {level.value}: no detections at any threshold')
        curves[level] = CalibrationCurve(level, grid.copy(), prec, rec, f1, counts)
        chosen['max_precision'][level] = pick_threshold(grid, prec)
        chosen['max_f1'][level] = pick_threshold(grid, f1)
    return CalibrationResult(curves, chosen)
