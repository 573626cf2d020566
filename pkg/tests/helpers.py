"""Oracles and builders shared by the test modules."""
import itertools

import numpy as np
from scipy import ndimage

from memtrack.detection import Detection, DetectionSet, Level
from memtrack.pruning import iou
from memtrack.tracking import Tracklet, TrackState


def textured_image(seed, size=128, sigma=3.0, pad=8):
    """Smooth random texture with values spread over most of 0..255.

    Returns a float image of shape (size + 2 * pad, size + 2 * pad) so callers
    can cut shifted windows out of it.
    """
    rng = np.random.default_rng(seed)
    n = size + 2 * pad
    tex = ndimage.gaussian_filter(rng.normal(size=(n, n)), sigma)
    tex = (tex - tex.min()) / (tex.max() - tex.min())
    return 20 + 215 * tex


def shifted_pair(seed, dx, dy, size=128, sigma=3.0):
    """Two uint8 frames where the second is the first moved by (dx, dy) pixels."""
    pad = 8
    tex = textured_image(seed, size, sigma, pad)
    prev = tex[pad:pad + size, pad:pad + size]
    nxt = tex[pad - dy:pad - dy + size, pad - dx:pad - dx + size]
    return np.rint(prev).astype(np.uint8), np.rint(nxt).astype(np.uint8)


def make_track(tid, frames, xy=None, interpolated=(), size=30.0):
    """Tracklet with one state per frame; positions default to a fixed point."""
    states = []
    for k, f in enumerate(frames):
        x, y = xy[k] if xy is not None else (100.0, 100.0)
        states.append(TrackState(int(f), float(x), float(y), size, size,
                                 int(f) in set(interpolated), None))
    return Tracklet(tid, states)


def greedy_nms_oracle(boxes, confs, thr):
    """Textbook greedy NMS written independently of the package.

    Repeatedly takes the highest-confidence remaining box (earliest on ties)
    and drops every remaining box overlapping it by more than `thr`.
    Returns the kept indices, sorted.
    """
    remaining = list(range(len(boxes)))
    kept = []
    while remaining:
        best = remaining[0]
        for i in remaining[1:]:
            if confs[i] > confs[best]:
                best = i
        kept.append(best)
        remaining = [i for i in remaining if i != best and iou(boxes[i], boxes[best]) <= thr]
    return sorted(kept)


def brute_force_assignment(cost):
    """Minimum total cost over every assignment of min(n, m) pairs."""
    cost = np.asarray(cost, dtype=float)
    n, m = cost.shape
    if n == 0 or m == 0:
        return 0.0
    best = np.inf
    if n <= m:
        for perm in itertools.permutations(range(m), n):
            best = min(best, sum(cost[i, perm[i]] for i in range(n)))
    else:
        for perm in itertools.permutations(range(n), m):
            best = min(best, sum(cost[perm[j], j] for j in range(m)))
    return best


def random_frame(rng, n, t=0, extent=100.0):
    """`n` random boxes on frame `t` with random confidences and levels."""
    levels = (Level.LOW, Level.MEDIUM, Level.HIGH)
    out = []
    for _ in range(n):
        out.append(Detection(t, float(rng.uniform(0, extent)), float(rng.uniform(0, extent)),
                             float(rng.uniform(5, 40)), float(rng.uniform(5, 40)),
                             float(np.round(rng.uniform(0, 1), 2)),
                             levels[rng.integers(3)]))
    return out


def detection_set(rows, n_frames=None, level=Level.BUILTIN):
    """DetectionSet from ``(frame, cx, cy, w, h, conf)`` tuples."""
    return DetectionSet.from_detections(
        [Detection(int(r[0]), *map(float, r[1:6]), level) for r in rows], n_frames)
