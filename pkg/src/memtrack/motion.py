"""Motion features: dense Lucas-Kanade flow and median deviation.

Every frame becomes a three-channel stack: raw intensity, optical-flow
magnitude from the previous frame, and the absolute deviation from the
per-pixel temporal median of the whole video.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError

DEFAULT_WINDOW = 15
MIN_EIGENVALUE = 1e-4
# Bytes of frame data handled per tile when taking the temporal median.
MEDIAN_TILE_BYTES = 1 << 24

CHANNEL_ORDER = ('intensity', 'flow_magnitude', 'median_deviation')


@dataclass(frozen=True)
class FlowField:
    """Per-pixel flow in pixels/frame.

    `well_conditioned` marks pixels whose structure tensor passed the
    eigenvalue test; the rest carry zero flow.
    """
    u: np.ndarray
    v: np.ndarray
    well_conditioned: np.ndarray | None = None

    @property
    def magnitude(self):
        return np.hypot(self.u, self.v)

    def __post_init__(self):
        if self.u.shape != self.v.shape:
            raise ConfigError('u and v must share a shape')


def _check_window(window):
    if int(window) != window or window < 3 or window % 2 == 0:
        raise ConfigError(f'window must be an odd integer >= 3, got {window}')
    return int(window)


def structure_tensor(prev, nxt, window=DEFAULT_WINDOW, smooth_sigma=0.0):
    """Window-averaged Lucas-Kanade sums for two frames.

    Intensities are scaled to [0, 1]. Spatial gradients are central differences
    of the mean of both frames; the temporal gradient is ``next - prev``.
    Returns ``(Sxx, Sxy, Syy, Sxt, Syt)`` as window means.
    """
    window = _check_window(window)
    a = np.asarray(prev, dtype=np.float32) * np.float32(1 / 255)
    b = np.asarray(nxt, dtype=np.float32) * np.float32(1 / 255)
    if a.shape != b.shape or a.ndim != 2:
        raise ConfigError(f'frames must be 2-D with equal shape, got {a.shape} and {b.shape}')
    if smooth_sigma > 0:
        a = ndimage.gaussian_filter(a, smooth_sigma)
        b = ndimage.gaussian_filter(b, smooth_sigma)
    mean = (a + b) * np.float32(0.5)
    iy, ix = np.gradient(mean)
    it = b - a

    def wmean(x):
        return ndimage.uniform_filter(x, size=window, mode='reflect')

    return wmean(ix * ix), wmean(ix * iy), wmean(iy * iy), wmean(ix * it), wmean(iy * it)


def lucas_kanade_flow(prev, nxt, window=DEFAULT_WINDOW, smooth_sigma=0.0,
                      min_eigenvalue=MIN_EIGENVALUE) -> FlowField:
    """Dense per-pixel Lucas-Kanade flow from `prev` to `nxt`.

    Solves the 2x2 least-squares system over a ``window x window``
    neighbourhood at every pixel. Pixels whose normalized structure tensor
    has smallest eigenvalue below `min_eigenvalue` get zero flow.

    Parameters
    ----------
    prev, nxt : ndarray, shape (H, W)
        Consecutive grayscale frames (0-255 scale).
    window : int
        Odd window side length.
    smooth_sigma : float
        Optional Gaussian pre-smoothing of both frames; 0 disables.

    Returns
    -------
    FlowField
        ``u``, ``v`` in pixels/frame (x right, y down).
    """
    sxx, sxy, syy, sxt, syt = structure_tensor(prev, nxt, window, smooth_sigma)
    trace = sxx + syy
    disc = np.sqrt((sxx - syy) ** 2 + 4 * sxy * sxy)
    lam_min = 0.5 * (trace - disc)
    ok = lam_min >= min_eigenvalue
    det = sxx * syy - sxy * sxy
    det = np.where(ok, det, 1)
    u = np.where(ok, (-syy * sxt + sxy * syt) / det, 0).astype(np.float64)
    v = np.where(ok, (sxy * sxt - sxx * syt) / det, 0).astype(np.float64)
    u[u == 0] = 0.0  # drop negative zeros
    v[v == 0] = 0.0
    return FlowField(u, v, ok)


def median_background(seq) -> np.ndarray:
    """Per-pixel temporal median over all frames (lower median for even T).

    Exact; pixels are processed in row tiles so memory stays near one tile
    times T.
    """
    frames = seq.frames if hasattr(seq, 'frames') else np.asarray(seq)
    if frames.ndim != 3 or frames.shape[0] == 0:
        raise ConfigError('median_background needs a non-empty (T, H, W) stack')
    T, H, W = frames.shape
    k = (T - 1) // 2
    rows = max(1, MEDIAN_TILE_BYTES // max(1, T * W * frames.itemsize))
    out = np.empty((H, W), dtype=frames.dtype)
    for r0 in range(0, H, rows):
        tile = np.array(frames[:, r0:r0 + rows, :])
        tile.partition(k, axis=0)
        out[r0:r0 + rows] = tile[k]
    return out


def median_deviation(frame, background) -> np.ndarray:
    """``|frame - background|`` per pixel, in the input's integer range."""
    frame = np.asarray(frame)
    background = np.asarray(background)
    if frame.shape != background.shape:
        raise ConfigError(f'shape mismatch {frame.shape} vs {background.shape}')
    diff = np.abs(frame.astype(np.int16) - background.astype(np.int16))
    if frame.dtype == np.uint8 and background.dtype == np.uint8:
        return diff.astype(np.uint8)
    return diff


@dataclass(frozen=True)
class FeatureStack:
    """Three 8-bit channels for one frame, see ``CHANNEL_ORDER``."""
    intensity: np.ndarray
    flow: np.ndarray
    deviation: np.ndarray

    def as_array(self):
        """Channels stacked as (3, H, W)."""
        return np.stack([self.intensity, self.flow, self.deviation])


def _rescale_to_u8(x, out):
    """Per-video affine map of `x` onto [0, 255], written into `out` chunkwise."""
    lo = float(x.min())
    hi = float(x.max())
    if hi <= lo:
        out[...] = 0
        return lo, hi
    scale = 255.0 / (hi - lo)
    for t in range(x.shape[0]):
        out[t] = np.rint((x[t].astype(np.float64) - lo) * scale).astype(np.uint8)
    return lo, hi


def flow_magnitudes(seq, window=DEFAULT_WINDOW, smooth_sigma=0.0) -> np.ndarray:
    """Flow magnitude for every frame (frame 0 is all zero), float32 (T, H, W)."""
    frames = seq.frames
    mags = np.zeros(frames.shape, dtype=np.float32)
    for t in range(1, frames.shape[0]):
        mags[t] = lucas_kanade_flow(frames[t - 1], frames[t], window, smooth_sigma).magnitude
    return mags


def build_feature_stack(seq, window=DEFAULT_WINDOW, smooth_sigma=0.0) -> list[FeatureStack]:
    """Motion-enhanced three-channel stacks, one per frame.

    Channel 1 and channel 2 are each rescaled to [0, 255] by a single min-max
    map over the whole video; a channel with zero range is all zero.
    """
    window = _check_window(window)
    frames = seq.frames
    if frames.shape[0] < 2:
        raise ConfigError('at least two frames are needed to compute flow')
    mags = flow_magnitudes(seq, window, smooth_sigma)
    flow_u8 = np.empty(frames.shape, dtype=np.uint8)
    _rescale_to_u8(mags, flow_u8)
    del mags

    background = median_background(seq)
    dev = np.empty(frames.shape, dtype=np.uint8)
    for t in range(frames.shape[0]):
        dev[t] = median_deviation(frames[t], background)
    _rescale_to_u8(dev, dev)

    for arr in (flow_u8, dev):
        arr.flags.writeable = False
    return [FeatureStack(frames[t], flow_u8[t], dev[t]) for t in range(frames.shape[0])]
