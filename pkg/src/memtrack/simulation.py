"""Ground-truthed synthetic scenes and a detector-noise model.

Agents swim by run-and-tumble (or, optionally, pure Brownian motion) over a
static cluttered background and are rendered as Gaussian blobs. All
randomness comes from numpy's counter-based Philox generator keyed by the
config seed and a fixed stream number, so results are reproducible across
platforms and independent of rendering order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .analytics import GroundTruth
from .detection import BUILTIN_BOX, Detection, DetectionSet, Level
from .errors import ConfigError
from .imaging import FrameSequence

_PATH_STREAM = 1
_START_STREAM = 2
_BACKGROUND_STREAM = 3
_PIXEL_NOISE_STREAM = 4
_DROPOUT_STREAM = 5
_CORRUPT_STREAM = 6

DETECTOR_LEVELS = (Level.LOW, Level.MEDIUM, Level.HIGH)


def rng_for(seed, stream, *extra):
    """Philox generator for one named stream of a seed."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), stream, *extra])))


@dataclass
class AgentSpec:
    """One swimmer.

    `speed` is in um/s and `tumble_rate` in 1/s. Setting `diffusivity`
    (um^2/s) switches the agent to Brownian motion and ignores speed and
    tumble rate. `start` is ``(x, y)`` in pixels; None draws it uniformly
    away from the walls.
    """
    speed: float = 10.0
    tumble_rate: float = 1.0
    dropout: float = 0.0
    start: tuple | None = None
    diffusivity: float | None = None
    level: Level = Level.MEDIUM
    contrast: float = 60.0
    sigma: float = 2.0

    def __post_init__(self):
        if self.speed < 0 or self.tumble_rate < 0:
            raise ConfigError('speed and tumble_rate must be >= 0')
        if not 0 <= self.dropout <= 1:
            raise ConfigError('dropout must lie in [0, 1]')
        if self.diffusivity is not None and self.diffusivity < 0:
            raise ConfigError('diffusivity must be >= 0')
        self.level = Level.parse(self.level)


@dataclass
class BackgroundSpec:
    """Static clutter: `density` blobs per 10,000 px^2 plus Gaussian pixel noise."""
    base: float = 110.0
    density: float = 4.0
    sigma_range: tuple = (1.5, 3.0)
    amplitude_range: tuple = (-40.0, 40.0)
    noise_sigma: float = 3.0

    def __post_init__(self):
        if self.density < 0 or self.noise_sigma < 0:
            raise ConfigError('background density and noise must be >= 0')


@dataclass
class DetectorNoise:
    """Error model of an imperfect detector.

    `miss` is one probability or a map from level to probability. Confidences
    of true and false positives are drawn from Beta distributions with the
    given ``(a, b)`` parameters.
    """
    miss: float | dict = 0.0
    fp_per_frame: float = 0.0
    jitter: float = 0.0
    tp_confidence: tuple = (8.0, 2.0)
    fp_confidence: tuple = (2.0, 8.0)
    box_size: float = BUILTIN_BOX

    def __post_init__(self):
        probs = self.miss.values() if isinstance(self.miss, dict) else [self.miss]
        if any(not 0 <= p <= 1 for p in probs):
            raise ConfigError('miss probabilities must lie in [0, 1]')
        if self.fp_per_frame < 0 or self.jitter < 0:
            raise ConfigError('fp_per_frame and jitter must be >= 0')
        for a, b in (self.tp_confidence, self.fp_confidence):
            if a <= 0 or b <= 0:
                raise ConfigError('Beta parameters must be positive')

    def miss_for(self, level):
        if isinstance(self.miss, dict):
            return float({Level.parse(k): v for k, v in self.miss.items()}.get(level, 0.0))
        return float(self.miss)


@dataclass
class SimConfig:
    height: int = 256
    width: int = 256
    n_frames: int = 120
    fps: float = 60.0
    pixel_scale: float = 0.5
    agents: list = field(default_factory=list)
    background: BackgroundSpec = field(default_factory=BackgroundSpec)
    noise: DetectorNoise = field(default_factory=DetectorNoise)
    medium: str = 'collagen'
    seed: int = 0

    def __post_init__(self):
        if self.n_frames < 1 or self.height < 1 or self.width < 1:
            raise ConfigError('scene needs at least one frame of at least 1x1 pixels')
        if self.fps <= 0 or self.pixel_scale <= 0:
            raise ConfigError('fps and pixel_scale must be positive')
        self.agents = [a if isinstance(a, AgentSpec) else AgentSpec(**a) for a in self.agents]
        if isinstance(self.background, dict):
            self.background = BackgroundSpec(**self.background)
        if isinstance(self.noise, dict):
            self.noise = DetectorNoise(**self.noise)


@dataclass
class SceneTruth:
    """Everything a simulation produced.

    Attributes
    ----------
    frames : ndarray (T, H, W) uint8
    paths : ndarray (n_agents, T, 2)
        True ``(x, y)`` pixel positions.
    visible : ndarray (n_agents, T) bool
        False where the agent dropped out of focus.
    background : ndarray (H, W) float
        Noise-free static background.
    """
    config: SimConfig
    frames: np.ndarray
    paths: np.ndarray
    visible: np.ndarray
    background: np.ndarray

    @property
    def n_frames(self):
        return self.frames.shape[0]

    def sequence(self):
        return FrameSequence(self.frames, self.config.fps, self.config.pixel_scale,
                             self.config.medium)

    def ground_truth(self):
        """Positions of every agent on the frames where it is visible."""
        tracks = {}
        for a in range(self.paths.shape[0]):
            idx = np.flatnonzero(self.visible[a])
            if idx.size:
                tracks[a] = np.column_stack([idx, self.paths[a, idx]])
        return GroundTruth(tracks)

    def ideal_detections(self, box_size=BUILTIN_BOX):
        """Perfect detections of visible agents; returns ``(DetectionSet, sources)``."""
        dets = DetectionSet(self.n_frames)
        sources = [[] for _ in range(self.n_frames)]
        for t in range(self.n_frames):
            for a, spec in enumerate(self.config.agents):
                if self.visible[a, t]:
                    x, y = self.paths[a, t]
                    dets.add(Detection(t, float(x), float(y), box_size, box_size, 1.0, spec.level))
                    sources[t].append(a)
        return dets, sources


def _reflect(pos, vel, lo, hi):
    for k in range(2):
        while pos[k] < lo[k] or pos[k] > hi[k]:
            if pos[k] < lo[k]:
                pos[k] = 2 * lo[k] - pos[k]
            else:
                pos[k] = 2 * hi[k] - pos[k]
            vel[k] = -vel[k]


def _run_and_tumble(spec, start, n_frames, fps, scale, lo, hi, rng):
    path = np.empty((n_frames, 2))
    pos = np.array(start, dtype=np.float64)
    theta = rng.uniform(0, 2 * math.pi)
    v = spec.speed / scale
    vel = np.array([v * math.cos(theta), v * math.sin(theta)])
    rate = spec.tumble_rate
    until_tumble = rng.exponential(1 / rate) if rate > 0 else math.inf
    dt = 1.0 / fps
    path[0] = pos
    for t in range(1, n_frames):
        remaining = dt
        while remaining > 0:
            step = min(remaining, until_tumble)
            pos += vel * step
            _reflect(pos, vel, lo, hi)
            remaining -= step
            until_tumble -= step
            if until_tumble <= 0:
                theta = rng.uniform(0, 2 * math.pi)
                vel = np.array([v * math.cos(theta), v * math.sin(theta)])
                until_tumble = rng.exponential(1 / rate)
        path[t] = pos
    return path


def _brownian(spec, start, n_frames, fps, scale, lo, hi, rng):
    sd = math.sqrt(2 * spec.diffusivity / fps) / scale
    steps = rng.normal(0.0, sd, size=(n_frames - 1, 2))
    path = np.empty((n_frames, 2))
    pos = np.array(start, dtype=np.float64)
    path[0] = pos
    dummy = np.zeros(2)
    for t in range(1, n_frames):
        pos += steps[t - 1]
        _reflect(pos, dummy, lo, hi)
        path[t] = pos
    return path


def _stamp(img, x, y, amplitude, sigma):
    """Add a Gaussian blob centred at ``(x, y)`` to `img` in place."""
    H, W = img.shape
    r = int(math.ceil(4 * sigma))
    x0, x1 = max(0, int(math.floor(x)) - r), min(W, int(math.floor(x)) + r + 2)
    y0, y1 = max(0, int(math.floor(y)) - r), min(H, int(math.floor(y)) + r + 2)
    if x0 >= x1 or y0 >= y1:
        return
    gx = np.exp(-0.5 * ((np.arange(x0, x1) - x) / sigma) ** 2)
    gy = np.exp(-0.5 * ((np.arange(y0, y1) - y) / sigma) ** 2)
    img[y0:y1, x0:x1] += amplitude * np.outer(gy, gx)


def render_background(cfg: SimConfig):
    bg = cfg.background
    H, W = cfg.height, cfg.width
    img = np.full((H, W), bg.base, dtype=np.float64)
    rng = rng_for(cfg.seed, _BACKGROUND_STREAM)
    n = rng.poisson(bg.density * H * W / 1e4) if bg.density > 0 else 0
    xs = rng.uniform(0, W, n)
    ys = rng.uniform(0, H, n)
    sig = rng.uniform(*bg.sigma_range, n)
    amp = rng.uniform(*bg.amplitude_range, n)
    for i in range(n):
        _stamp(img, xs[i], ys[i], amp[i], sig[i])
    return img


def simulate(cfg: SimConfig) -> SceneTruth:
    """Generate paths, visibility and rendered frames for `cfg`.

    Positions are integrated exactly between tumbles and sampled at
    ``t / fps``; walls at the frame border reflect.
    """
    T, H, W = cfg.n_frames, cfg.height, cfg.width
    lo = (0.0, 0.0)
    hi = (W - 1.0, H - 1.0)
    n_agents = len(cfg.agents)
    paths = np.zeros((n_agents, T, 2))
    visible = np.ones((n_agents, T), dtype=bool)
    start_rng = rng_for(cfg.seed, _START_STREAM)
    margin = min(H, W) * 0.1
    for a, spec in enumerate(cfg.agents):
        drawn = (start_rng.uniform(margin, W - 1 - margin), start_rng.uniform(margin, H - 1 - margin))
        start = spec.start if spec.start is not None else drawn
        rng = rng_for(cfg.seed, _PATH_STREAM, a)
        if spec.diffusivity is not None:
            paths[a] = _brownian(spec, start, T, cfg.fps, cfg.pixel_scale, lo, hi, rng)
        else:
            paths[a] = _run_and_tumble(spec, start, T, cfg.fps, cfg.pixel_scale, lo, hi, rng)
        if spec.dropout > 0:
            visible[a] = rng_for(cfg.seed, _DROPOUT_STREAM, a).random(T) >= spec.dropout

    background = render_background(cfg)
    frames = np.empty((T, H, W), dtype=np.uint8)
    noise_sigma = cfg.background.noise_sigma
    for t in range(T):
        img = background.copy()
        for a, spec in enumerate(cfg.agents):
            if visible[a, t]:
                _stamp(img, paths[a, t, 0], paths[a, t, 1], spec.contrast, spec.sigma)
        if noise_sigma > 0:
            img += rng_for(cfg.seed, _PIXEL_NOISE_STREAM, t).normal(0.0, noise_sigma, (H, W))
        frames[t] = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return SceneTruth(cfg, frames, paths, visible, background)


def corrupt_detections(truth: SceneTruth, noise: DetectorNoise | None = None, seed=None,
                       return_sources=False):
    """Degrade the ideal detections of `truth` with misses, jitter and false positives.

    Each frame lists surviving true detections in agent order followed by
    false positives. With `return_sources`, also returns per-frame lists of
    the agent index behind each detection (-1 for a false positive).
    """
    cfg = truth.config
    noise = noise or cfg.noise
    seed = cfg.seed if seed is None else seed
    rng = rng_for(seed, _CORRUPT_STREAM)
    H, W = cfg.height, cfg.width
    ideal, ideal_src = truth.ideal_detections(noise.box_size)
    out = DetectionSet(truth.n_frames)
    sources = [[] for _ in range(truth.n_frames)]
    for t in range(truth.n_frames):
        for d, a in zip(ideal.frame(t), ideal_src[t]):
            miss_u, jx, jy, conf = (rng.random(), rng.normal(), rng.normal(),
                                    rng.beta(*noise.tp_confidence))
            if miss_u < noise.miss_for(d.level):
                continue
            cx = min(max(d.cx + noise.jitter * jx, 0.0), W - 1.0)
            cy = min(max(d.cy + noise.jitter * jy, 0.0), H - 1.0)
            out.add(Detection(t, cx, cy, d.w, d.h, float(conf), d.level))
            sources[t].append(a)
        n_fp = rng.poisson(noise.fp_per_frame) if noise.fp_per_frame > 0 else 0
        for _ in range(n_fp):
            cx, cy = rng.uniform(0, W - 1), rng.uniform(0, H - 1)
            level = DETECTOR_LEVELS[rng.integers(len(DETECTOR_LEVELS))]
            conf = float(rng.beta(*noise.fp_confidence))
            out.add(Detection(t, cx, cy, noise.box_size, noise.box_size, conf, level))
            sources[t].append(-1)
    if return_sources:
        return out, sources
    return out


def expected_diffusivity(speed, tumble_rate):
    """Long-time diffusivity ``v^2 / (2 lambda)`` of 2-D run-and-tumble motion."""
    if tumble_rate <= 0:
        raise ConfigError('tumble_rate must be positive; ballistic motion has no finite diffusivity')
    return speed * speed / (2.0 * tumble_rate)
