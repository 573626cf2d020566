"""Image-sequence loading, writing and cropping.

A sequence on disk is a directory of numbered 8-bit grayscale PNG files plus a
manifest, a small ``key: value`` text file::

    dir: frames
    pattern: frame_%05d.png
    fps: 60
    pixel_scale_um: 0.5
    medium: collagen

``dir`` is resolved relative to the manifest's own directory.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from PIL import Image

from .errors import ConfigError, LoadError

logger = logging.getLogger(__name__)

MANIFEST_KEYS = ('dir', 'pattern', 'fps', 'pixel_scale_um', 'medium')


@dataclass(frozen=True)
class FrameSequence:
    """Immutable stack of grayscale frames with acquisition metadata.

    Parameters
    ----------
    frames : ndarray, shape (T, H, W), uint8
    fps : float
        Acquisition rate in Hz.
    pixel_scale : float
        Micrometers per pixel.
    medium_tag : str
        Free-form label such as ``"collagen"`` or ``"aqueous"``.
    """
    frames: np.ndarray
    fps: float
    pixel_scale: float
    medium_tag: str = ''

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 3:
            raise ConfigError(f'frames must have shape (T, H, W), got {frames.shape}')
        if frames.dtype != np.uint8:
            if frames.size and (frames.min() < 0 or frames.max() > 255):
                raise ConfigError('frame values must lie in [0, 255]')
            frames = frames.astype(np.uint8)
        if not self.fps > 0:
            raise ConfigError(f'fps must be positive, got {self.fps}')
        if not self.pixel_scale > 0:
            raise ConfigError(f'pixel_scale must be positive, got {self.pixel_scale}')
        if frames.flags.writeable:
            frames = frames.copy()
            frames.flags.writeable = False
        object.__setattr__(self, 'frames', frames)
        object.__setattr__(self, 'fps', float(self.fps))
        object.__setattr__(self, 'pixel_scale', float(self.pixel_scale))

    def __len__(self):
        return self.frames.shape[0]

    def __getitem__(self, t):
        return self.frames[t]

    @property
    def shape(self):
        """(H, W) of every frame."""
        return self.frames.shape[1:]

    def with_frames(self, frames):
        return FrameSequence(frames, self.fps, self.pixel_scale, self.medium_tag)


@dataclass(frozen=True)
class SequenceManifest:
    directory: Path
    pattern: str
    fps: float
    pixel_scale: float
    medium_tag: str = ''
    source: Path | None = field(default=None, compare=False)


def read_manifest(path) -> SequenceManifest:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise LoadError(f'cannot read manifest {path}: {exc}') from exc
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f'{path}: manifest is not a key-value document: {exc}') from exc
    if not isinstance(data, dict):
        raise ConfigError(f'{path}: manifest is not a key-value document')
    missing = [k for k in ('dir', 'pattern', 'fps', 'pixel_scale_um') if k not in data]
    if missing:
        raise ConfigError(f'{path}: manifest missing keys {missing}')
    unknown = sorted(set(data) - set(MANIFEST_KEYS))
    if unknown:
        raise ConfigError(f'{path}: unknown manifest keys {unknown}')
    directory = Path(str(data['dir']))
    if not directory.is_absolute():
        directory = path.parent / directory
    try:
        fps = float(data['fps'])
        scale = float(data['pixel_scale_um'])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f'{path}: fps and pixel_scale_um must be numbers') from exc
    return SequenceManifest(directory, str(data['pattern']), fps, scale,
                            str(data.get('medium', '') or ''), source=path)


def write_manifest(path, manifest: SequenceManifest):
    path = Path(path)
    directory = manifest.directory
    try:
        directory = directory.relative_to(path.parent)
    except ValueError:
        pass
    lines = [
        f'dir: {directory.as_posix()}',
        f'pattern: {manifest.pattern}',
        f'fps: {manifest.fps!r}',
        f'pixel_scale_um: {manifest.pixel_scale!r}',
        f'medium: {manifest.medium_tag}',
    ]
    path.write_text('\n'.join(lines) + '\n')


def _pattern_regex(pattern):
    m = re.fullmatch(r'(.*?)%(0?\d*)d(.*)', pattern)
    if m is None or '%' in m.group(1) + m.group(3):
        raise ConfigError(f'pattern {pattern!r} needs exactly one integer placeholder like %05d')
    return re.compile(re.escape(m.group(1)) + r'(\d+)' + re.escape(m.group(3)) + r'\Z')


def _frame_paths(manifest):
    regex = _pattern_regex(manifest.pattern)
    if not manifest.directory.is_dir():
        raise LoadError(f'frame directory {manifest.directory} does not exist')
    found = {}
    for p in manifest.directory.iterdir():
        m = regex.match(p.name)
        if m:
            idx = int(m.group(1))
            if idx in found:
                raise LoadError(f'frames {found[idx].name} and {p.name} share index {idx}')
            found[idx] = p
    if not found:
        raise LoadError(f'no files match {manifest.pattern!r} in {manifest.directory}')
    paths = []
    for idx in range(max(found) + 1):
        if idx not in found:
            raise LoadError(f'missing frame {idx}: {manifest.directory / (manifest.pattern % idx)}')
        paths.append(found[idx])
    return paths


def to_luminance(arr):
    """Convert an RGB(A) or grayscale array to 8-bit luminance (Rec. 601 weights)."""
    arr = np.asarray(arr)
    if arr.ndim == 2:
        return arr.astype(np.uint8, copy=False)
    rgb = arr[..., :3].astype(np.float64)
    lum = rgb @ np.array([0.299, 0.587, 0.114])
    return np.clip(np.rint(lum), 0, 255).astype(np.uint8)


def _read_frame(path):
    try:
        with Image.open(path) as img:
            if img.mode in ('L', 'P', '1'):
                arr = np.asarray(img.convert('L'))
            elif img.mode in ('I;16', 'I', 'F'):
                raise LoadError(f'frame {path} is not 8-bit (mode {img.mode})')
            else:
                arr = to_luminance(np.asarray(img.convert('RGB')))
    except LoadError:
        raise
    except Exception as exc:
        raise LoadError(f'cannot read frame {path}: {exc}') from exc
    return arr


def load_sequence(manifest) -> FrameSequence:
    """Load every frame named by `manifest` into a FrameSequence.

    `manifest` may be a SequenceManifest or a path to a manifest file.
    Raises LoadError naming the offending frame on a missing file, an
    unreadable image, or a frame whose size differs from frame 0.
    """
    if not isinstance(manifest, SequenceManifest):
        manifest = read_manifest(manifest)
    paths = _frame_paths(manifest)
    first = _read_frame(paths[0])
    frames = np.empty((len(paths),) + first.shape, dtype=np.uint8)
    frames[0] = first
    for i, p in enumerate(paths[1:], start=1):
        arr = _read_frame(p)
        if arr.shape != first.shape:
            raise LoadError(f'frame {i} ({p.name}) has size {arr.shape[1]}x{arr.shape[0]}, '
                            f'expected {first.shape[1]}x{first.shape[0]}')
        frames[i] = arr
    logger.debug('loaded %d frames of %s from %s', len(paths), first.shape, manifest.directory)
    return FrameSequence(frames, manifest.fps, manifest.pixel_scale, manifest.medium_tag)


def write_sequence(seq: FrameSequence, manifest_path, frame_dir='frames',
                   pattern='frame_%05d.png') -> SequenceManifest:
    """Write `seq` as lossless PNG frames plus a manifest; return the manifest."""
    manifest_path = Path(manifest_path)
    directory = Path(frame_dir)
    if not directory.is_absolute():
        directory = manifest_path.parent / directory
    directory.mkdir(parents=True, exist_ok=True)
    _pattern_regex(pattern)
    for t, frame in enumerate(seq.frames):
        Image.fromarray(np.ascontiguousarray(frame)).save(directory / (pattern % t))
    manifest = SequenceManifest(directory, pattern, seq.fps, seq.pixel_scale, seq.medium_tag,
                                source=manifest_path)
    write_manifest(manifest_path, manifest)
    return manifest


def crop_roi(seq: FrameSequence, rect) -> FrameSequence:
    """Crop every frame to ``rect = (x, y, width, height)`` in pixels."""
    x, y, w, h = (int(v) for v in rect)
    H, W = seq.shape
    if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > W or y + h > H:
        raise ConfigError(f'ROI {rect} is outside the {W}x{H} frame')
    return seq.with_frames(seq.frames[:, y:y + h, x:x + w])
