"""End-to-end pipeline driven by one YAML config file.

Example config (all keys except ``manifest``, ``detections`` and ``output``
are optional; the values shown are the defaults)::

    manifest: scene/manifest.txt
    ground_truth: scene/gt.csv          # enables the evaluation report
    output: run1
    detections:                         # either per-level files ...
      low: scene/det_low.csv
      medium: scene/det_medium.csv
      high: scene/det_high.csv
    # detections: builtin               # ... or the built-in blob detector
    features: {window: 15, smooth_sigma: 0.0, export: false}
    blob: {threshold: 60, min_area: 4, max_area: 400}
    pruner:
      max_box_area: 1225
      nms_iou: 0.7
      confidence_thresholds: {low: 0.0, medium: 0.0, high: 0.0, builtin: 0.0}
    tracker: {max_age: 25, iou_match_threshold: 0.3, min_track_length: 60}
    analytics:
      radius_px: 15
      majority: 0.5
      window_seconds: 2.5
      motility_bounds: [0.075, 0.25, 1.0]
      track_length_sweep: [1, 15, 30, 45, 60, 75, 90]
    overlays: false
    figures: true

Relative paths resolve against the config file's directory. When
``tracker.min_track_length`` is absent it defaults to 30 frames for an
aqueous medium and 60 otherwise.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from PIL import Image

from . import analytics, plotting
from .detection import BlobParams, Level, blob_detect, merge_levels, read_detections, write_detections
from .errors import ConfigError, LoadError, MemTrackError, NumericalError
from .imaging import load_sequence, read_manifest
from .motion import DEFAULT_WINDOW, build_feature_stack
from .pruning import PrunerConfig, area_filter, confidence_filter, nms
from .tracking import TrackerConfig, track, track_length_filter, write_tracks

logger = logging.getLogger(__name__)

TOP_KEYS = {'manifest', 'ground_truth', 'output', 'detections', 'features', 'blob', 'pruner',
            'tracker', 'analytics', 'overlays', 'figures'}
STATUS_FILE = 'pipeline_status.txt'


@dataclass
class AnalyticsConfig:
    radius_px: float = analytics.DEFAULT_RADIUS
    majority: float = analytics.DEFAULT_MAJORITY
    window_seconds: float = analytics.DEFAULT_WINDOW_SECONDS
    motility_bounds: tuple = analytics.MOTILITY_BOUNDS
    track_length_sweep: tuple = (1, 15, 30, 45, 60, 75, 90)

    def __post_init__(self):
        if not self.radius_px > 0:
            raise ConfigError('analytics.radius_px must be positive')
        if not 0.5 <= self.majority <= 1:
            raise ConfigError('analytics.majority must lie in [0.5, 1]')
        if not self.window_seconds > 0:
            raise ConfigError('analytics.window_seconds must be positive')
        b = tuple(float(x) for x in self.motility_bounds)
        if len(b) != 3 or not (0 <= b[0] <= b[1] <= b[2]):
            raise ConfigError('analytics.motility_bounds must be three nondecreasing values')
        self.motility_bounds = b
        self.track_length_sweep = tuple(int(x) for x in self.track_length_sweep)


@dataclass
class PipelineConfig:
    manifest: Path
    output: Path
    detection_files: dict = field(default_factory=dict)   # Level -> Path; empty means builtin
    ground_truth: Path | None = None
    window: int = DEFAULT_WINDOW
    smooth_sigma: float = 0.0
    export_features: bool = False
    blob: BlobParams = field(default_factory=BlobParams)
    pruner: PrunerConfig = field(default_factory=PrunerConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    analytics: AnalyticsConfig = field(default_factory=AnalyticsConfig)
    overlays: bool = False
    figures: bool = True

    @property
    def builtin(self):
        return not self.detection_files

    def check_paths(self):
        for p in [self.manifest, self.ground_truth, *self.detection_files.values()]:
            if p is not None and not Path(p).exists():
                raise LoadError(f'referenced file {p} does not exist')


def _section(data, key):
    value = data.get(key) or {}
    if not isinstance(value, dict):
        raise ConfigError(f'config section {key!r} must be a mapping')
    return value


def _build(cls, kwargs, section):
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f'config section {section!r}: {exc}') from None


def parse_config(data, base_dir='.') -> PipelineConfig:
    """Validate a config mapping and build a PipelineConfig."""
    if not isinstance(data, dict):
        raise ConfigError('config must be a mapping')
    unknown = sorted(set(data) - TOP_KEYS)
    if unknown:
        raise ConfigError(f'unknown config keys {unknown}')
    base_dir = Path(base_dir)

    def resolve(p):
        p = Path(str(p))
        return p if p.is_absolute() else base_dir / p

    for key in ('manifest', 'output', 'detections'):
        if data.get(key) in (None, '', {}):
            raise ConfigError(f'config is missing {key!r}')
    det = data['detections']
    files = {}
    if isinstance(det, str):
        if det != 'builtin':
            raise ConfigError("detections must be 'builtin' or a mapping of level to file")
    elif isinstance(det, dict):
        if det.get('builtin'):
            if len(det) > 1:
                raise ConfigError('builtin detection cannot be mixed with detection files')
        else:
            for lv, path in det.items():
                level = Level.parse(lv)
                if level is Level.BUILTIN:
                    raise ConfigError("use 'detections: builtin' for the built-in detector")
                files[level] = resolve(path)
    else:
        raise ConfigError('detections must be a string or mapping')

    features = _section(data, 'features')
    pruner_kw = dict(_section(data, 'pruner'))
    thresholds = {lv: 0.0 for lv in Level}
    thresholds.update(pruner_kw.pop('confidence_thresholds', None) or {})
    pruner_kw['confidence_thresholds'] = thresholds

    tracker_kw = dict(_section(data, 'tracker'))
    medium = ''
    manifest = resolve(data['manifest'])
    if 'min_track_length' not in tracker_kw and manifest.exists():
        medium = read_manifest(manifest).medium_tag
    window = int(features.get('window', DEFAULT_WINDOW))
    unknown_f = set(features) - {'window', 'smooth_sigma', 'export'}
    if unknown_f:
        raise ConfigError(f'unknown features keys {sorted(unknown_f)}')
    cfg = PipelineConfig(
        manifest=manifest,
        output=resolve(data['output']),
        detection_files=files,
        ground_truth=resolve(data['ground_truth']) if data.get('ground_truth') else None,
        window=window,
        smooth_sigma=float(features.get('smooth_sigma', 0.0)),
        export_features=bool(features.get('export', False)),
        blob=_build(BlobParams, _section(data, 'blob'), 'blob'),
        pruner=_build(PrunerConfig, pruner_kw, 'pruner'),
        tracker=_build(TrackerConfig.for_medium, dict(medium=medium, **tracker_kw), 'tracker'),
        analytics=_build(AnalyticsConfig, _section(data, 'analytics'), 'analytics'),
        overlays=bool(data.get('overlays', False)),
        figures=bool(data.get('figures', True)),
    )
    if window < 3 or window % 2 == 0:
        raise ConfigError('features.window must be an odd integer >= 3')
    return cfg


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f'cannot read config {path}: {exc}') from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f'config {path} is not valid YAML: {exc}') from exc
    return parse_config(data or {}, path.parent)


def export_features(stacks, directory, pattern='features_%05d.png'):
    """Write each stack as an RGB PNG: R = intensity, G = flow, B = median deviation."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for t, st in enumerate(stacks):
        rgb = np.stack([st.intensity, st.flow, st.deviation], axis=-1)
        Image.fromarray(np.ascontiguousarray(rgb)).save(directory / (pattern % t))
    (directory / 'CHANNELS.txt').write_text(
        'R: intensity\nG: optical-flow magnitude (frame t-1 -> t, zero at t=0)\n'
        'B: median deviation\nG and B are min-max rescaled to 0-255 over the whole video.\n')


class StageFailure(MemTrackError):
    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, 'exit_code', 1)
        super().__init__(f'stage {stage!r} failed: {cause}')


@dataclass
class PipelineResult:
    output: Path
    detections: dict
    tracks: list
    filtered: list
    report: analytics.EvalReport | None = None
    artifacts: list = field(default_factory=list)


def run_pipeline(cfg: PipelineConfig) -> PipelineResult:
    """Features, detection, merge, pruning, tracking, length filter, evaluation.

    Every stage writes its output under ``cfg.output`` before the next one
    starts. ``pipeline_status.txt`` names the last completed stage, or the
    failing stage and its cause, in which case StageFailure is raised.
    """
    cfg.check_paths()
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    status = out / STATUS_FILE
    artifacts = []
    stage = 'load'

    def done(name, *paths):
        artifacts.extend(Path(p) for p in paths)
        status.write_text(f'completed: {name}\n')

    try:
        seq = load_sequence(cfg.manifest)
        n_frames = len(seq)
        done('load')

        if cfg.builtin or cfg.export_features:
            stage = 'features'
            stacks = build_feature_stack(seq, cfg.window, cfg.smooth_sigma)
            if cfg.export_features:
                export_features(stacks, out / 'features')
            done(stage)
        stage = 'detect'
        if cfg.builtin:
            per_level = {Level.BUILTIN: blob_detect(stacks, cfg.blob)}
        else:
            per_level = {lv: read_detections(p, lv, n_frames) for lv, p in sorted(
                cfg.detection_files.items(), key=lambda kv: list(Level).index(kv[0]))}
        stacks = None
        done(stage)

        stage = 'merge'
        merged = merge_levels(per_level.values()).with_n_frames(n_frames)
        sets = {'detector': merged}
        write_detections(out / 'detections_detector.csv', merged, include_level=True)
        done(stage, out / 'detections_detector.csv')

        stage = 'prune'
        sets['area_filter'] = area_filter(merged, cfg.pruner.max_box_area)
        sets['confidence_filter'] = confidence_filter(sets['area_filter'],
                                                      cfg.pruner.confidence_thresholds)
        sets['nms_filter'] = nms(sets['confidence_filter'], cfg.pruner.nms_iou)
        for name in ('area_filter', 'confidence_filter', 'nms_filter'):
            write_detections(out / f'detections_{name}.csv', sets[name], include_level=True)
            artifacts.append(out / f'detections_{name}.csv')
        done(stage)

        stage = 'track'
        tracks = track(sets['nms_filter'], cfg.tracker, n_frames)
        write_tracks(out / 'tracks.csv', tracks)
        done(stage, out / 'tracks.csv')

        stage = 'filter'
        filtered = track_length_filter(tracks, cfg.tracker.min_track_length)
        write_tracks(out / 'tracks_filtered.csv', filtered)
        done(stage, out / 'tracks_filtered.csv')

        if cfg.overlays:
            stage = 'overlay'
            plotting.draw_overlays(seq.frames, filtered, out / 'overlays')
            done(stage)

        report = None
        if cfg.ground_truth is not None:
            stage = 'analyze'
            gt = analytics.read_ground_truth(cfg.ground_truth)
            a = cfg.analytics
            intermediates = dict(sets)
            intermediates['tracker'] = tracks
            intermediates['length_filter'] = filtered
            report = analytics.stage_report(intermediates, gt, a.radius_px, a.majority,
                                            seq.fps, seq.pixel_scale, a.window_seconds,
                                            a.motility_bounds)
            report.write(out)
            artifacts += [out / 'report.txt', out / 'report.json', out / 'report_stages.csv']
            sweep = analytics.track_length_sweep(tracks, gt, a.track_length_sweep,
                                                 a.radius_px, a.majority)
            write_sweep(out / 'track_length_sweep.csv', a.track_length_sweep, sweep)
            artifacts.append(out / 'track_length_sweep.csv')
            if cfg.figures:
                fig_dir = out / 'figures'
                artifacts.append(plotting.plot_stage_metrics(report, fig_dir / 'stage_metrics.png'))
                artifacts.append(plotting.plot_track_length_sweep(
                    sweep, a.track_length_sweep, fig_dir / 'track_length_sweep.png'))
                if report.speeds and all(v.n for v in report.speeds.values()):
                    artifacts.append(plotting.plot_speed_comparison(
                        report.speeds, fig_dir / 'speed_comparison.png'))
            done(stage)
    except MemTrackError as exc:
        status.write_text(f'failed: {stage}\ncause: {exc}\n')
        raise StageFailure(stage, exc) from exc
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        status.write_text(f'failed: {stage}\ncause: {exc}\n')
        raise StageFailure(stage, NumericalError(str(exc))) from exc
    status.write_text('completed: all\n')
    return PipelineResult(out, sets, tracks, filtered, report, artifacts)


def write_sweep(path, lengths, rows):
    with open(path, 'w', newline='') as fh:
        w = csv.writer(fh, lineterminator='\n')
        w.writerow(['min_track_length', 'tracks', 'tp', 'fp', 'fn', 'precision', 'recall', 'f1'])
        for L, r in zip(lengths, rows):
            w.writerow([L, r.tp + r.fp, r.tp, r.fp, r.fn,
                        f'{r.precision:.6f}', f'{r.recall:.6f}', f'{r.f1:.6f}'])
