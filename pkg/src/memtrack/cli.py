"""Command-line interface.

Exit codes: 0 success, 1 configuration error, 2 I/O error, 3 numerical
error, 4 file-format error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import analytics, plotting
from .detection import (BlobParams, Level, blob_detect, merge_levels,
                        read_detections, write_detections)
from .errors import ConfigError, LoadError, MemTrackError, NumericalError
from .imaging import load_sequence, write_sequence
from .motion import DEFAULT_WINDOW, build_feature_stack
from .pipeline import StageFailure, export_features, load_config, run_pipeline, write_sweep
from .pruning import DEFAULT_MAX_BOX_AREA, DEFAULT_NMS_IOU, PrunerConfig, prune
from .simulation import AgentSpec, DetectorNoise, SimConfig, corrupt_detections, simulate
from .tracking import TrackerConfig, read_tracks, track, track_length_filter, write_tracks

logger = logging.getLogger('memtrack')


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(ConfigError.exit_code, f'{self.prog}: error: {message}\n')


def _levels_arg(values):
    """Parse ``level=value`` pairs."""
    out = {}
    for item in values or []:
        key, sep, value = item.partition('=')
        if not sep:
            raise ConfigError(f'expected LEVEL=VALUE, got {item!r}')
        try:
            out[Level.parse(key)] = float(value)
        except ValueError:
            raise ConfigError(f'threshold {value!r} is not a number') from None
    return out


def _read_level_files(args):
    sets = {}
    for lv in (Level.LOW, Level.MEDIUM, Level.HIGH):
        path = getattr(args, lv.value)
        if path:
            sets[lv] = read_detections(path, lv, args.frames)
    if not sets:
        raise ConfigError('give at least one of --low, --medium, --high')
    return sets


def cmd_features(args):
    seq = load_sequence(args.manifest)
    stacks = build_feature_stack(seq, args.window, args.smooth)
    export_features(stacks, args.out)
    print(f'wrote {len(stacks)} feature stacks to {args.out}')


def cmd_detect(args):
    if not args.builtin:
        raise ConfigError('only --builtin detection runs inside this tool; '
                          'external detectors supply per-level files to `merge`')
    params = BlobParams(args.threshold, args.min_area, args.max_area)
    seq = load_sequence(args.manifest)
    dets = blob_detect(build_feature_stack(seq, args.window, args.smooth), params)
    write_detections(args.out, dets, include_level=False)
    print(f'{len(dets)} detections over {dets.n_frames} frames')


def cmd_merge(args):
    sets = _read_level_files(args)
    merged = merge_levels(sets.values())
    write_detections(args.out, merged, include_level=True)
    print(f'merged {len(merged)} detections from {len(sets)} levels')


def cmd_prune(args):
    cfg_data = {}
    if args.config:
        cfg_data = (yaml.safe_load(Path(args.config).read_text()) or {}).get('pruner') or {}
    thresholds = {lv: 0.0 for lv in Level}
    thresholds.update(cfg_data.get('confidence_thresholds') or {})
    thresholds.update(_levels_arg(args.conf))
    cfg = PrunerConfig(
        max_box_area=args.max_area if args.max_area is not None else cfg_data.get(
            'max_box_area', DEFAULT_MAX_BOX_AREA),
        confidence_thresholds=thresholds,
        nms_iou=args.nms_iou if args.nms_iou is not None else cfg_data.get('nms_iou', DEFAULT_NMS_IOU),
    )
    dets = read_detections(args.input, args.level)
    stages = {}
    kept = prune(dets, cfg, stages)
    write_detections(args.out, kept, include_level=True)
    print(f'{len(dets)} -> area {len(stages["area"])} -> confidence {len(stages["confidence"])}'
          f' -> nms {len(kept)}')


def cmd_track(args):
    dets = read_detections(args.input, args.level, args.frames)
    cfg = TrackerConfig(max_age=args.max_age, iou_match_threshold=args.iou,
                        min_track_length=args.min_length or 1)
    seq = load_sequence(args.manifest) if args.manifest else None
    n = len(seq) if seq is not None else dets.n_frames
    tracks = track(dets, cfg, n)
    if args.min_length:
        tracks = track_length_filter(tracks, args.min_length)
    write_tracks(args.out, tracks)
    if args.overlay:
        if seq is None:
            raise ConfigError('--overlay needs --manifest')
        plotting.draw_overlays(seq.frames, tracks, args.overlay)
    print(f'{len(tracks)} tracks')


def cmd_eval(args):
    gt = analytics.read_ground_truth(args.gt)
    out = Path(args.out)
    stages = {}
    if args.detections:
        stages['detections'] = read_detections(args.detections, Level.BUILTIN)
    tracks = None
    if args.tracks:
        tracks = read_tracks(args.tracks)
        stages['tracks'] = tracks
        if args.min_length:
            stages['length_filter'] = track_length_filter(tracks, args.min_length)
    if not stages:
        raise ConfigError('give --tracks and/or --detections')
    report = analytics.stage_report(stages, gt, args.radius, args.majority, args.fps,
                                    args.pixel_scale)
    report.write(out)
    sys.stdout.write(report.to_text())
    if not args.no_figures:
        plotting.plot_stage_metrics(report, out / 'figures' / 'stage_metrics.png')
        if report.speeds and all(v.n for v in report.speeds.values()):
            plotting.plot_speed_comparison(report.speeds, out / 'figures' / 'speed_comparison.png')
    if tracks is not None and args.sweep:
        lengths = [int(x) for x in args.sweep.split(',')]
        rows = analytics.track_length_sweep(tracks, gt, lengths, args.radius, args.majority)
        write_sweep(out / 'track_length_sweep.csv', lengths, rows)
        if not args.no_figures:
            plotting.plot_track_length_sweep(rows, lengths, out / 'figures' / 'track_length_sweep.png')


def cmd_calibrate(args):
    sets = _read_level_files(args)
    gt = analytics.read_ground_truth(args.gt)
    result = analytics.calibrate_thresholds(sets, gt, args.criterion, args.max_area,
                                            args.nms_iou, args.radius)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result.write_curves(out / 'calibration_curves.csv')
    result.write_chosen(out / 'thresholds.json')
    if not args.no_figures:
        plotting.plot_calibration(result, out / 'figures' / 'calibration.png')
    for lv, thr in result.thresholds(args.criterion).items():
        c = result.curves[lv]
        i = int(np.flatnonzero(c.thresholds == thr)[0])
        print(f'{lv.value:<8} threshold {thr:.2f}  precision {c.precision[i]:.3f}  '
              f'recall {c.recall[i]:.3f}  F1 {c.f1[i]:.3f}')


def _sim_config(args):
    if args.config:
        data = yaml.safe_load(Path(args.config).read_text()) or {}
        if not isinstance(data, dict):
            raise ConfigError('simulation config must be a mapping')
        try:
            return SimConfig(**data)
        except TypeError as exc:
            raise ConfigError(f'simulation config: {exc}') from None
    rng = np.random.default_rng(args.seed)
    levels = (Level.LOW, Level.MEDIUM, Level.HIGH)
    agents = [AgentSpec(speed=float(rng.uniform(args.min_speed, args.max_speed)),
                        tumble_rate=args.tumble_rate, level=levels[i % 3])
              for i in range(args.agents)]
    noise = DetectorNoise(miss=args.miss, fp_per_frame=args.fp, jitter=args.jitter)
    return SimConfig(height=args.size, width=args.size, n_frames=args.frames, fps=args.fps,
                     pixel_scale=args.pixel_scale, agents=agents, noise=noise,
                     medium=args.medium, seed=args.seed)


def cmd_simulate(args):
    cfg = _sim_config(args)
    truth = simulate(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_sequence(truth.sequence(), out / 'manifest.txt')
    analytics.write_ground_truth(out / 'gt.csv', truth.ground_truth())
    if args.detections:
        dets = corrupt_detections(truth)
        write_detections(out / 'detections.csv', dets, include_level=True)
        for lv in (Level.LOW, Level.MEDIUM, Level.HIGH):
            write_detections(out / f'detections_{lv.value}.csv',
                             dets.select(lambda d, lv=lv: d.level is lv), include_level=False)
    print(f'simulated {cfg.n_frames} frames, {len(cfg.agents)} agents -> {out}')


def cmd_run(args):
    cfg = load_config(args.config)
    result = run_pipeline(cfg)
    print(f'{len(result.tracks)} tracks, {len(result.filtered)} after length filter')
    if result.report is not None:
        sys.stdout.write(result.report.to_text())


def _add_level_files(p):
    for lv in ('low', 'medium', 'high'):
        p.add_argument(f'--{lv}', metavar='FILE', help=f'{lv}-motility detection file')
    p.add_argument('--frames', type=int, help='video length (default: from the files)')


def build_parser():
    parser = _Parser(prog='memtrack', description=__doc__.splitlines()[0])
    parser.add_argument('-v', '--verbose', action='store_true')
    sub = parser.add_subparsers(dest='command', required=True, parser_class=_Parser)

    p = sub.add_parser('features', help='export 3-channel motion feature images')
    p.add_argument('--manifest', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--window', type=int, default=DEFAULT_WINDOW)
    p.add_argument('--smooth', type=float, default=0.0, help='Gaussian pre-smoothing sigma')
    p.set_defaults(func=cmd_features)

    p = sub.add_parser('detect', help='run the built-in blob detector')
    p.add_argument('--builtin', action='store_true')
    p.add_argument('--manifest', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--threshold', type=float, default=BlobParams.threshold)
    p.add_argument('--min-area', type=int, default=BlobParams.min_area)
    p.add_argument('--max-area', type=int, default=BlobParams.max_area)
    p.add_argument('--window', type=int, default=DEFAULT_WINDOW)
    p.add_argument('--smooth', type=float, default=0.0)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser('merge', help='combine per-level detection files')
    _add_level_files(p)
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser('prune', help='area, confidence and NMS filters')
    p.add_argument('--in', dest='input', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--level', default='builtin', help='level for files without a level column')
    p.add_argument('--config', help='pipeline config to take pruner settings from')
    p.add_argument('--max-area', type=float)
    p.add_argument('--nms-iou', type=float)
    p.add_argument('--conf', nargs='*', metavar='LEVEL=T', help='confidence thresholds')
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser('track', help='interpolated SORT tracking')
    p.add_argument('--in', dest='input', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--level', default='builtin')
    p.add_argument('--frames', type=int)
    p.add_argument('--manifest', help='sequence (sets video length; needed for --overlay)')
    p.add_argument('--max-age', type=int, default=25)
    p.add_argument('--iou', type=float, default=0.3)
    p.add_argument('--min-length', type=int, help='apply the track length filter')
    p.add_argument('--overlay', metavar='DIR', help='write overlay images here')
    p.set_defaults(func=cmd_track)

    p = sub.add_parser('eval', help='precision/recall against ground truth')
    p.add_argument('--gt', required=True)
    p.add_argument('--tracks')
    p.add_argument('--detections')
    p.add_argument('--out', required=True)
    p.add_argument('--radius', type=float, default=analytics.DEFAULT_RADIUS)
    p.add_argument('--majority', type=float, default=analytics.DEFAULT_MAJORITY)
    p.add_argument('--min-length', type=int)
    p.add_argument('--fps', type=float)
    p.add_argument('--pixel-scale', type=float)
    p.add_argument('--sweep', help='comma-separated minimum track lengths')
    p.add_argument('--no-figures', action='store_true')
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser('calibrate', help='sweep per-level confidence thresholds')
    _add_level_files(p)
    p.add_argument('--gt', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--criterion', choices=analytics.CRITERIA, default='max_precision')
    p.add_argument('--max-area', type=float, default=DEFAULT_MAX_BOX_AREA)
    p.add_argument('--nms-iou', type=float, default=DEFAULT_NMS_IOU)
    p.add_argument('--radius', type=float, default=analytics.DEFAULT_RADIUS)
    p.add_argument('--no-figures', action='store_true')
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser('simulate', help='write a synthetic ground-truthed scene')
    p.add_argument('--out', required=True)
    p.add_argument('--config', help='YAML mapping of simulation settings')
    p.add_argument('--size', type=int, default=256)
    p.add_argument('--frames', type=int, default=120)
    p.add_argument('--fps', type=float, default=60.0)
    p.add_argument('--pixel-scale', type=float, default=0.5)
    p.add_argument('--agents', type=int, default=5)
    p.add_argument('--min-speed', type=float, default=5.0)
    p.add_argument('--max-speed', type=float, default=20.0)
    p.add_argument('--tumble-rate', type=float, default=1.0)
    p.add_argument('--miss', type=float, default=0.0)
    p.add_argument('--fp', type=float, default=0.0)
    p.add_argument('--jitter', type=float, default=0.0)
    p.add_argument('--medium', default='collagen')
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--detections', action='store_true', help='also write noisy detection files')
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser('run', help='full pipeline from a config file')
    p.add_argument('--config', required=True)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format='%(levelname)s %(name)s: %(message)s')
    try:
        args.func(args)
    except StageFailure as exc:
        print(f'memtrack {args.command}: {exc}', file=sys.stderr)
        return exc.exit_code
    except MemTrackError as exc:
        print(f'memtrack {args.command}: {exc}', file=sys.stderr)
        return exc.exit_code
    except yaml.YAMLError as exc:
        print(f'memtrack {args.command}: invalid YAML: {exc}', file=sys.stderr)
        return ConfigError.exit_code
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f'memtrack {args.command}: numerical error: {exc}', file=sys.stderr)
        return NumericalError.exit_code
    except OSError as exc:
        print(f'memtrack {args.command}: {exc}', file=sys.stderr)
        return LoadError.exit_code
    return 0


if __name__ == '__main__':
    sys.exit(main())
