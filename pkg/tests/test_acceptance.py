"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the summary lines are written
straight to the terminal even when output capture is on.
"""
import itertools
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from helpers import greedy_nms_oracle, make_track, random_frame, shifted_pair
from memtrack.analytics import (GroundTruth, MotilityClass, TrackMatch, calibrate_thresholds,
                                classify_motility, diffusivity_curve, f1_score, majority_vote,
                                match_detections, match_tracks, population_curve, precision,
                                recall, stage_report)
from memtrack.detection import Detection, DetectionSet, Level
from memtrack.imaging import FrameSequence
from memtrack.motion import build_feature_stack, lucas_kanade_flow
from memtrack.pipeline import load_config, run_pipeline
from memtrack.pruning import PrunerConfig, area_filter, iou_matrix, nms, nms_frame, prune
from memtrack.simulation import (AgentSpec, BackgroundSpec, DetectorNoise, SimConfig,
                                 corrupt_detections, simulate)
from memtrack.tracking import (TrackerConfig, associate, kalman_init, kalman_predict,
                               kalman_update, track, track_length_filter)


@contextmanager
def criterion(capsys, number, title):
    start = time.perf_counter()
    status = 'FAIL'
    try:
        yield
        status = 'PASS'
    finally:
        elapsed = time.perf_counter() - start
        with capsys.disabled():
            print(f'\n[criterion {number:>2}] {status}  {title}  ({elapsed:.1f} s)')


# ---------------------------------------------------------------- 1

def _gated_cost(ious, thr):
    return np.where(ious >= thr, 1.0 - ious, 1.0)


def _brute_force_total(cost):
    n, m = cost.shape
    if n <= m:
        totals = (math.fsum(cost[i, p[i]] for i in range(n))
                  for p in itertools.permutations(range(m), n))
    else:
        totals = (math.fsum(cost[p[j], j] for j in range(m))
                  for p in itertools.permutations(range(n), m))
    return min(totals)


def test_criterion_01_hungarian_equivalence(capsys):
    with criterion(capsys, 1, 'association cost equals brute-force enumeration (1000 matrices)'):
        rng = np.random.default_rng(101)
        thr = 0.3
        t0 = time.perf_counter()
        for _ in range(1000):
            n, m = (int(k) for k in rng.integers(1, 7, size=2))
            # Boxes clustered in a small field so that many pairs overlap.
            tracks = np.column_stack([rng.uniform(0, 60, (n, 2)), rng.uniform(15, 35, (n, 2))])
            dets = np.column_stack([rng.uniform(0, 60, (m, 2)), rng.uniform(15, 35, (m, 2))])
            matches, un_t, un_d = associate([tuple(b) for b in tracks],
                                            [tuple(b) for b in dets], thr)
            cost = _gated_cost(iou_matrix(tracks, dets), thr)
            unmatched_slots = min(n, m) - len(matches)
            total = math.fsum([cost[i, j] for i, j in matches] + [1.0] * unmatched_slots)
            assert total == _brute_force_total(cost)
            assert sorted(un_t + [i for i, _ in matches]) == list(range(n))
            assert sorted(un_d + [j for _, j in matches]) == list(range(m))
        assert time.perf_counter() - t0 < 10.0


# ---------------------------------------------------------------- 2

def test_criterion_02_nms_oracle(capsys):
    with criterion(capsys, 2, 'NMS equals independent greedy oracle (1000 frames x 3 thresholds)'):
        rng = np.random.default_rng(202)
        frames = [random_frame(rng, int(rng.integers(0, 21))) for _ in range(1000)]
        for thr in (0.3, 0.5, 0.7):
            for frame in frames:
                kept = nms_frame(frame, thr)
                idx = greedy_nms_oracle([d.box for d in frame], [d.confidence for d in frame], thr)
                assert kept == [frame[i] for i in idx]


# ---------------------------------------------------------------- 3

SHIFTS = [(dx, dy) for dx in range(-2, 3) for dy in range(-2, 3)
          if 0 < dx * dx + dy * dy <= 4]


def test_criterion_03_optical_flow(capsys):
    with criterion(capsys, 3, 'flow magnitude within 20% on 20 shifted textures; static = 0'):
        margin = 12
        for k in range(20):
            dx, dy = SHIFTS[k % len(SHIFTS)]
            prev, nxt = shifted_pair(300 + k, dx, dy)
            flow = lucas_kanade_flow(prev, nxt)
            inner = (slice(margin, -margin), slice(margin, -margin))
            ok = flow.well_conditioned[inner]
            assert ok.mean() > 0.9
            mag = flow.magnitude[inner][ok].mean()
            true = math.hypot(dx, dy)
            assert abs(mag - true) <= 0.2 * true, (dx, dy, mag)
            still = lucas_kanade_flow(prev, prev)
            assert np.all(still.u == 0) and np.all(still.v == 0)


# ---------------------------------------------------------------- 4

def test_criterion_04_kalman_sanity(capsys):
    with criterion(capsys, 4, 'Kalman error < 0.5 px after 10 frames; covariance SPD for 1000 cycles'):
        rng = np.random.default_rng(404)
        for _ in range(50):
            p0 = rng.uniform(50, 400, 2)
            v = rng.uniform(-3, 3, 2)
            s = kalman_init((*p0, 30.0, 30.0))
            for t in range(1, 11):
                s = kalman_predict(s)
                s = kalman_update(s, (*(p0 + t * v), 30.0, 30.0))
            assert np.hypot(*(s.mean[:2] - (p0 + 10 * v))) < 0.5
        s = kalman_init((100.0, 100.0, 30.0, 30.0))
        v = np.array([0.7, -0.4])
        for t in range(1, 1001):
            s = kalman_predict(s)
            assert np.array_equal(s.cov, s.cov.T)
            np.linalg.cholesky(s.cov)
            s = kalman_update(s, (100 + 0.7 * t, 100 - 0.4 * t, 30.0, 30.0))
            assert np.array_equal(s.cov, s.cov.T)
            np.linalg.cholesky(s.cov)
        assert np.hypot(*(s.mean[:2] - (100 + 1000 * v))) < 0.5


# ---------------------------------------------------------------- 5

def _gap_tracks(gap):
    cfg = SimConfig(height=256, width=256, n_frames=120,
                    agents=[AgentSpec(speed=8.0, tumble_rate=1.0)], seed=55)
    truth = simulate(cfg)
    ideal, _ = truth.ideal_detections()
    missing = set(range(40, 40 + gap))
    return track(ideal.select(lambda d: d.frame_idx not in missing), TrackerConfig(), 120)


def test_criterion_05_gap_semantics(capsys):
    with criterion(capsys, 5, 'detection gap of 25 frames -> 1 track; 26 frames -> 2 tracks'):
        one = _gap_tracks(25)
        assert len(one) == 1
        assert len(one[0]) == 120
        assert sum(s.interpolated for s in one[0].states) == 25
        assert len(_gap_tracks(26)) == 2


# ---------------------------------------------------------------- 6

def test_criterion_06_length_filter(capsys):
    with criterion(capsys, 6, 'length filter keeps 60, drops 59, equals brute force'):
        assert track_length_filter([make_track(0, range(59))], 60) == []
        t60 = make_track(1, range(10, 70))
        assert track_length_filter([t60], 60) == [t60]
        rng = np.random.default_rng(606)
        for _ in range(200):
            tracks = [make_track(i, range(int(s), int(s) + int(n)))
                      for i, (s, n) in enumerate(zip(rng.integers(0, 50, 30),
                                                     rng.integers(1, 120, 30)))]
            min_len = int(rng.integers(1, 121))
            expected = [tr for tr in tracks if tr.end - tr.start + 1 >= min_len]
            assert track_length_filter(tracks, min_len) == expected


# ---------------------------------------------------------------- 7

def test_criterion_07_diffusivity_recovery(capsys):
    with criterion(capsys, 7, 'Brownian D recovered within 15%; classes none/medium/high'):
        t0 = time.perf_counter()
        expected = {0.05: MotilityClass.NONE, 0.5: MotilityClass.MEDIUM, 2.0: MotilityClass.HIGH}
        for i, (d0, cls) in enumerate(expected.items()):
            cfg = SimConfig(height=512, width=512, n_frames=240, fps=60.0, pixel_scale=0.5,
                            agents=[AgentSpec(diffusivity=d0) for _ in range(100)],
                            background=BackgroundSpec(density=0, noise_sigma=0), seed=70 + i)
            gt = simulate(cfg).ground_truth()
            curves = [diffusivity_curve(gt.tracks[a], cfg.fps, cfg.pixel_scale) for a in gt.ids]
            pop = population_curve(curves)
            assert abs(pop.plateau() - d0) <= 0.15 * d0, (d0, pop.plateau())
            assert classify_motility(pop) is cls
        assert time.perf_counter() - t0 < 30.0


# ---------------------------------------------------------------- 8

E2E_AGENT_SPEEDS = (4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0, 18.0, 20.0, 11.0)


@pytest.fixture(scope='module')
def e2e_scene():
    levels = (Level.LOW, Level.MEDIUM, Level.HIGH)
    agents = [AgentSpec(speed=v, tumble_rate=1.0, level=levels[i % 3])
              for i, v in enumerate(E2E_AGENT_SPEEDS)]
    cfg = SimConfig(height=512, width=512, n_frames=600, fps=60.0, pixel_scale=0.5,
                    agents=agents, noise=DetectorNoise(miss=0.3, fp_per_frame=5, jitter=1.0),
                    seed=7)
    return simulate(cfg)


def _identity_oracle(tracks, dets, source_of, n_agents, majority=0.5):
    """Track evaluation straight from simulation identities."""
    assignment = {}
    for tr in tracks:
        states = tr.detected_states
        votes = []
        for s in states:
            a = source_of[id(dets.frame(s.frame_idx)[s.det_index])]
            votes.append(None if a < 0 else a)
        assignment[tr.id] = majority_vote(votes, len(states), majority)
    return TrackMatch(assignment, n_agents)


def test_criterion_08_end_to_end(capsys, e2e_scene):
    with criterion(capsys, 8, 'simulated scene: track precision >= 0.9, recall >= 0.7, '
                              'matches identity oracle'):
        t0 = time.perf_counter()
        truth = simulate(e2e_scene.config)
        dets, sources = corrupt_detections(truth, return_sources=True)
        source_of = {id(d): a for t in range(dets.n_frames)
                     for d, a in zip(dets.frame(t), sources[t])}
        cfg = PrunerConfig(confidence_thresholds={lv: 0.5 for lv in Level})
        pruned = prune(dets, cfg)
        tracker = TrackerConfig.for_medium(truth.config.medium)
        tracks = track_length_filter(track(pruned, tracker, truth.n_frames),
                                     tracker.min_track_length)
        gt = truth.ground_truth()
        m = match_tracks(tracks, gt)
        oracle = _identity_oracle(tracks, pruned, source_of, len(truth.config.agents))
        elapsed = time.perf_counter() - t0
        with capsys.disabled():
            print(f'\n    tracks={len(tracks)} precision={m.precision:.3f} recall={m.recall:.3f}')
        assert m.precision >= 0.9
        assert m.recall >= 0.7
        assert m.assignment == oracle.assignment
        assert (m.tp, m.fp, m.fn) == (oracle.tp, oracle.fp, oracle.fn)
        assert elapsed < 120.0


# ---------------------------------------------------------------- 9

def test_criterion_09_metric_identities(capsys):
    with criterion(capsys, 9, 'stage_report reproduces precision/recall/F1 on hand-built counts'):
        # 100 annotated objects spread over 10 frames, 10 per frame.
        gt = GroundTruth({k: [(k // 10, 20.0 + 40 * (k % 10), 50.0)] for k in range(100)})
        xy = {k: (k // 10, 20.0 + 40 * (k % 10), 50.0) for k in range(100)}

        def dets_for(tp_ids, n_fp):
            out = [Detection(f, x, y, 30, 30, 0.9) for f, x, y in (xy[k] for k in tp_ids)]
            out += [Detection(i % 10, 20.0 + 40 * (i // 10 % 10), 300.0, 30, 30, 0.9)
                    for i in range(n_fp)]
            return DetectionSet.from_detections(out, 10)

        report = stage_report({'a': dets_for(range(77), 23), 'b': dets_for(range(48), 0),
                               'c': dets_for(range(60), 15)}, gt)
        a, b, c = report.stages
        assert (a.tp, a.fp, a.fn) == (77, 23, 23)
        assert a.precision == 0.77
        assert (b.tp, b.fn) == (48, 52)
        assert b.recall == 0.48
        assert c.precision == 60 / 75 and c.recall == 60 / 100
        p, r = c.precision, c.recall
        assert c.f1 == 2 * p * r / (p + r)
        assert f1_score(0.74, 0.55) == pytest.approx(0.631, abs=5e-4)
        assert precision(77, 23) == 0.77 and recall(48, 52) == 0.48


# ---------------------------------------------------------------- 10

def _calibration_scene(rng, level):
    gt_rows, dets = {}, DetectionSet(30)
    for t in range(30):
        for k in range(5):
            x, y = 40.0 + 70 * k, 60.0
            gt_rows.setdefault(k, []).append((t, x, y))
            if rng.random() < 0.75:
                dets.add(Detection(t, x + rng.normal(), y + rng.normal(), 30, 30,
                                   float(rng.uniform(0.1, 1.0)), level))
        for _ in range(rng.poisson(4)):
            dets.add(Detection(t, float(rng.uniform(0, 400)), float(rng.uniform(0, 400)), 30, 30,
                               float(rng.uniform(0, 0.9)), level))
    return dets, GroundTruth(gt_rows)


def _exhaustive_oracle(dets, gt, grid):
    base = area_filter(dets, 1225.0)
    rows = []
    for thr in grid:
        kept = nms(base.select(lambda d: d.confidence >= thr), 0.7)
        if len(kept):
            m = match_detections(kept, gt)
            p, r = precision(m.tp, m.fp), recall(m.tp, m.fn)
            rows.append((float(thr), p, f1_score(p, r)))
    best_p = max(rows, key=lambda row: (row[1], row[0]))[0]
    best_f = max(rows, key=lambda row: (row[2], row[0]))[0]
    return {'max_precision': best_p, 'max_f1': best_f}, {row[0]: row[2] for row in rows}


def test_criterion_10_calibration(capsys):
    with criterion(capsys, 10, 'calibration equals exhaustive sweep; max-F1 never below max-precision F1'):
        rng = np.random.default_rng(1010)
        grid = np.round(np.linspace(0, 1, 101), 2)
        for _ in range(4):
            sets, gts, oracles = {}, {}, {}
            for lv in (Level.LOW, Level.MEDIUM, Level.HIGH):
                sets[lv], gts[lv] = _calibration_scene(rng, lv)
                oracles[lv] = _exhaustive_oracle(sets[lv], gts[lv], grid)
            for criterion_name in ('max_precision', 'max_f1'):
                result = calibrate_thresholds(sets, gts, criterion_name)
                for lv, (chosen, f1_at) in oracles.items():
                    assert result.thresholds(criterion_name)[lv] == chosen[criterion_name]
                    assert f1_at[chosen['max_f1']] >= f1_at[chosen['max_precision']]
                    assert f1_at[result.chosen['max_f1'][lv]] >= \
                        f1_at[result.chosen['max_precision'][lv]]


# ---------------------------------------------------------------- 11

def test_criterion_11_determinism(capsys, tmp_path):
    from memtrack.cli import main

    with criterion(capsys, 11, 'rerunning the pipeline gives byte-identical artifacts'):
        trees = []
        for run in ('a', 'b'):
            root = tmp_path / run
            assert main(['simulate', '--out', str(root / 'scene'), '--size', '160', '--frames',
                         '120', '--agents', '4', '--miss', '0.2', '--fp', '2', '--jitter', '1',
                         '--seed', '21', '--detections']) == 0
            (root / 'config.yaml').write_text(
                'manifest: scene/manifest.txt\nground_truth: scene/gt.csv\noutput: out\n'
                'detections: {low: scene/detections_low.csv, medium: scene/detections_medium.csv,'
                ' high: scene/detections_high.csv}\n'
                'pruner: {confidence_thresholds: {low: 0.4, medium: 0.4, high: 0.4}}\n'
                'tracker: {min_track_length: 30}\noverlays: true\n')
            run_pipeline(load_config(root / 'config.yaml'))
            files = sorted(p for p in root.rglob('*') if p.is_file())
            trees.append({p.relative_to(root): p.read_bytes() for p in files})
        assert trees[0].keys() == trees[1].keys()
        assert any(k.suffix == '.png' and 'figures' in k.parts for k in trees[0])
        for key in trees[0]:
            assert trees[0][key] == trees[1][key], key


# ---------------------------------------------------------------- 12

def test_criterion_12_throughput(capsys, e2e_scene):
    with criterion(capsys, 12, 'features for 600 frames of 512x512 in under 60 s'):
        seq = FrameSequence(e2e_scene.frames, 60.0, 0.5)
        assert seq.frames.shape == (600, 512, 512)
        t0 = time.perf_counter()
        stacks = build_feature_stack(seq)
        elapsed = time.perf_counter() - t0
        with capsys.disabled():
            print(f'\n    feature extraction took {elapsed:.1f} s')
        assert len(stacks) == 600
        assert elapsed < 60.0
