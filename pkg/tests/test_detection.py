from collections import Counter

import numpy as np
import pytest

from memtrack.detection import (BlobParams, Detection, DetectionSet, Level, blob_detect,
                                merge_levels, read_detections, write_detections)
from memtrack.errors import ConfigError, FormatError, LoadError
from memtrack.imaging import FrameSequence
from memtrack.motion import build_feature_stack
from memtrack.simulation import _stamp

HEADER = 'frame,cx,cy,w,h,confidence\n'


def test_parse_one_row(tmp_path):
    p = tmp_path / 'd.csv'
    p.write_text(HEADER + '12,100.5,80.0,30,30,0.97\n')
    dets = read_detections(p, 'high')
    assert len(dets) == 1
    (d,) = dets.frame(12)
    assert d == Detection(12, 100.5, 80.0, 30.0, 30.0, 0.97, Level.HIGH)
    assert dets.n_frames == 13


def test_empty_file(tmp_path):
    p = tmp_path / 'd.csv'
    p.write_text(HEADER)
    assert len(read_detections(p)) == 0
    p.write_text('')
    assert len(read_detections(p, n_frames=5)) == 0


@pytest.mark.parametrize('row, msg', [
    ('1,2,3,4\n', 'expected 6 fields'),
    ('1,x,3,4,5,0.5\n', 'non-numeric'),
    ('1,2,3,4,5,1.5\n', 'outside'),
    ('1,2,3,0,5,0.5\n', 'non-positive'),
    ('1,2,3,4,5,nan\n', 'non-finite'),
])
def test_malformed_row_reports_line(tmp_path, row, msg):
    p = tmp_path / 'd.csv'
    p.write_text(HEADER + '0,1,1,10,10,0.5\n' + row)
    with pytest.raises(FormatError, match=msg) as info:
        read_detections(p)
    assert info.value.line == 3
    assert ':3' in str(info.value)


def test_bad_header(tmp_path):
    p = tmp_path / 'd.csv'
    p.write_text('a,b,c\n')
    with pytest.raises(FormatError):
        read_detections(p)


def test_missing_file(tmp_path):
    with pytest.raises(LoadError):
        read_detections(tmp_path / 'nope.csv')


def test_frame_beyond_video(tmp_path):
    p = tmp_path / 'd.csv'
    p.write_text(HEADER + '9,1,1,10,10,0.5\n')
    with pytest.raises(FormatError):
        read_detections(p, n_frames=5)


def _random_set(rng, n_frames, n, level):
    dets = [Detection(int(rng.integers(n_frames)), float(rng.uniform(0, 500)),
                      float(rng.uniform(0, 500)), float(rng.uniform(1, 50)),
                      float(rng.uniform(1, 50)), float(rng.uniform(0, 1)), level)
            for _ in range(n)]
    return DetectionSet.from_detections(sorted(dets, key=lambda d: d.frame_idx), n_frames)


def test_write_read_round_trip(tmp_path, rng):
    dets = _random_set(rng, 20, 60, Level.MEDIUM)
    write_detections(tmp_path / 'd.csv', dets)
    assert read_detections(tmp_path / 'd.csv', Level.MEDIUM, 20) == dets


def test_round_trip_keeps_levels(tmp_path, rng):
    merged = merge_levels([_random_set(rng, 10, 15, lv) for lv in (Level.LOW, Level.HIGH)])
    write_detections(tmp_path / 'd.csv', merged)
    assert (tmp_path / 'd.csv').read_text().splitlines()[0].endswith(',level')
    assert read_detections(tmp_path / 'd.csv', n_frames=10) == merged


def test_merge_identity(rng):
    s = _random_set(rng, 8, 20, Level.LOW)
    assert merge_levels([s]) == s


def test_merge_counts():
    sets = [DetectionSet.from_detections(
        [Detection(0, float(i), 0.0, 10.0, 10.0, 0.5, lv) for i in range(n)], 1)
        for n, lv in ((3, Level.LOW), (2, Level.MEDIUM), (5, Level.HIGH))]
    merged = merge_levels(sets)
    assert len(merged.frame(0)) == 10
    assert Counter(d.level for d in merged) == {Level.LOW: 3, Level.MEDIUM: 2, Level.HIGH: 5}


def test_merge_is_multiset_union(rng):
    sets = [_random_set(rng, 12, int(rng.integers(0, 30)), lv)
            for lv in (Level.LOW, Level.MEDIUM, Level.HIGH)]
    merged = merge_levels(sets)
    assert Counter(merged) == sum((Counter(s) for s in sets), Counter())


def test_detection_validation():
    with pytest.raises(ConfigError):
        Detection(0, 1, 1, 0, 10, 0.5)
    with pytest.raises(ConfigError):
        Detection(0, 1, 1, 10, 10, -0.1)
    with pytest.raises(ConfigError):
        Level.parse('extreme')


def _blob_video(centres_per_frame, size=96):
    frames = []
    for centres in centres_per_frame:
        img = np.full((size, size), 100.0)
        for x, y in centres:
            _stamp(img, x, y, 80.0, 2.0)
        frames.append(np.rint(img).astype(np.uint8))
    return build_feature_stack(FrameSequence(np.stack(frames), 60, 0.5))


def test_zero_channel_gives_no_detections():
    stacks = build_feature_stack(FrameSequence(np.full((3, 32, 32), 10, dtype=np.uint8), 60, 0.5))
    assert len(blob_detect(stacks)) == 0


def test_single_moving_blob():
    centres = [[(20.3 + 3 * t, 40.7 + t)] for t in range(15)]
    dets = blob_detect(_blob_video(centres))
    for t in range(1, 15):
        (d,) = dets.frame(t)
        x, y = centres[t][0]
        assert np.hypot(d.cx - x, d.cy - y) < 2.0
        assert d.level is Level.BUILTIN
        assert 0 < d.confidence <= 1


def test_two_blobs():
    centres = [[(20 + 2 * t, 20.0), (70.0, 70 - 2 * t)] for t in range(10)]
    dets = blob_detect(_blob_video(centres))
    assert dets.counts()[1:] == [2] * 9


def test_blob_params_validation():
    with pytest.raises(ConfigError):
        BlobParams(min_area=50, max_area=10)
