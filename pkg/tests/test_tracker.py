import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from engage.errors import EmptySession
from engage.ingest import Frame, PersonPose, SessionStream, UpperBodyPose
from engage.tracker import BBox, _frame_boxes, _iou_matrix, associate, iou, keypoint_bbox, load_tracks, save_tracks

from tracker_oracle import optimal_associate


def box_pose(x0, y0, x1, y1, c=1.0):
    kp = np.zeros((17, 3))
    kp[5] = (x0, y0, c)
    kp[10] = (x1, y1, c)
    kp[0] = ((x0 + x1) / 2, (y0 + y1) / 2, c)
    return PersonPose(kp)


def stream_of(frames, width=1000, height=1000):
    return SessionStream(width, height, 15.0, tuple(Frame(i, tuple(p)) for i, p in frames))


def upper(points):
    kp = np.zeros((11, 3))
    for j, p in points.items():
        kp[j] = p
    return UpperBodyPose(kp)


def test_bbox_single_joint():
    assert keypoint_bbox(upper({0: (10, 20, 0.9)}), 0.3) == BBox(10, 20, 10, 20)


def test_bbox_two_joints():
    assert keypoint_bbox(upper({0: (0, 0, 1), 3: (4, 8, 1)}), 0.3) == BBox(0, 0, 4, 8)


def test_bbox_none_below_threshold():
    assert keypoint_bbox(upper({j: (j, j, 0.1) for j in range(11)}), 0.3) is None


@pytest.mark.parametrize("a, b, expected", [
    (BBox(0, 0, 1, 1), BBox(0, 0, 1, 1), 1.0),
    (BBox(0, 0, 1, 1), BBox(2, 2, 3, 3), 0.0),
    (BBox(0, 0, 2, 2), BBox(1, 1, 3, 3), 1 / 7),
    (BBox(5, 5, 5, 5), BBox(5, 5, 5, 5), 1.0),
    (BBox(5, 5, 5, 5), BBox(6, 6, 6, 6), 0.0),
])
def test_iou_values(a, b, expected):
    assert iou(a, b) == pytest.approx(expected, abs=1e-12)


coord = st.integers(0, 40).map(lambda v: v / 4)
box = st.tuples(coord, coord, coord, coord).map(
    lambda v: BBox(min(v[0], v[2]), min(v[1], v[3]), max(v[0], v[2]), max(v[1], v[3])))


@settings(max_examples=200, deadline=None)
@given(st.lists(box, min_size=1, max_size=4), st.lists(box, min_size=1, max_size=4))
def test_iou_matrix_matches_scalar(a, b):
    m = _iou_matrix(np.array([[x.x_min, x.y_min, x.x_max, x.y_max] for x in a]),
                    np.array([[x.x_min, x.y_min, x.x_max, x.y_max] for x in b]))
    assert m.tolist() == [[iou(x, y) for y in b] for x in a]


def test_two_stationary_people():
    frames = [(f, [box_pose(10, 10, 50, 50), box_pose(200, 10, 240, 50)]) for f in range(10)]
    tracks = associate(stream_of(frames))
    assert len(tracks) == 2
    assert [len(t) for t in tracks] == [10, 10]
    assert all(t.detections == {f: k for f in range(10)} for k, t in enumerate(tracks))


@pytest.mark.parametrize("dropout, tracks_expected", [(3, 1), (5, 1), (6, 2)])
def test_gap_rule(dropout, tracks_expected):
    seen = list(range(5)) + list(range(5 + dropout, 10 + dropout))
    frames = [(f, [box_pose(10, 10, 50, 50)]) for f in seen]
    tracks = associate(stream_of(frames), max_gap=5)
    assert len(tracks) == tracks_expected
    if tracks_expected == 1:
        assert tracks[0].frames == seen


def test_empty_frames_count_towards_gap():
    frames = [(0, [box_pose(10, 10, 50, 50)])] + [(f, []) for f in range(1, 8)] + [(8, [box_pose(10, 10, 50, 50)])]
    assert len(associate(stream_of(frames), max_gap=5)) == 2
    assert len(associate(stream_of(frames), max_gap=7)) == 1


def test_parameter_validation():
    s = stream_of([(0, [box_pose(0, 0, 5, 5)])])
    for kw in ({"iou_threshold": 0.0}, {"iou_threshold": 1.0}, {"max_gap": -1}):
        with pytest.raises(ValueError):
            associate(s, **kw)
    with pytest.raises(EmptySession):
        associate(SessionStream(10, 10, 15.0, ()))


def test_low_confidence_detection_ignored():
    frames = [(0, [box_pose(10, 10, 50, 50), box_pose(300, 300, 350, 350, c=0.1)])]
    tracks = associate(stream_of(frames))
    assert len(tracks) == 1


def test_tie_break_prefers_lower_track_id():
    # two identical tracks compete for one detection
    frames = [(0, [box_pose(10, 10, 50, 50), box_pose(10, 10, 50, 50)]), (1, [box_pose(10, 10, 50, 50)])]
    tracks = associate(stream_of(frames))
    assert tracks[0].frames == [0, 1]
    assert tracks[1].frames == [0]


def random_stream(seed, max_persons=3, max_frames=8):
    rng = np.random.default_rng(seed)
    n_p = int(rng.integers(1, max_persons + 1))
    n_f = int(rng.integers(1, max_frames + 1))
    centers = rng.uniform(30, 170, (n_p, 2))
    sizes = rng.uniform(20, 60, (n_p, 2))
    frames = []
    for f in range(n_f):
        centers += rng.normal(0, 4, centers.shape)
        poses = []
        for p in rng.permutation(n_p):
            if rng.random() < 0.15:
                continue
            (cx, cy), (w, h) = centers[p], sizes[p]
            poses.append(box_pose(max(cx - w / 2, 0), max(cy - h / 2, 0), cx + w / 2, cy + h / 2))
        frames.append((f, poses))
    return stream_of(frames)


def assignment_of(tracks):
    return {(f, d): t.track_id for t in tracks for f, d in t.detections.items()}


def test_greedy_matches_exhaustive_oracle():
    checked, seed = 0, 0
    while checked < 500:
        s = random_stream(seed)
        seed += 1
        expected, separated = optimal_associate(s)
        if not separated:
            continue
        assert assignment_of(associate(s)) == expected, f"seed {seed - 1}"
        checked += 1


@settings(max_examples=200)
@given(st.integers(0, 10 ** 6))
def test_partition_property(seed):
    s = random_stream(seed, max_persons=4, max_frames=12)
    tracks = associate(s)
    assignment = assignment_of(tracks)
    assert len(assignment) == sum(len(t) for t in tracks) == s.num_detections
    for t in tracks:
        assert t.frames == sorted(t.frames)


@settings(max_examples=100)
@given(st.integers(0, 10 ** 6))
def test_permutation_robust_for_separated_people(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    base = [(40 + 150 * k, 40) for k in range(n)]
    frames, perm_frames = [], []
    for f in range(10):
        poses = [box_pose(x + rng.normal(0, 2), y + rng.normal(0, 2), x + 60, y + 80) for x, y in base]
        order = rng.permutation(n)
        frames.append((f, poses))
        perm_frames.append((f, [poses[k] for k in order]))
    a = associate(stream_of(frames))
    b = associate(stream_of(perm_frames))

    def groups(tracks):
        return sorted(tuple((f, p.keypoints.tobytes()) for f, p in t.entries.items()) for t in tracks)

    assert groups(a) == groups(b)


def test_track_file_round_trip(tmp_path):
    s = random_stream(3)
    tracks = associate(s)
    save_tracks(tracks, tmp_path / "t.jsonl", width=1000, height=1000, fps=15.0)
    back, meta = load_tracks(tmp_path / "t.jsonl")
    assert meta == {"width": 1000, "height": 1000, "fps": 15.0}
    assert [t.track_id for t in back] == [t.track_id for t in tracks]
    for a, b in zip(tracks, back):
        assert a.entries == b.entries
        assert a.detections == b.detections


def test_track_file_is_compact_json(tmp_path):
    tracks = associate(random_stream(4))
    save_tracks(tracks, tmp_path / "t.jsonl", width=1000, height=1000, fps=15.0)
    lines = (tmp_path / "t.jsonl").read_text().splitlines()[1:]
    for t, line in zip(tracks, lines):
        expected = {"id": t.track_id, "entries": [
            {"frame": f, "det": t.detections[f], "kp": p.keypoints.tolist()} for f, p in t.entries.items()]}
        assert line == json.dumps(expected, separators=(",", ":"))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.lists(st.tuples(st.integers(0, 99), st.integers(0, 99), st.sampled_from([0.0, 0.2, 0.3, 0.9])),
                         min_size=11, max_size=11), min_size=1, max_size=5))
def test_frame_boxes_match_keypoint_bbox(poses):
    uppers = [UpperBodyPose(np.array(p, dtype=float)) for p in poses]
    got = {d: BBox(*row) for d, row in _frame_boxes(uppers, 0.3)}
    expected = {d: b for d, u in enumerate(uppers) if (b := keypoint_bbox(u, 0.3)) is not None}
    assert got == expected
