import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from engage.errors import EmptyWindow
from engage.gaze import (
    GazeConfig,
    calibrate,
    gaze_at_target_frequency,
    gaze_statistics,
    head_yaw_proxy,
    load_gaze_config,
    save_gaze_config,
)
from engage.ingest import L_EAR, L_EYE, NOSE, R_EAR, R_EYE, UpperBodyPose


def face(nose, l_ear=None, r_ear=None, l_eye=None, r_eye=None, c=0.9):
    kp = np.zeros((11, 3))
    for j, p in ((NOSE, nose), (L_EAR, l_ear), (R_EAR, r_ear), (L_EYE, l_eye), (R_EYE, r_eye)):
        if p is not None:
            kp[j] = (p[0], p[1], c)
    return UpperBodyPose(kp)


def test_symmetric_face():
    assert head_yaw_proxy(face((50, 50), (70, 45), (30, 45))) == 0.0


def test_nose_on_right_ear():
    assert head_yaw_proxy(face((30, 45), (70, 45), (30, 45))) == 1.0


def test_hand_ratio():
    assert head_yaw_proxy(face((0, 0), (30, 0), (-10, 0))) == pytest.approx(0.5)


def test_eye_substitutes_missing_ear():
    with_eye = head_yaw_proxy(face((0, 0), l_ear=None, r_ear=(-10, 0), l_eye=(30, 0)))
    assert with_eye == pytest.approx(0.5)


def test_undefined_without_lateral_landmark():
    assert head_yaw_proxy(face((0, 0), l_ear=(30, 0))) is None
    assert head_yaw_proxy(face(None, (30, 0), (-10, 0))) is None
    low = face((0, 0), (30, 0), (-10, 0), c=0.2)
    assert head_yaw_proxy(low, min_visible_conf=0.3) is None


coords = st.floats(-500, 500, allow_nan=False)


@given(st.lists(coords, min_size=6, max_size=6), st.floats(0.1, 10), coords, coords)
def test_proxy_similarity_invariance(xs, s, dx, dy):
    n, l, r = (xs[0], xs[1]), (xs[2], xs[3]), (xs[4], xs[5])
    assume(np.hypot(n[0] - l[0], n[1] - l[1]) > 1 and np.hypot(n[0] - r[0], n[1] - r[1]) > 1)
    base = head_yaw_proxy(face(n, l, r))
    moved = head_yaw_proxy(face(*[(s * p[0] + dx, s * p[1] + dy) for p in (n, l, r)]))
    assert base == pytest.approx(moved, abs=1e-9)


@given(st.lists(coords, min_size=6, max_size=6))
def test_mirror_negates(xs):
    n, l, r = (xs[0], xs[1]), (xs[2], xs[3]), (xs[4], xs[5])
    mirrored = face((-n[0], n[1]), (-r[0], r[1]), (-l[0], l[1]))
    assert head_yaw_proxy(mirrored) == pytest.approx(-head_yaw_proxy(face(n, l, r)), abs=1e-12)


LOOK = face((50, 50), (70, 45), (30, 45))          # proxy 0
AWAY = face((0, 0), (30, 0), (-10, 0))             # proxy 0.5
BLIND = face((0, 0))                               # undefined


def test_frequency_counts():
    assert gaze_at_target_frequency([LOOK] * 5) == 1.0
    assert gaze_at_target_frequency([LOOK, AWAY] * 3) == 0.5
    window = [BLIND] * 4 + [LOOK] * 3 + [AWAY] * 3
    assert gaze_at_target_frequency(window) == 0.5


def test_low_coverage_flag():
    stats = gaze_statistics([BLIND, BLIND])
    assert stats.value == 0.0 and stats.low_coverage
    assert not gaze_statistics([LOOK]).low_coverage


def test_empty_window():
    with pytest.raises(EmptyWindow):
        gaze_at_target_frequency([])


def test_tolerance_boundary_is_inclusive():
    assert gaze_at_target_frequency([AWAY], GazeConfig(target_yaw=0.0, tolerance=0.5)) == 1.0


def test_order_invariance():
    window = [LOOK, AWAY, BLIND, LOOK, AWAY, LOOK]
    rng = np.random.default_rng(0)
    for _ in range(5):
        perm = [window[k] for k in rng.permutation(len(window))]
        assert gaze_at_target_frequency(perm) == gaze_at_target_frequency(window)


def test_calibrate_and_round_trip(tmp_path):
    cfg = calibrate([AWAY, LOOK, BLIND], tolerance=0.3)
    assert cfg.target_yaw == pytest.approx(0.25)
    save_gaze_config(cfg, tmp_path / "g.json")
    assert load_gaze_config(tmp_path / "g.json") == cfg
    with pytest.raises(EmptyWindow):
        calibrate([BLIND])


def test_config_validation():
    with pytest.raises(ValueError):
        GazeConfig(tolerance=0)
    with pytest.raises(ValueError):
        GazeConfig(target_yaw=1.5)
