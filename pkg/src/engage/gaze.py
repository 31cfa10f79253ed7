"""Head-yaw proxy from facial keypoints and gaze-at-target frequency."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyWindow
from .ingest import L_EAR, L_EYE, NOSE, R_EAR, R_EYE, UpperBodyPose


@dataclass(frozen=True)
class GazeConfig:
    target_yaw: float = 0.0
    tolerance: float = 0.25
    min_visible_conf: float = 0.3

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if not -1.0 <= self.target_yaw <= 1.0:
            raise ValueError("target_yaw must lie in [-1, 1]")


def _keypoints(pose) -> np.ndarray:
    return pose.keypoints if isinstance(pose, UpperBodyPose) else np.asarray(pose, dtype=np.float64)


def head_yaw_proxy(pose: UpperBodyPose | np.ndarray, min_visible_conf: float = 0.3) -> float | None:
    """Signed lateral-distance ratio ``(|n - eL| - |n - eR|) / (|n - eL| + |n - eR|)``.

    Ears are preferred; a missing ear is replaced by the eye on the same
    side. Returns ``None`` when the nose or either side has no visible
    landmark.
    """
    kp = _keypoints(pose)
    vis = kp[:, 2] >= min_visible_conf

    def side(ear: int, eye: int) -> int | None:
        return ear if vis[ear] else (eye if vis[eye] else None)

    left, right = side(L_EAR, L_EYE), side(R_EAR, R_EYE)
    if not vis[NOSE] or left is None or right is None:
        return None
    n = kp[NOSE, :2]
    dl = math.hypot(*(n - kp[left, :2]))
    dr = math.hypot(*(n - kp[right, :2]))
    if dl + dr == 0:
        return 0.0
    return (dl - dr) / (dl + dr)


@dataclass(frozen=True)
class GazeFrequency:
    value: float
    defined_frames: int
    total_frames: int

    @property
    def low_coverage(self) -> bool:
        return self.defined_frames == 0


def gaze_statistics(window: Sequence[UpperBodyPose], config: GazeConfig = GazeConfig()) -> GazeFrequency:
    if len(window) == 0:
        raise EmptyWindow("gaze window is empty")
    hits = defined = 0
    for pose in window:
        r = head_yaw_proxy(pose, config.min_visible_conf)
        if r is None:
            continue
        defined += 1
        hits += abs(r - config.target_yaw) <= config.tolerance
    value = hits / defined if defined else 0.0
    return GazeFrequency(value, defined, len(window))


def gaze_at_target_frequency(window: Sequence[UpperBodyPose], config: GazeConfig = GazeConfig()) -> float:
    """Fraction of frames with a defined yaw proxy that fall within tolerance of the target.

    Frames without a proxy are left out of the denominator; a window with no
    such frame yields 0 (see :func:`gaze_statistics` for the coverage flag).
    """
    return gaze_statistics(window, config).value


def calibrate(poses: Iterable[UpperBodyPose], tolerance: float = 0.25,
              min_visible_conf: float = 0.3) -> GazeConfig:
    """Target yaw as the mean proxy over frames known to look at the target."""
    values = [r for p in poses if (r := head_yaw_proxy(p, min_visible_conf)) is not None]
    if not values:
        raise EmptyWindow("no calibration frame has a defined yaw proxy")
    target = float(np.clip(np.mean(values), -1.0, 1.0))
    return GazeConfig(target_yaw=target, tolerance=tolerance, min_visible_conf=min_visible_conf)


def save_gaze_config(config: GazeConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps({"target_yaw": config.target_yaw,
                                      "tolerance": config.tolerance,
                                      "min_visible_conf": config.min_visible_conf}) + "\n")


def load_gaze_config(path: str | Path) -> GazeConfig:
    obj = json.loads(Path(path).read_text())
    return GazeConfig(**{k: float(v) for k, v in obj.items() if k in asdict(GazeConfig())})
