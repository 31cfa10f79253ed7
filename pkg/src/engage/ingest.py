"""Skeleton stream ingestion.

A session file is UTF-8 JSON Lines. The first line carries the capture
geometry, every following line one frame::

    {"meta": {"width": 3840, "height": 2160, "fps": 15}}
    {"frame": 0, "persons": [{"kp": [[x, y, c], ...17 entries]}]}

Keypoints follow the COCO-17 order. A confidence of 0 marks an undetected
joint.
"""
from __future__ import annotations

import io
import json
import math
from itertools import chain
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

from .errors import (
    ConfidenceOutOfRange,
    CoordinateOutOfRange,
    EmptySession,
    MalformedLine,
    NonMonotonicFrameIndex,
)

COCO_JOINTS = (
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
)
NUM_JOINTS = 17
UPPER_BODY_JOINTS = COCO_JOINTS[:11]
NUM_UPPER = 11

NOSE, L_EYE, R_EYE, L_EAR, R_EAR = 0, 1, 2, 3, 4
L_SHOULDER, R_SHOULDER, L_ELBOW, R_ELBOW, L_WRIST, R_WRIST = 5, 6, 7, 8, 9, 10


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PersonPose:
    """17 COCO keypoints as a read-only ``(17, 3)`` array of ``(x, y, c)``."""

    keypoints: np.ndarray

    def __post_init__(self):
        kp = _frozen(self.keypoints)
        if kp.shape != (NUM_JOINTS, 3):
            raise ValueError(f"expected (17, 3) keypoints, got {kp.shape}")
        object.__setattr__(self, "keypoints", kp)

    def __eq__(self, other):
        return isinstance(other, PersonPose) and np.array_equal(self.keypoints, other.keypoints)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class UpperBodyPose:
    """The 11 upper-body joints (nose, eyes, ears, shoulders, elbows, wrists)."""

    keypoints: np.ndarray

    def __post_init__(self):
        kp = _frozen(self.keypoints)
        if kp.shape != (NUM_UPPER, 3):
            raise ValueError(f"expected (11, 3) keypoints, got {kp.shape}")
        object.__setattr__(self, "keypoints", kp)

    def __eq__(self, other):
        return isinstance(other, UpperBodyPose) and np.array_equal(self.keypoints, other.keypoints)

    __hash__ = None

    @property
    def is_empty(self) -> bool:
        return not bool(np.any(self.keypoints[:, 2] > 0))


@dataclass(frozen=True)
class Frame:
    index: int
    poses: tuple[PersonPose, ...]


@dataclass(frozen=True)
class SessionStream:
    frame_width: int
    frame_height: int
    fps: float
    frames: tuple[Frame, ...]

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))

    @property
    def num_detections(self) -> int:
        return sum(len(f.poses) for f in self.frames)


def select_upper_body(pose: PersonPose) -> UpperBodyPose:
    return UpperBodyPose(pose.keypoints[:NUM_UPPER])


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_real(v) -> bool:
    return (isinstance(v, (int, float)) and not isinstance(v, bool)) and math.isfinite(v)


def _parse_header(obj, line_no: int) -> tuple[int, int, float]:
    if not isinstance(obj, dict) or set(obj) != {"meta"} or not isinstance(obj["meta"], dict):
        raise MalformedLine(line_no, "first line must be a {\"meta\": {...}} header")
    meta = obj["meta"]
    width, height, fps = meta.get("width"), meta.get("height"), meta.get("fps")
    if not (_is_int(width) and width > 0 and _is_int(height) and height > 0):
        raise MalformedLine(line_no, "meta width/height must be positive integers")
    if not (_is_real(fps) and fps > 0):
        raise MalformedLine(line_no, "meta fps must be a positive number")
    return width, height, float(fps)


def _parse_persons_fast(persons: list, width: int, height: int) -> tuple[PersonPose, ...] | None:
    """Vectorized check of a well-formed frame; ``None`` if anything is off."""
    if any(type(p) is not dict or "kp" not in p for p in persons):
        return None
    kps = [p["kp"] for p in persons]
    if any(type(k) is not list or len(k) != NUM_JOINTS for k in kps):
        return None
    triples = list(chain.from_iterable(kps))
    if any(type(t) is not list or len(t) != 3 for t in triples):
        return None
    if not set(map(type, chain.from_iterable(triples))) <= {int, float}:
        return None
    out = np.array(kps, dtype=np.float64).reshape(len(kps), NUM_JOINTS, 3)
    x, y, c = out[..., 0], out[..., 1], out[..., 2]
    if not np.isfinite(out).all() or (c < 0).any() or (c > 1).any():
        return None
    det = c > 0
    inside = (x >= 0) & (x < width) & (y >= 0) & (y < height)
    if not (inside | ~det).all() or not det.any(axis=1).all():
        return None
    out[~det & ((x < 0) | (y < 0)), :2] = 0.0
    return tuple(PersonPose(kp) for kp in out)


def _parse_pose(obj, line_no: int, width: int, height: int) -> PersonPose:
    if not isinstance(obj, dict) or "kp" not in obj:
        raise MalformedLine(line_no, "person entry must be an object with \"kp\"")
    kp = obj["kp"]
    if not isinstance(kp, list) or len(kp) != NUM_JOINTS:
        raise MalformedLine(line_no, f"\"kp\" must hold exactly {NUM_JOINTS} entries")
    out = np.zeros((NUM_JOINTS, 3))
    for j, triple in enumerate(kp):
        if not isinstance(triple, list) or len(triple) != 3 or not all(_is_real(v) for v in triple):
            raise MalformedLine(line_no, f"joint {j} must be a finite [x, y, c] triple")
        x, y, c = (float(v) for v in triple)
        if not 0.0 <= c <= 1.0:
            raise ConfidenceOutOfRange(line_no, j, c)
        if c == 0.0:
            if x < 0 or y < 0:
                x = y = 0.0
        else:
            if not 0.0 <= x < width:
                raise CoordinateOutOfRange(line_no, j, f"x={x} outside [0, {width})")
            if not 0.0 <= y < height:
                raise CoordinateOutOfRange(line_no, j, f"y={y} outside [0, {height})")
        out[j] = (x, y, c)
    if not np.any(out[:, 2] > 0):
        raise MalformedLine(line_no, "pose has no detected joint")
    return PersonPose(out)


def _iter_lines(source) -> Iterable[str]:
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    elif isinstance(source, str):
        source = io.StringIO(source)
    for raw in source:
        if isinstance(raw, (bytes, bytearray)):
            try:
                raw = raw.decode("utf-8")
            except UnicodeDecodeError:
                raw = None
        yield raw


def parse_session(source: bytes | str | IO | Iterable) -> SessionStream:
    """Parse and validate a skeleton JSONL stream.

    ``source`` may be raw bytes, text, or any iterable of lines (e.g. an
    open binary file). Blank lines are ignored. Line numbers in errors are
    1-based.
    """
    header = None
    frames: list[Frame] = []
    last_index = None
    for line_no, line in enumerate(_iter_lines(source), start=1):
        if line is None:
            raise MalformedLine(line_no, "not valid UTF-8")
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedLine(line_no, f"invalid JSON ({exc.msg})") from None
        if header is None:
            header = _parse_header(obj, line_no)
            continue
        if not isinstance(obj, dict) or set(obj) != {"frame", "persons"}:
            raise MalformedLine(line_no, "frame line must have exactly \"frame\" and \"persons\"")
        index, persons = obj["frame"], obj["persons"]
        if not _is_int(index) or index < 0:
            raise MalformedLine(line_no, "frame index must be a non-negative integer")
        if not isinstance(persons, list):
            raise MalformedLine(line_no, "\"persons\" must be a list")
        if last_index is not None and index <= last_index:
            raise NonMonotonicFrameIndex(line_no, index, last_index)
        last_index = index
        width, height, _ = header
        poses = _parse_persons_fast(persons, width, height)
        if poses is None:
            # slow path: locate and report the first offending entry
            poses = tuple(_parse_pose(p, line_no, width, height) for p in persons)
        frames.append(Frame(index, poses))
    if header is None or not frames:
        raise EmptySession("session contains no frames")
    width, height, fps = header
    return SessionStream(width, height, fps, tuple(frames))


def load_session(path: str | Path) -> SessionStream:
    with open(path, "rb") as fh:
        return parse_session(fh)


def serialize_session(session: SessionStream) -> bytes:
    lines = [json.dumps({"meta": {"width": session.frame_width,
                                  "height": session.frame_height,
                                  "fps": session.fps}})]
    for frame in session.frames:
        # same text as json.dumps(..., separators=(",", ":")); floats use repr
        persons = ",".join('{"kp":[' + ",".join(f"[{x!r},{y!r},{c!r}]" for x, y, c in p.keypoints.tolist()) + "]}"
                           for p in frame.poses)
        lines.append(f'{{"frame":{frame.index},"persons":[{persons}]}}')
    return ("\n".join(lines) + "\n").encode("utf-8")


def save_session(session: SessionStream, path: str | Path) -> None:
    Path(path).write_bytes(serialize_session(session))


def upper_body_sequence(poses: Sequence[UpperBodyPose]) -> np.ndarray:
    """Stack poses into an ``(n, 11, 3)`` array."""
    return np.stack([p.keypoints for p in poses]) if poses else np.zeros((0, NUM_UPPER, 3))
