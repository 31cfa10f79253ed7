"""Deterministic synthetic classroom sessions.

Each action class is a closed-form 2-D kinematic sketch of the upper body,
expressed in body units (shoulder width = 1, origin at the shoulder midpoint,
y pointing down) and mapped to pixels by a per-student seat position and
scale. Seeded Gaussian jitter is added on top of the template.

Every template comes with a signature check in :data:`SIGNATURES`; the
checks work in body units recovered from the shoulders, so they apply to
any seat and scale.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidMix
from .features import (
    AMBIGUOUS_ACTIONS,
    DISENGAGED,
    DISENGAGED_ACTIONS,
    ENGAGED,
    ENGAGED_ACTIONS,
    NUM_ACTIONS,
    ActionLabel,
)
from .gaze import head_yaw_proxy
from .ingest import (
    L_EAR, L_ELBOW, L_EYE, L_SHOULDER, L_WRIST, NOSE, NUM_JOINTS, NUM_UPPER,
    R_EAR, R_ELBOW, R_EYE, R_SHOULDER, R_WRIST,
    Frame, PersonPose, SessionStream, UpperBodyPose,
)

A = ActionLabel

REST_L_ELBOW = (0.62, 0.55)
REST_L_WRIST = (0.30, 0.78)
REST_R_ELBOW = (-0.62, 0.55)
REST_R_WRIST = (-0.30, 0.78)
MOUTH = (0.0, -0.44)
HEAD_CONF = 0.85
BODY_CONF = 0.92


@dataclass(frozen=True)
class ClipParams:
    """Per-clip template parameters (everything except the jitter)."""

    origin: tuple[float, float]
    scale: float
    phase: float
    freq: float
    amp: float
    lean: float
    gaze_yaw: float
    variant: int


@dataclass
class ActionClip:
    label: ActionLabel
    keypoints: np.ndarray   # (n, 11, 3) in pixels
    params: ClipParams
    fps: float

    @property
    def poses(self) -> list[UpperBodyPose]:
        return [UpperBodyPose(k) for k in self.keypoints]

    def __len__(self):
        return len(self.keypoints)


def _smooth(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3 - 2 * u)


def _pulse(t, period, rise, hold, phase=0.0):
    """0 -> 1 -> 0 envelope repeating every ``period`` seconds."""
    tau = np.mod(t + phase, period)
    up = _smooth(tau / rise)
    down = 1.0 - _smooth((tau - rise - hold) / rise)
    return np.minimum(up, down)


def _lerp(a, b, w):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return a[None, :] * (1 - w)[:, None] + b[None, :] * w[:, None]


def _const(p, n):
    return np.tile(np.asarray(p, float), (n, 1))


def _head(n, yaw, nod, tilt):
    """Nose, eyes and ears on a cylinder turned by ``yaw`` (radians)."""
    yaw = np.broadcast_to(yaw, (n,)).astype(float)
    dy = 0.08 * np.broadcast_to(nod, (n,)) - 0.05 * np.broadcast_to(tilt, (n,))
    nose_drop = 0.05 * np.broadcast_to(nod, (n,)) - 0.06 * np.broadcast_to(tilt, (n,))

    def pt(azimuth, radius, y):
        return np.stack([radius * np.sin(azimuth + yaw), y + dy], axis=1)

    nose = pt(0.0, 0.20, -0.55)
    nose[:, 1] += nose_drop
    return {
        NOSE: nose,
        L_EYE: pt(0.45, 0.20, -0.66),
        R_EYE: pt(-0.45, 0.20, -0.66),
        L_EAR: pt(math.pi / 2, 0.22, -0.60),
        R_EAR: pt(-math.pi / 2, 0.22, -0.60),
    }


def _arms_rest(n):
    return {L_ELBOW: _const(REST_L_ELBOW, n), L_WRIST: _const(REST_L_WRIST, n),
            R_ELBOW: _const(REST_R_ELBOW, n), R_WRIST: _const(REST_R_WRIST, n)}


def _template_units(action: ActionLabel, t: np.ndarray, p: ClipParams) -> np.ndarray:
    """Joint positions in body units, shape (n, 11, 2)."""
    n = len(t)
    w = 2 * np.pi * p.freq
    ph, amp = p.phase, p.amp
    yaw = np.full(n, p.gaze_yaw)
    nod = np.zeros(n)
    tilt = np.zeros(n)
    arms = _arms_rest(n)

    if action == A.writing:
        # small fast strokes of the right hand on the desk, head down
        arms[R_WRIST] = np.stack([-0.12 + 0.05 * amp * np.sin(w * 2.5 * t + ph),
                                  0.70 + 0.03 * amp * np.sin(w * 5.0 * t + ph)], axis=1)
        arms[R_ELBOW] = _const((-0.55, 0.55), n)
        arms[L_WRIST] = _const((0.28, 0.74), n)
        nod[:] = 1.0
    elif action == A.raising_hand:
        up = _smooth((t - 0.1) / 0.8)
        arms[R_ELBOW] = _lerp(REST_R_ELBOW, (-0.62, -0.45), up)
        sway = 0.03 * amp * np.sin(w * 0.5 * t + ph)
        arms[R_WRIST] = _lerp(REST_R_WRIST, (-0.62, -1.15), up)
        arms[R_WRIST][:, 0] += sway * up
    elif action == A.reading:
        # book held with both hands; periodic page turn by the right hand
        turn = _pulse(t, 5.0 / p.freq, 0.5, 0.2, ph)
        arms[L_WRIST] = _const((0.22, 0.62), n)
        arms[L_ELBOW] = _const((0.60, 0.50), n)
        arms[R_WRIST] = _lerp((-0.22, 0.62), (0.15, 0.55), turn)
        arms[R_ELBOW] = _lerp((-0.60, 0.50), (-0.45, 0.45), turn)
        nod[:] = 1.2
    elif action == A.discussing:
        side = 1.0 if p.variant == 0 else -1.0
        yaw = side * (0.8 + 0.2 * np.sin(w * 0.3 * t + ph))
        arms[R_WRIST] = np.stack([-0.2 + 0.15 * amp * np.sin(w * 0.8 * t + ph),
                                  0.25 + 0.10 * amp * np.sin(w * 1.3 * t)], axis=1)
        arms[R_ELBOW] = _const((-0.60, 0.45), n)
    elif action == A.typing_keyboard:
        arms[L_WRIST] = np.stack([np.full(n, 0.32), 0.82 + 0.025 * amp * np.sin(w * 4.0 * t + ph)], axis=1)
        arms[R_WRIST] = np.stack([np.full(n, -0.32), 0.82 + 0.025 * amp * np.sin(w * 4.0 * t + ph + np.pi)], axis=1)
        arms[L_ELBOW] = _const((0.68, 0.60), n)
        arms[R_ELBOW] = _const((-0.68, 0.60), n)
        nod[:] = 0.5
    elif action == A.playing_phone:
        scroll = 0.02 * amp * np.sin(w * 1.5 * t + ph)
        arms[L_WRIST] = np.stack([np.full(n, 0.06), 0.45 + scroll], axis=1)
        arms[R_WRIST] = np.stack([np.full(n, -0.06), 0.45 + scroll], axis=1)
        arms[L_ELBOW] = _const((0.55, 0.60), n)
        arms[R_ELBOW] = _const((-0.55, 0.60), n)
        nod[:] = 1.5
    elif action == A.wiping_face:
        # right hand sweeps across the face
        e = _pulse(t, 3.0 / p.freq, 0.5, 1.2, ph)
        sweep = np.stack([0.15 * amp * np.cos(w * 1.5 * t + ph), np.full(n, -0.50)], axis=1)
        arms[R_WRIST] = REST_R_WRIST * (1 - e)[:, None] + sweep * e[:, None]
        arms[R_ELBOW] = _lerp(REST_R_ELBOW, (-0.50, -0.05), e)
    elif action == A.yawning:
        # left hand covers the mouth, head tilts back, right arm stretches out
        e = _pulse(t, 5.0 / p.freq, 0.7, 1.6, ph)
        arms[L_WRIST] = _lerp(REST_L_WRIST, (0.04, -0.42), e)
        arms[L_ELBOW] = _lerp(REST_L_ELBOW, (0.45, 0.05), e)
        arms[R_WRIST] = _lerp(REST_R_WRIST, (-1.05, -0.35), e)
        arms[R_ELBOW] = _lerp(REST_R_ELBOW, (-0.85, -0.10), e)
        tilt = e.copy()
    elif action == A.checking_time:
        e = _pulse(t, 4.0 / p.freq, 0.4, 1.2, ph)
        arms[L_WRIST] = _lerp(REST_L_WRIST, (0.10, 0.15), e)
        arms[L_ELBOW] = _lerp(REST_L_ELBOW, (0.55, 0.30), e)
        nod = 1.2 * e
        yaw = yaw * (1 - e) + 0.25 * e
    elif action == A.fiddling_hair:
        arms[R_WRIST] = np.stack([-0.30 + 0.06 * amp * np.cos(w * 1.5 * t + ph),
                                  -0.72 + 0.06 * amp * np.sin(w * 1.5 * t + ph)], axis=1)
        arms[R_ELBOW] = _const((-0.65, -0.15), n)
    elif action == A.drinking:
        e = _pulse(t, 6.0 / p.freq, 0.8, 3.0, ph)
        arms[R_WRIST] = _lerp(REST_R_WRIST, MOUTH, e)
        arms[R_ELBOW] = _lerp(REST_R_ELBOW, (-0.70, 0.00), e)
        arms[L_WRIST] = _const((0.25, 0.76), n)
        tilt = e.copy()
    elif action == A.eating:
        e = 0.5 - 0.5 * np.cos(2 * np.pi * t / (2.0 / p.freq) + ph)
        arms[R_WRIST] = _lerp(REST_R_WRIST, (-0.02, -0.40), e)
        arms[R_ELBOW] = _lerp(REST_R_ELBOW, (-0.55, 0.15), e)
        arms[L_WRIST] = _const((0.18, 0.70), n)
    elif action == A.crossing_arms_or_supporting_head:
        sway = 0.015 * np.sin(w * 0.4 * t + ph)
        if p.variant == 0:
            arms[L_WRIST] = np.stack([-0.28 + sway, np.full(n, 0.32)], axis=1)
            arms[R_WRIST] = np.stack([0.28 + sway, np.full(n, 0.32)], axis=1)
            arms[L_ELBOW] = _const((0.55, 0.45), n)
            arms[R_ELBOW] = _const((-0.55, 0.45), n)
        else:
            arms[R_WRIST] = np.stack([-0.02 + sway, np.full(n, -0.40)], axis=1)
            arms[R_ELBOW] = _const((-0.25, 0.75), n)
            nod[:] = -0.3
    else:  # pragma: no cover
        raise ValueError(action)

    joints = np.zeros((n, NUM_UPPER, 2))
    for j, xy in _head(n, yaw, nod, tilt).items():
        joints[:, j] = xy
    joints[:, L_SHOULDER] = (0.5, 0.0)
    joints[:, R_SHOULDER] = (-0.5, 0.0)
    for j, xy in arms.items():
        joints[:, j] = xy
    joints[:, :, 0] += p.lean
    return joints


def action_template(action: ActionLabel, t: np.ndarray, params: ClipParams) -> np.ndarray:
    """Noise-free keypoints ``(n, 11, 3)`` in pixels for times ``t`` (seconds)."""
    units = _template_units(ActionLabel(action), np.asarray(t, dtype=np.float64), params)
    out = np.empty(units.shape[:2] + (3,))
    out[..., 0] = params.origin[0] + params.scale * units[..., 0]
    out[..., 1] = params.origin[1] + params.scale * units[..., 1]
    out[..., 2] = BODY_CONF
    out[:, :5, 2] = HEAD_CONF
    return out


def default_gaze_yaw(action: ActionLabel, rng: np.random.Generator, on_task: bool | None = None) -> float:
    """Head yaw toward the target (near 0) when on task, turned away otherwise."""
    if on_task is None:
        if action in ENGAGED_ACTIONS:
            on_task = True
        elif action in DISENGAGED_ACTIONS:
            on_task = False
        else:
            on_task = bool(rng.random() < 0.5)
    if on_task:
        return float(rng.uniform(-0.1, 0.1))
    return float(rng.choice([-1.0, 1.0]) * rng.uniform(0.6, 1.0))


def draw_params(action: ActionLabel, rng: np.random.Generator, origin=(320.0, 300.0),
                scale: float | None = None, gaze_yaw: float | None = None,
                on_task: bool | None = None) -> ClipParams:
    scale = float(rng.uniform(60.0, 85.0)) if scale is None else float(scale)
    phase = float(rng.uniform(0, 2 * np.pi))
    freq = float(rng.uniform(0.85, 1.15))
    amp = float(rng.uniform(0.85, 1.15))
    lean = float(rng.uniform(-0.05, 0.05))
    variant = int(rng.integers(0, 2))
    yaw = default_gaze_yaw(action, rng, on_task) if gaze_yaw is None else float(gaze_yaw)
    return ClipParams((float(origin[0]), float(origin[1])), scale, phase, freq, amp, lean, yaw, variant)


def generate_action_clip(action: ActionLabel, seconds: float, fps: float = 15.0,
                         noise_sigma: float = 1.5, seed: int = 0, origin=(320.0, 300.0),
                         scale: float | None = None, gaze_yaw: float | None = None,
                         on_task: bool | None = None, start_time: float = 0.0) -> ActionClip:
    """One labelled clip: template of ``action`` plus seeded jitter of ``noise_sigma`` px."""
    if not seconds > 0:
        raise ValueError("seconds must be > 0")
    action = ActionLabel(action)
    rng = np.random.default_rng(seed)
    params = draw_params(action, rng, origin, scale, gaze_yaw, on_task)
    n = max(1, round(seconds * fps))
    t = start_time + np.arange(n) / fps
    kp = action_template(action, t, params)
    if noise_sigma > 0:
        kp[..., :2] += rng.normal(0.0, noise_sigma, size=kp[..., :2].shape)
    kp[..., :2] = np.maximum(kp[..., :2], 0.0)
    return ActionClip(action, kp, params, fps)


# ---------------------------------------------------------------- signatures

def _units(kp: np.ndarray) -> np.ndarray:
    """Express keypoints in body units using the median shoulder geometry."""
    ls, rs = kp[:, L_SHOULDER, :2], kp[:, R_SHOULDER, :2]
    width = np.median(np.linalg.norm(ls - rs, axis=1))
    mid = np.median((ls + rs) / 2, axis=0)
    return (kp[..., :2] - mid) / width


def _dist(u, a, b):
    return np.linalg.norm(u[:, a] - u[:, b], axis=1)


def _sig_writing(kp, u):
    # right wrist below the shoulder line, stroke amplitude under 15 px
    below = np.all(kp[:, R_WRIST, 1] > kp[:, R_SHOULDER, 1])
    x = kp[:, R_WRIST, 0]
    return bool(below and (np.percentile(x, 95) - np.percentile(x, 5)) / 2 < 15.0)


def _sig_raising_hand(kp, u):
    return bool(np.mean(kp[:, R_WRIST, 1] < kp[:, R_SHOULDER, 1]) >= 0.5)


def _sig_reading(kp, u):
    below = (u[:, L_WRIST, 1] > 0.3) & (u[:, R_WRIST, 1] > 0.3)
    central = (np.abs(u[:, L_WRIST, 0]) < 0.45) & (np.abs(u[:, R_WRIST, 0]) < 0.45)
    return bool(np.mean(below & central) >= 0.8)


def _sig_discussing(kp, u):
    yaw = np.array([head_yaw_proxy(k) if head_yaw_proxy(k) is not None else 0.0 for k in kp])
    gesture = (u[:, R_WRIST, 1] > 0.0) & (u[:, R_WRIST, 1] < 0.5)
    return bool(np.mean(np.abs(yaw) >= 0.3) >= 0.6 and np.mean(gesture) >= 0.5)


def _sig_typing(kp, u):
    sep = u[:, L_WRIST, 0] - u[:, R_WRIST, 0]
    low = (u[:, L_WRIST, 1] > 0.6) & (u[:, R_WRIST, 1] > 0.6)
    return bool(np.mean((sep > 0.5) & low) >= 0.8)


def _sig_playing_phone(kp, u):
    sep = np.abs(u[:, L_WRIST, 0] - u[:, R_WRIST, 0])
    mid = (u[:, L_WRIST, 1] > 0.25) & (u[:, L_WRIST, 1] < 0.65)
    return bool(np.mean((sep < 0.25) & mid) >= 0.8)


def _sig_wiping_face(kp, u):
    near = _dist(u, R_WRIST, NOSE) < 0.35
    if near.mean() < 0.25:
        return False
    xs = u[near, R_WRIST, 0]
    return bool(xs.max() - xs.min() > 0.15)


def _sig_yawning(kp, u):
    d = _dist(u, L_WRIST, NOSE)
    return bool(np.mean(d < 0.35) >= 0.2 and np.mean(d > 0.8) >= 0.2)


def _sig_checking_time(kp, u):
    raised = (u[:, L_WRIST, 1] > 0.0) & (u[:, L_WRIST, 1] < 0.35) & (np.abs(u[:, L_WRIST, 0]) < 0.3)
    rest = u[:, L_WRIST, 1] > 0.6
    return bool(raised.mean() >= 0.2 and rest.mean() >= 0.2)


def _sig_fiddling_hair(kp, u):
    above = kp[:, R_WRIST, 1] < kp[:, R_SHOULDER, 1]
    near = _dist(u, R_WRIST, R_EAR) < 0.45
    return bool(np.mean(above & near) >= 0.6)


def _sig_drinking(kp, u):
    return bool(np.mean(_dist(u, R_WRIST, NOSE) < 0.3) >= 0.2)


def _approach_cycles(d, near, far):
    cycles, state = 0, "far"
    for v in d:
        if state == "far" and v < near:
            cycles, state = cycles + 1, "near"
        elif state == "near" and v > far:
            state = "far"
    return cycles


def _sig_eating(kp, u):
    d = _dist(u, R_WRIST, NOSE)
    per_10s = len(kp) / 150.0
    return _approach_cycles(d, 0.45, 0.9) >= max(1, int(3 * per_10s))


def _sig_crossing_or_supporting(kp, u):
    crossed = u[:, L_WRIST, 0] < u[:, R_WRIST, 0]
    chin = (_dist(u, R_WRIST, NOSE) < 0.4) & (u[:, R_ELBOW, 1] > 0.0)
    return bool(np.mean(crossed) >= 0.8 or np.mean(chin) >= 0.8)


SIGNATURES = {
    A.writing: _sig_writing,
    A.raising_hand: _sig_raising_hand,
    A.reading: _sig_reading,
    A.discussing: _sig_discussing,
    A.typing_keyboard: _sig_typing,
    A.playing_phone: _sig_playing_phone,
    A.wiping_face: _sig_wiping_face,
    A.yawning: _sig_yawning,
    A.checking_time: _sig_checking_time,
    A.fiddling_hair: _sig_fiddling_hair,
    A.drinking: _sig_drinking,
    A.eating: _sig_eating,
    A.crossing_arms_or_supporting_head: _sig_crossing_or_supporting,
}


def check_signature(action: ActionLabel, keypoints: np.ndarray) -> bool:
    """Whether a clip ``(n, 11, 3)`` shows the kinematic signature of ``action``."""
    kp = np.asarray(keypoints, dtype=np.float64)
    return SIGNATURES[ActionLabel(action)](kp, _units(kp))


# ---------------------------------------------------------------- sessions

@dataclass(frozen=True)
class SeatLayout:
    rows: int = 3
    cols: int = 6
    spacing_x: float = 300.0
    spacing_y: float = 330.0
    origin_x: float = 200.0
    origin_y: float = 230.0

    def seat(self, k: int) -> tuple[float, float]:
        if k >= self.rows * self.cols:
            raise ValueError(f"seat layout holds only {self.rows * self.cols} students")
        r, c = divmod(k, self.cols)
        return (self.origin_x + c * self.spacing_x, self.origin_y + r * self.spacing_y)


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    students: int = 10
    duration_seconds: float = 240.0
    fps: float = 15.0
    noise_sigma: float = 1.5
    class_mix: tuple[float, ...] | None = None
    seat_layout: SeatLayout = SeatLayout()
    # engagement_script[s][w]: True on task, False off task
    engagement_script: tuple[tuple[bool, ...], ...] | None = None
    frame_width: int = 1920
    frame_height: int = 1080
    window_seconds: float = 120.0
    subclip_seconds: float = 10.0
    schedule: str = "random"         # or "balanced": equal sub-clip counts per class
    cross_set_rate: float = 0.1      # chance a sub-clip comes from the other engagement set
    shuffle_persons: bool = True
    blend_seconds: float = 0.5       # cross-fade at sub-clip boundaries

    def __post_init__(self):
        if self.students < 1:
            raise ValueError("students must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.schedule not in ("random", "balanced"):
            raise ValueError("schedule must be 'random' or 'balanced'")

    @property
    def mix(self) -> np.ndarray:
        if self.class_mix is None:
            return np.full(NUM_ACTIONS, 1.0 / NUM_ACTIONS)
        mix = np.asarray(self.class_mix, dtype=np.float64)
        if mix.shape != (NUM_ACTIONS,) or (mix < 0).any() or not math.isclose(mix.sum(), 1.0, abs_tol=1e-9):
            raise InvalidMix("class_mix must hold 13 non-negative proportions summing to 1")
        return mix


@dataclass
class SubclipTruth:
    index: int
    window: int
    start: int
    stop: int
    action: ActionLabel


@dataclass
class StudentTruth:
    student: int
    seat: tuple[float, float]
    scale: float
    subclips: list[SubclipTruth]
    windows: dict[int, bool | None]
    det_index: np.ndarray            # position in each frame's person list


@dataclass
class SessionTruth:
    fps: float
    num_frames: int
    window_seconds: float
    subclip_seconds: float
    students: list[StudentTruth]

    def to_json(self) -> dict:
        return {
            "fps": self.fps, "num_frames": self.num_frames,
            "window_seconds": self.window_seconds, "subclip_seconds": self.subclip_seconds,
            "students": [{
                "student": s.student, "seat": list(s.seat), "scale": s.scale,
                "subclips": [{"index": c.index, "window": c.window, "start": c.start,
                              "stop": c.stop, "action": c.action.name} for c in s.subclips],
                "windows": [{"window": w, "engaged": e} for w, e in sorted(s.windows.items())],
                "det_index": s.det_index.tolist(),
            } for s in self.students],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SessionTruth":
        students = []
        for s in obj["students"]:
            students.append(StudentTruth(
                int(s["student"]), tuple(s["seat"]), float(s["scale"]),
                [SubclipTruth(int(c["index"]), int(c["window"]), int(c["start"]), int(c["stop"]),
                              ActionLabel[c["action"]]) for c in s["subclips"]],
                {int(w["window"]): w["engaged"] for w in s["windows"]},
                np.asarray(s["det_index"], dtype=np.int64)))
        return cls(float(obj["fps"]), int(obj["num_frames"]), float(obj["window_seconds"]),
                   float(obj["subclip_seconds"]), students)

    def action_at(self, student: int, frame: int) -> ActionLabel:
        for c in self.students[student].subclips:
            if c.start <= frame < c.stop:
                return c.action
        raise KeyError(frame)

    def engagement_at(self, student: int, frame: int) -> bool | None:
        wlen = round(self.window_seconds * self.fps)
        return self.students[student].windows.get(frame // wlen)


def save_truth(truth: SessionTruth, path: str | Path) -> None:
    Path(path).write_text(json.dumps(truth.to_json(), separators=(",", ":")) + "\n")


def load_truth(path: str | Path) -> SessionTruth:
    return SessionTruth.from_json(json.loads(Path(path).read_text()))


def scripted_engagement(students: int, windows: int, disengaged_rate: float = 0.2,
                        seed: int = 0) -> tuple[tuple[bool, ...], ...]:
    """On/off-task schedule whose class-level disengagement varies by window.

    Each window draws its own disengagement probability around
    ``disengaged_rate``; students are then off task independently.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    conc = 4.0
    a, b = disengaged_rate * conc, (1 - disengaged_rate) * conc
    rates = rng.beta(a, b, size=windows)
    off = rng.random((students, windows)) < rates[None, :]
    return tuple(tuple(bool(not v) for v in row) for row in off)


@dataclass
class SyntheticSession:
    stream: SessionStream
    truth: SessionTruth


def _draw_action(rng, mix: np.ndarray, on_task: bool | None, cross_rate: float) -> ActionLabel:
    if on_task is None:
        return ActionLabel(int(rng.choice(NUM_ACTIONS, p=mix)))
    if rng.random() < cross_rate:
        on_task = not on_task
    allowed = set(ENGAGED_ACTIONS if on_task else DISENGAGED_ACTIONS) | set(AMBIGUOUS_ACTIONS)
    mask = np.array([k in allowed for k in range(NUM_ACTIONS)])
    p = mix * mask
    if p.sum() == 0:
        p = mix
    return ActionLabel(int(rng.choice(NUM_ACTIONS, p=p / p.sum())))


def generate_session(config: SynthConfig) -> SyntheticSession:
    """A full synthetic session with ground truth for every student."""
    mix = config.mix
    fps = config.fps
    n_frames = max(1, round(config.duration_seconds * fps))
    slen = max(1, round(config.subclip_seconds * fps))
    wlen = max(1, round(config.window_seconds * fps))
    n_sub = -(-n_frames // slen)
    n_windows = -(-n_frames // wlen)
    script = config.engagement_script
    if script is not None and (len(script) < config.students
                               or any(len(row) < n_windows for row in script[:config.students])):
        raise ValueError("engagement script does not cover every student and window")

    root = np.random.SeedSequence(config.seed)
    sched_rng = np.random.default_rng(root.spawn(1)[0])
    balanced = None
    if config.schedule == "balanced":
        total = config.students * n_sub
        base = np.arange(total) % NUM_ACTIONS
        balanced = sched_rng.permutation(base).reshape(config.students, n_sub)

    keypoints = np.zeros((config.students, n_frames, NUM_UPPER, 3))
    students = []
    student_seeds = root.spawn(config.students + 1)
    for s in range(config.students):
        srng = np.random.default_rng(student_seeds[s])
        seat = config.seat_layout.seat(s)
        scale = float(srng.uniform(60.0, 85.0))
        windows = {w: (bool(script[s][w]) if script is not None else None) for w in range(n_windows)}
        subclips = []
        for k in range(n_sub):
            start, stop = k * slen, min((k + 1) * slen, n_frames)
            w = start // wlen
            on_task = windows[w]
            if balanced is not None:
                action = ActionLabel(int(balanced[s, k]))
            else:
                action = _draw_action(srng, mix, on_task, config.cross_set_rate)
            clip_seed = int(srng.integers(0, 2 ** 63))
            clip = generate_action_clip(action, (stop - start) / fps, fps, config.noise_sigma,
                                        clip_seed, origin=seat, scale=scale, on_task=on_task)
            kp = clip.keypoints[: stop - start]
            if start > 0 and config.blend_seconds > 0:
                # ease in from the previous pose so boxes move continuously
                b = min(len(kp), max(1, round(config.blend_seconds * fps)))
                wgt = _smooth((np.arange(b) + 1) / (b + 1))[:, None, None]
                kp[:b] = keypoints[s, start - 1] * (1 - wgt) + kp[:b] * wgt
            keypoints[s, start:stop] = kp
            subclips.append(SubclipTruth(k, w, start, stop, action))
        students.append(StudentTruth(s, seat, scale, subclips, windows, np.zeros(n_frames, np.int64)))

    np.clip(keypoints[..., 0], 0.0, config.frame_width - 1e-3, out=keypoints[..., 0])
    np.clip(keypoints[..., 1], 0.0, config.frame_height - 1e-3, out=keypoints[..., 1])

    order_rng = np.random.default_rng(student_seeds[-1])
    frames = []
    full = np.zeros((NUM_JOINTS, 3))
    for f in range(n_frames):
        order = order_rng.permutation(config.students) if config.shuffle_persons else np.arange(config.students)
        poses = []
        for d, s in enumerate(order):
            full[:NUM_UPPER] = keypoints[s, f]
            poses.append(PersonPose(full))
            students[s].det_index[f] = d
        frames.append(Frame(f, tuple(poses)))
    stream = SessionStream(config.frame_width, config.frame_height, fps, tuple(frames))
    truth = SessionTruth(fps, n_frames, config.window_seconds, config.subclip_seconds, students)
    return SyntheticSession(stream, truth)


def truth_tracks(truth: SessionTruth, stream: SessionStream):
    """Ground-truth tracks (one per student) rebuilt from the detection indices."""
    from .ingest import select_upper_body
    from .tracker import Track

    tracks = []
    for st in truth.students:
        t = Track(st.student)
        for frame in stream.frames:
            d = int(st.det_index[frame.index])
            t.entries[frame.index] = select_upper_body(frame.poses[d])
            t.detections[frame.index] = d
        tracks.append(t)
    return tracks


def match_tracks_to_students(tracks, truth: SessionTruth) -> dict[int, int]:
    """Map each track id to the student owning most of its detections."""
    out = {}
    for t in tracks:
        votes = np.zeros(len(truth.students), dtype=np.int64)
        for f, d in t.detections.items():
            if 0 <= f < truth.num_frames:
                for st in truth.students:
                    if st.det_index[f] == d:
                        votes[st.student] += 1
                        break
        if votes.sum():
            out[t.track_id] = int(np.argmax(votes))
    return out


def parse_config_text(text: str, base: SynthConfig = SynthConfig()) -> SynthConfig:
    """Build a config from flat ``key = value`` lines (``#`` comments allowed).

    Recognized extra keys: ``disengaged_rate`` (generates a scripted
    engagement schedule), ``seat_rows``/``seat_cols``/``seat_spacing_x``/
    ``seat_spacing_y``, and ``class_mix`` as comma-separated proportions.
    """
    values: dict[str, str] = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line or line.startswith("["):
            continue
        if "=" not in line:
            raise ValueError(f"expected key = value, got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        values[k] = v
    return config_from_mapping(values, base)


def config_from_mapping(values: dict, base: SynthConfig = SynthConfig()) -> SynthConfig:
    kwargs = {}
    casts = {"seed": int, "students": int, "duration_seconds": float, "fps": float,
             "noise_sigma": float, "blend_seconds": float, "frame_width": int, "frame_height": int,
             "window_seconds": float, "subclip_seconds": float, "schedule": str,
             "cross_set_rate": float}
    for k, cast in casts.items():
        if k in values:
            kwargs[k] = cast(values[k])
    if "shuffle_persons" in values:
        kwargs["shuffle_persons"] = str(values["shuffle_persons"]).lower() in ("1", "true", "yes")
    if "class_mix" in values:
        kwargs["class_mix"] = tuple(float(v) for v in str(values["class_mix"]).split(","))
    seat = {}
    for k, field_name, cast in (("seat_rows", "rows", int), ("seat_cols", "cols", int),
                                ("seat_spacing_x", "spacing_x", float),
                                ("seat_spacing_y", "spacing_y", float)):
        if k in values:
            seat[field_name] = cast(values[k])
    if seat:
        kwargs["seat_layout"] = replace(base.seat_layout, **seat)
    cfg = replace(base, **kwargs)
    if "disengaged_rate" in values:
        n_windows = -(-round(cfg.duration_seconds * cfg.fps) // round(cfg.window_seconds * cfg.fps))
        script = scripted_engagement(cfg.students, n_windows, float(values["disengaged_rate"]), cfg.seed)
        cfg = replace(cfg, engagement_script=script)
    return cfg
