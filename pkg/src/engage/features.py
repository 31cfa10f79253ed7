"""Windowing, histogram-of-actions and engagement feature vectors."""
from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import AllJointsMissing, EmptyPredictions, EmptyTrack, MalformedLine
from .gaze import GazeConfig, gaze_at_target_frequency
from .heatmap import SamplerConfig, build_volume
from .ingest import UpperBodyPose

log = logging.getLogger(__name__)


class ActionLabel(enum.IntEnum):
    writing = 0
    raising_hand = 1
    reading = 2
    discussing = 3
    typing_keyboard = 4
    playing_phone = 5
    wiping_face = 6
    yawning = 7
    checking_time = 8
    fiddling_hair = 9
    drinking = 10
    eating = 11
    crossing_arms_or_supporting_head = 12


NUM_ACTIONS = len(ActionLabel)
FEATURE_DIM = NUM_ACTIONS + 1

ENGAGED_ACTIONS = (ActionLabel.writing, ActionLabel.raising_hand, ActionLabel.reading,
                   ActionLabel.discussing, ActionLabel.typing_keyboard)
DISENGAGED_ACTIONS = (ActionLabel.playing_phone, ActionLabel.wiping_face, ActionLabel.yawning,
                      ActionLabel.checking_time, ActionLabel.fiddling_hair, ActionLabel.drinking,
                      ActionLabel.eating)
# meaning depends on where the student is looking
AMBIGUOUS_ACTIONS = (ActionLabel.crossing_arms_or_supporting_head,)

ENGAGED, DISENGAGED = "engaged", "disengaged"


@dataclass
class SubClip:
    frames: list[int]
    poses: list[UpperBodyPose]

    def __len__(self):
        return len(self.frames)


@dataclass
class Window:
    window_id: int
    subclips: list[SubClip]

    @property
    def poses(self) -> list[UpperBodyPose]:
        return [p for s in self.subclips for p in s.poses]

    @property
    def frames(self) -> list[int]:
        return [f for s in self.subclips for f in s.frames]


def _chunks(n: int, size: int) -> list[tuple[int, int]]:
    """Consecutive ``[start, stop)`` chunks; a short tail survives if >= half ``size``."""
    out = []
    for start in range(0, n, size):
        stop = min(start + size, n)
        if 2 * (stop - start) >= size:
            out.append((start, stop))
    return out


def window_segments(track, fps: float, window_seconds: float = 120.0,
                    subclip_seconds: float = 10.0) -> list[Window]:
    """Split a track's entries into non-overlapping windows of sub-clips.

    ``track`` is a :class:`~engage.tracker.Track` or a sequence of
    ``(frame, pose)`` pairs. Lengths are counted in track entries
    (``seconds * fps``). Trailing partial windows and sub-clips are kept
    when at least half their nominal length, and dropped otherwise.
    """
    if not fps > 0:
        raise ValueError("fps must be > 0")
    items = list(track.entries.items()) if hasattr(track, "entries") else list(track)
    if not items:
        raise EmptyTrack("track has no entries")
    wlen = max(1, round(window_seconds * fps))
    slen = max(1, round(subclip_seconds * fps))
    windows = []
    for wid, (w0, w1) in enumerate(_chunks(len(items), wlen)):
        subclips = []
        for s0, s1 in _chunks(w1 - w0, slen):
            chunk = items[w0 + s0:w0 + s1]
            subclips.append(SubClip([f for f, _ in chunk], [p for _, p in chunk]))
        if subclips:
            windows.append(Window(wid, subclips))
    return windows


def histogram_of_actions(predictions: Iterable[int]) -> np.ndarray:
    """Normalized action frequencies (length 13)."""
    preds = np.asarray([int(p) for p in predictions], dtype=np.int64)
    if preds.size == 0:
        raise EmptyPredictions("no sub-clip predictions")
    if preds.min() < 0 or preds.max() >= NUM_ACTIONS:
        raise ValueError("prediction outside the action label range")
    return np.bincount(preds, minlength=NUM_ACTIONS) / preds.size


def build_feature(hist: np.ndarray, gaze_freq: float) -> np.ndarray:
    hist = np.asarray(hist, dtype=np.float64)
    if hist.shape != (NUM_ACTIONS,):
        raise ValueError("histogram must have 13 entries")
    if not 0.0 <= gaze_freq <= 1.0:
        raise ValueError("gaze frequency must lie in [0, 1]")
    return np.concatenate([hist, [gaze_freq]])


@dataclass
class FeatureRow:
    track_id: int
    window_id: int
    vector: np.ndarray
    label: str | None = None
    predictions: list[int] = field(default_factory=list)


def extract_features(tracks, model, fps: float, gaze: GazeConfig = GazeConfig(),
                     sampler: SamplerConfig = SamplerConfig(), window_seconds: float = 120.0,
                     subclip_seconds: float = 10.0, labels: dict | None = None,
                     batch_size: int = 32) -> list[FeatureRow]:
    """Classify every sub-clip of every track and build one feature row per window.

    ``labels`` optionally maps ``(track_id, window_id)`` to an engagement
    label. Windows where no sub-clip could be rendered are skipped.
    """
    from .net3d import predict_proba

    rows = []
    for track in tracks:
        if len(track) == 0:
            continue
        for window in window_segments(track, fps, window_seconds, subclip_seconds):
            volumes = []
            for sub in window.subclips:
                try:
                    volumes.append(build_volume(sub.poses, sampler))
                except AllJointsMissing:
                    continue
            if not volumes:
                log.warning("track %d window %d: nothing to classify", track.track_id, window.window_id)
                continue
            probs = predict_proba(model, np.stack(volumes), batch_size=batch_size)
            preds = [int(k) for k in probs.argmax(axis=1)]
            vec = build_feature(histogram_of_actions(preds),
                                gaze_at_target_frequency(window.poses, gaze))
            label = labels.get((track.track_id, window.window_id)) if labels else None
            rows.append(FeatureRow(track.track_id, window.window_id, vec, label, preds))
    return rows


CSV_HEADER = (["track_id", "window_id"] + [f"f{k}" for k in range(NUM_ACTIONS)]
              + ["gaze", "label"])


def write_feature_csv(rows: Sequence[FeatureRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow([r.track_id, r.window_id] + [repr(float(v)) for v in r.vector]
                       + [r.label or "empty"])


def read_feature_csv(path: str | Path) -> list[FeatureRow]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["track_id", "window_id"] or len(header) < 2 + FEATURE_DIM:
            raise MalformedLine(1, "feature CSV header not recognized")
        for line_no, rec in enumerate(reader, start=2):
            try:
                vec = np.array([float(v) for v in rec[2:2 + FEATURE_DIM]])
                if len(vec) != FEATURE_DIM:
                    raise ValueError
                label = rec[2 + FEATURE_DIM] if len(rec) > 2 + FEATURE_DIM else "empty"
                if label not in (ENGAGED, DISENGAGED, "empty", ""):
                    raise ValueError
                rows.append(FeatureRow(int(rec[0]), int(rec[1]), vec,
                                       None if label in ("empty", "") else label))
            except (ValueError, IndexError):
                raise MalformedLine(line_no, "bad feature row") from None
    return rows
