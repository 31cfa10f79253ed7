"""Labelled action clips cut from tracks, splits and on-disk volume sets."""
from __future__ import annotations

import csv
import hashlib
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import AllJointsMissing, EmptyDataset, MalformedLine
from .features import ActionLabel, window_segments
from .heatmap import SamplerConfig, build_volume, load_volume, save_volume


@dataclass
class ClipRecord:
    clip_id: str
    label: int
    volume: np.ndarray


def _majority(values):
    return Counter(values).most_common(1)[0][0]


def collect_action_clips(tracks, truth, fps: float, sampler: SamplerConfig = SamplerConfig(),
                         window_seconds: float = 120.0, subclip_seconds: float = 10.0,
                         prefix: str = "") -> list[ClipRecord]:
    """Render every sub-clip of every track with its majority ground-truth action.

    Tracks are matched to students by detection overlap; unmatched tracks
    are skipped.
    """
    from .synth import match_tracks_to_students

    owner = match_tracks_to_students(tracks, truth)
    out = []
    for track in tracks:
        if track.track_id not in owner:
            continue
        student = owner[track.track_id]
        for window in window_segments(track, fps, window_seconds, subclip_seconds):
            for k, sub in enumerate(window.subclips):
                label = _majority(int(truth.action_at(student, f)) for f in sub.frames)
                try:
                    vol = build_volume(sub.poses, sampler)
                except AllJointsMissing:
                    continue
                cid = f"{prefix}t{track.track_id}-w{window.window_id}-s{k}"
                out.append(ClipRecord(cid, label, vol))
    return out


def engagement_labels(tracks, truth, fps: float, window_seconds: float = 120.0,
                      subclip_seconds: float = 10.0) -> dict[tuple[int, int], str]:
    """Majority ground-truth engagement of each ``(track_id, window_id)``."""
    from .features import DISENGAGED, ENGAGED
    from .synth import match_tracks_to_students

    owner = match_tracks_to_students(tracks, truth)
    labels = {}
    for track in tracks:
        if track.track_id not in owner:
            continue
        student = owner[track.track_id]
        for window in window_segments(track, fps, window_seconds, subclip_seconds):
            vals = [truth.engagement_at(student, f) for f in window.frames]
            vals = [v for v in vals if v is not None]
            if vals:
                labels[(track.track_id, window.window_id)] = ENGAGED if _majority(vals) else DISENGAGED
    return labels


def _rank(seed: int, clip_id: str) -> bytes:
    return hashlib.sha256(f"{seed}:{clip_id}".encode()).digest()


def stratified_split(clip_ids: Sequence[str], labels: Sequence[int], seed: int = 0,
                     train_fraction: float = 0.75) -> tuple[list[int], list[int]]:
    """Indices of a per-class split ordered by a seeded hash of the clip ids.

    Within each class ``round(train_fraction * n)`` clips go to training.
    The result depends only on the ids, labels and seed, not on input order.
    """
    by_class = defaultdict(list)
    for i, (cid, lbl) in enumerate(zip(clip_ids, labels)):
        by_class[int(lbl)].append(i)
    train, test = [], []
    for lbl in sorted(by_class):
        idx = sorted(by_class[lbl], key=lambda i: _rank(seed, clip_ids[i]))
        k = round(train_fraction * len(idx))
        train.extend(idx[:k])
        test.extend(idx[k:])
    return sorted(train), sorted(test)


INDEX_HEADER = ["clip_id", "label", "file"]


def write_volume_dir(records: Sequence[ClipRecord], directory: str | Path) -> None:
    """One EGKV file per clip plus ``index.csv`` (clip_id, label name, file)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "index.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(INDEX_HEADER)
        for r in records:
            name = f"{r.clip_id}.egkv"
            save_volume(r.volume, d / name)
            w.writerow([r.clip_id, ActionLabel(r.label).name, name])


def read_volume_dir(directory: str | Path) -> list[ClipRecord]:
    d = Path(directory)
    index = d / "index.csv"
    if not index.exists():
        raise EmptyDataset(f"{index} not found")
    out = []
    with open(index, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != INDEX_HEADER:
            raise MalformedLine(1, "volume index header not recognized")
        for line_no, rec in enumerate(reader, start=2):
            try:
                cid, name, fname = rec
                label = int(ActionLabel[name])
            except (ValueError, KeyError):
                raise MalformedLine(line_no, "bad index row") from None
            out.append(ClipRecord(cid, label, load_volume(d / fname)))
    if not out:
        raise EmptyDataset("volume index lists no clips")
    return out
