"""Greedy IoU association of per-frame detections into per-student tracks."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptySession, MalformedLine
from .ingest import NUM_UPPER, SessionStream, UpperBodyPose, select_upper_body

DEFAULT_IOU_THRESHOLD = 0.3
DEFAULT_MAX_GAP = 15
DEFAULT_CONF_THRESHOLD = 0.3


@dataclass(frozen=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)


@dataclass
class Track:
    track_id: int
    entries: dict[int, UpperBodyPose] = field(default_factory=dict)
    # frame -> position of the detection within that frame's person list
    detections: dict[int, int] = field(default_factory=dict)
    last_box: BBox | None = None

    @property
    def last_seen(self) -> int:
        return next(reversed(self.entries))

    @property
    def frames(self) -> list[int]:
        return list(self.entries)

    @property
    def poses(self) -> list[UpperBodyPose]:
        return list(self.entries.values())

    def __len__(self):
        return len(self.entries)


def keypoint_bbox(pose: UpperBodyPose, conf_threshold: float = DEFAULT_CONF_THRESHOLD) -> BBox | None:
    kp = pose.keypoints
    mask = (kp[:, 2] >= conf_threshold) & (kp[:, 2] > 0)
    if not mask.any():
        return None
    xs, ys = kp[mask, 0], kp[mask, 1]
    return BBox(float(xs.min()), float(ys.min()), float(xs.max()), float(ys.max()))


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = a.area + b.area - inter
    if union <= 0:
        # both boxes have zero area
        return 1.0 if a == b else 0.0
    return inter / union


def _frame_boxes(uppers: list[UpperBodyPose], conf_threshold: float):
    """``keypoint_bbox`` of every pose at once; yields ``(index, box row)`` for non-empty boxes."""
    kp = np.stack([u.keypoints for u in uppers])
    mask = (kp[..., 2] >= conf_threshold) & (kp[..., 2] > 0)
    xs = np.where(mask, kp[..., 0], np.inf), np.where(mask, kp[..., 0], -np.inf)
    ys = np.where(mask, kp[..., 1], np.inf), np.where(mask, kp[..., 1], -np.inf)
    rows = np.stack([xs[0].min(axis=1), ys[0].min(axis=1), xs[1].max(axis=1), ys[1].max(axis=1)], axis=1)
    for d in np.flatnonzero(mask.any(axis=1)).tolist():
        yield d, rows[d].tolist()


def _iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise ``iou`` of (m, 4) and (n, 4) box arrays, same arithmetic."""
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.maximum(iw, 0.0) * np.maximum(ih, 0.0)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    degenerate = union <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = inter / np.where(degenerate, 1.0, union)
    if degenerate.any():
        same = (a[:, None, :] == b[None, :, :]).all(axis=2)
        out = np.where(degenerate, same.astype(float), out)
    return out


def _box_row(box: BBox) -> tuple[float, float, float, float]:
    return (box.x_min, box.y_min, box.x_max, box.y_max)


def associate(stream: SessionStream,
              iou_threshold: float = DEFAULT_IOU_THRESHOLD,
              max_gap: int = DEFAULT_MAX_GAP,
              conf_threshold: float = DEFAULT_CONF_THRESHOLD) -> list[Track]:
    """Link detections across frames by greedy IoU matching.

    Per frame, every (active track, detection) pair is scored by the IoU of
    the track's latest box and the detection's keypoint box. Pairs are taken
    in order of decreasing IoU (ties: lower track id, then lower detection
    index) and matched one-to-one while IoU >= ``iou_threshold``. Unmatched
    detections start new tracks. A track stays active while it has missed at
    most ``max_gap`` frames. Detections without any joint above
    ``conf_threshold`` are ignored.

    Returns every track ever opened, ordered by id.
    """
    if not 0 < iou_threshold < 1:
        raise ValueError("iou_threshold must lie in (0, 1)")
    if max_gap < 0:
        raise ValueError("max_gap must be >= 0")
    if not stream.frames:
        raise EmptySession("cannot track an empty session")

    tracks: list[Track] = []
    active: list[Track] = []
    for frame in stream.frames:
        f = frame.index
        active = [t for t in active if f - t.last_seen - 1 <= max_gap]

        dets = []
        if frame.poses:
            uppers = [select_upper_body(pose) for pose in frame.poses]
            for d, row in _frame_boxes(uppers, conf_threshold):
                dets.append((d, uppers[d], BBox(*row)))

        pairs = []
        if active and dets:
            scores = _iou_matrix(np.array([_box_row(t.last_box) for t in active]),
                                 np.array([_box_row(box) for _, _, box in dets]))
            ti, ki = np.nonzero(scores >= iou_threshold)
            for i, k in zip(ti.tolist(), ki.tolist()):
                t = active[i]
                pairs.append((-float(scores[i, k]), t.track_id, dets[k][0], t, k))
        pairs.sort(key=lambda p: p[:3])

        used_tracks, used_dets = set(), set()
        for _, tid, _, t, k in pairs:
            if tid in used_tracks or k in used_dets:
                continue
            used_tracks.add(tid)
            used_dets.add(k)
            d, upper, box = dets[k]
            t.entries[f] = upper
            t.detections[f] = d
            t.last_box = box

        for k, (d, upper, box) in enumerate(dets):
            if k in used_dets:
                continue
            t = Track(len(tracks), {f: upper}, {f: d}, box)
            tracks.append(t)
            active.append(t)
    return tracks


def _kp_json(kp: np.ndarray) -> str:
    # float repr is what json.dumps emits for finite floats
    return "[" + ",".join(f"[{x!r},{y!r},{c!r}]" for x, y, c in kp.tolist()) + "]"


def save_tracks(tracks: list[Track], path: str | Path, *, width: int, height: int, fps: float) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"meta": {"width": width, "height": height, "fps": fps}}) + "\n")
        for t in tracks:
            entries = ",".join(
                f'{{"frame":{f},"det":{t.detections.get(f, -1)},"kp":{_kp_json(pose.keypoints)}}}'
                for f, pose in t.entries.items())
            fh.write(f'{{"id":{t.track_id},"entries":[{entries}]}}\n')


def load_tracks(path: str | Path) -> tuple[list[Track], dict]:
    """Read a tracks file; returns the tracks and the ``meta`` header dict."""
    tracks = []
    meta = None
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedLine(line_no, f"invalid JSON ({exc.msg})") from None
            if meta is None:
                if "meta" not in obj:
                    raise MalformedLine(line_no, "missing meta header")
                meta = obj["meta"]
                continue
            try:
                t = Track(int(obj["id"]))
                entries = obj["entries"]
                kps = np.asarray([e["kp"] for e in entries], dtype=np.float64).reshape(-1, NUM_UPPER, 3)
                if len(kps) != len(entries):
                    raise ValueError
                for e, kp in zip(entries, kps):
                    t.entries[int(e["frame"])] = UpperBodyPose(kp)
                    t.detections[int(e["frame"])] = int(e.get("det", -1))
            except (KeyError, TypeError, ValueError):
                raise MalformedLine(line_no, "bad track record") from None
            tracks.append(t)
    if meta is None:
        raise EmptySession("tracks file is empty")
    return tracks, meta
