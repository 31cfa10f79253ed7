"""Exhaustive per-frame assignment, used as a reference for the greedy tracker."""
import itertools

from engage.ingest import select_upper_body
from engage.tracker import iou, keypoint_bbox


def _matchings(n_tracks, n_dets):
    """All partial one-to-one matchings as tuples of (track_pos, det_pos)."""
    dets = list(range(n_dets))
    for choice in itertools.product([None] + dets, repeat=n_tracks):
        used = [d for d in choice if d is not None]
        if len(used) == len(set(used)):
            yield tuple((t, d) for t, d in enumerate(choice) if d is not None)


def optimal_associate(stream, iou_threshold=0.3, max_gap=15, conf_threshold=0.3, min_sep=0.2):
    """Track with the maximum-total-IoU matching in every frame.

    Returns ``(assignment, separated)`` where ``assignment`` maps
    ``(frame, det)`` to a track id and ``separated`` tells whether every
    frame's nonzero IoUs were pairwise more than ``min_sep`` apart.
    """
    tracks = []          # [id, last_seen, last_box]
    active = []
    assignment = {}
    separated = True
    for frame in stream.frames:
        f = frame.index
        active = [t for t in active if f - t[1] - 1 <= max_gap]
        dets = []
        for d, pose in enumerate(frame.poses):
            box = keypoint_bbox(select_upper_body(pose), conf_threshold)
            if box is not None:
                dets.append((d, box))
        scores = [[iou(t[2], b) for _, b in dets] for t in active]
        nonzero = sorted(s for row in scores for s in row if s > 0)
        if any(b - a <= min_sep for a, b in zip(nonzero, nonzero[1:])):
            separated = False
        best, best_val = (), -1.0
        for m in _matchings(len(active), len(dets)):
            if any(scores[t][d] < iou_threshold for t, d in m):
                continue
            val = sum(scores[t][d] for t, d in m)
            if val > best_val + 1e-12:
                best, best_val = m, val
        matched = set()
        for t, k in best:
            d, box = dets[k]
            active[t][1], active[t][2] = f, box
            assignment[(f, d)] = active[t][0]
            matched.add(k)
        for k, (d, box) in enumerate(dets):
            if k not in matched:
                t = [len(tracks), f, box]
                tracks.append(t)
                active.append(t)
                assignment[(f, d)] = t[0]
    return assignment, separated
