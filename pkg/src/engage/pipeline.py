"""End-to-end run: synthetic corpora, action model, engagement SVM, reports.

Stages go through the on-disk formats (skeleton JSONL, tracks, checkpoint,
feature CSV, SVM JSON) so a run exercises the same paths as the CLI.
Every artifact is derived from the config and one seed.
"""
from __future__ import annotations

import csv
import json
import logging
from collections import defaultdict
from dataclasses import replace
from pathlib import Path

import numpy as np

from .dataset import collect_action_clips, engagement_labels, stratified_split, write_volume_dir
from .engagement import action_metrics, compute_metrics, mean_engagement_timeline, save_svm, train_svm
from .features import DISENGAGED, ENGAGED, ENGAGED_ACTIONS, ActionLabel, extract_features, read_feature_csv, write_feature_csv
from .gaze import calibrate, save_gaze_config
from .heatmap import SamplerConfig
from .ingest import load_session, save_session
from .net3d import ModelConfig, TrainConfig, load_checkpoint, predict_proba, save_checkpoint, train
from .synth import SynthConfig, config_from_mapping, generate_session, save_truth
from .tracker import associate, save_tracks

log = logging.getLogger(__name__)

ACTION_DEFAULTS = {"students": "13", "duration_seconds": "540", "schedule": "balanced"}
SESSION_DEFAULTS = {"students": "10", "duration_seconds": "1200", "disengaged_rate": "0.2"}


def _get(section: dict, key: str, cast, default):
    return cast(section[key]) if key in section else default


def _track_session(cfg: SynthConfig, stem: Path):
    """synth -> JSONL -> ingest -> tracker -> tracks file; returns tracks, fps, truth."""
    session = generate_session(cfg)
    save_session(session.stream, stem.with_suffix(".jsonl"))
    save_truth(session.truth, stem.with_suffix(".truth.json"))
    stream = load_session(stem.with_suffix(".jsonl"))
    tracks = associate(stream)
    # the tracks file is an artifact; its round trip is exact, so keep using `tracks`
    save_tracks(tracks, stem.with_suffix(".tracks.jsonl"), width=stream.frame_width,
                height=stream.frame_height, fps=stream.fps)
    return tracks, stream.fps, session.truth


def action_corpus_config(seed: int, values: dict | None = None) -> SynthConfig:
    """Balanced 13-class corpus: 13 students x 54 ten-second sub-clips (40 train per class)."""
    merged = {**ACTION_DEFAULTS, **(values or {}), "seed": seed}
    return config_from_mapping(merged, SynthConfig())


def session_config(seed: int, values: dict | None = None) -> SynthConfig:
    merged = {**SESSION_DEFAULTS, **(values or {}), "seed": seed}
    merged.pop("count", None)
    merged.pop("train", None)
    return config_from_mapping(merged, SynthConfig())


def run_pipeline(sections: dict[str, dict[str, str]], workdir: Path, seed: int = 0) -> dict:
    """Run every stage; returns the report dicts (also written under ``workdir/reports``)."""
    workdir = Path(workdir)
    (workdir / "data").mkdir(parents=True, exist_ok=True)
    reports = workdir / "reports"
    reports.mkdir(parents=True, exist_ok=True)

    act = sections.get("actions", {})
    samp = sections.get("sampler", {})
    feat = sections.get("features", {})
    sampler = SamplerConfig(T=_get(samp, "T", int, 16), H=_get(samp, "size", int, 56),
                            W=_get(samp, "size", int, 56), sigma=_get(samp, "sigma", float, 0.6))
    window_s = _get(feat, "window_seconds", float, 120.0)
    sub_s = _get(feat, "subclip_seconds", float, 10.0)

    # action recognition
    synth_keys = {k: v for k, v in act.items() if k not in ("epochs", "batch", "lr", "freeze", "write_volumes")}
    acfg = action_corpus_config(seed, synth_keys)
    tracks, fps, truth = _track_session(acfg, workdir / "data" / "actions")
    records = collect_action_clips(tracks, truth, fps, sampler, window_s, sub_s)
    if _get(act, "write_volumes", lambda v: v.lower() in ("1", "true", "yes"), False):
        write_volume_dir(records, workdir / "data" / "volumes")
    tr_idx, te_idx = stratified_split([r.clip_id for r in records], [r.label for r in records], seed)
    X = np.stack([r.volume for r in records])
    y = np.array([r.label for r in records])
    net = sections.get("net3d", {})
    mc = ModelConfig()
    if "stem_channels" in net:
        mc = replace(mc, stem_channels=int(net["stem_channels"]))
    if "stage_channels" in net:
        mc = replace(mc, stage_channels=tuple(int(v) for v in net["stage_channels"].split(",")))
    tc = TrainConfig(epochs=_get(act, "epochs", int, 60), batch_size=_get(act, "batch", int, 16),
                     learning_rate=_get(act, "lr", float, 0.0025), seed=seed)
    model, history = train((X[tr_idx], y[tr_idx]), tc, mc)
    save_checkpoint(model, workdir / "model.egkm")
    model = load_checkpoint(workdir / "model.egkm")
    preds = predict_proba(model, X[te_idx]).argmax(axis=1)
    action_report = action_metrics(preds, y[te_idx], model.config.num_classes)
    action_report["train_samples"] = len(tr_idx)
    action_report["final_loss"] = history[-1] if history else None
    (reports / "actions.json").write_text(json.dumps(action_report, indent=2, sort_keys=True) + "\n")

    eng_report = run_engagement(model, sections, workdir, seed)
    return {"actions": action_report, "engagement": eng_report}


def run_engagement(model, sections: dict[str, dict[str, str]], workdir: Path, seed: int = 0) -> dict:
    """Engagement stage: synthetic sessions, features from ``model``, SVM, timeline."""
    workdir = Path(workdir)
    (workdir / "data").mkdir(parents=True, exist_ok=True)
    reports = workdir / "reports"
    reports.mkdir(parents=True, exist_ok=True)
    samp = sections.get("sampler", {})
    feat = sections.get("features", {})
    sampler = SamplerConfig(T=_get(samp, "T", int, 16), H=_get(samp, "size", int, 56),
                            W=_get(samp, "size", int, 56), sigma=_get(samp, "sigma", float, 0.6))
    window_s = _get(feat, "window_seconds", float, 120.0)
    sub_s = _get(feat, "subclip_seconds", float, 10.0)

    ses = sections.get("sessions", {})
    n_sessions = _get(ses, "count", int, 3)
    n_train = _get(ses, "train", int, n_sessions - 1)
    if not 1 <= n_train < n_sessions:
        raise ValueError("sessions.train must leave at least one test session")
    csvs = []
    gaze_cfg = None
    for k in range(n_sessions):
        scfg = session_config(seed * 1000 + k + 1, ses)
        tracks, fps, truth = _track_session(scfg, workdir / "data" / f"session{k}")
        if gaze_cfg is None:
            gaze_cfg = _calibrate_from_truth(tracks, truth, _get(sections.get("gaze", {}), "tolerance", float, 0.25))
            save_gaze_config(gaze_cfg, workdir / "gaze.json")
        labels = engagement_labels(tracks, truth, fps, window_s, sub_s)
        rows = extract_features(tracks, model, fps, gaze_cfg, sampler, window_s, sub_s, labels)
        path = workdir / "data" / f"session{k}.features.csv"
        write_feature_csv(rows, path)
        csvs.append(path)

    eng = sections.get("engagement", {})
    train_rows = [r for p in csvs[:n_train] for r in read_feature_csv(p) if r.label is not None]
    svm = train_svm(np.stack([r.vector for r in train_rows]), [r.label for r in train_rows],
                    C=_get(eng, "C", float, 1.0), kernel=eng.get("kernel", "linear"),
                    gamma=_get(eng, "gamma", float, None))
    save_svm(svm, workdir / "svm.json")

    test_rows = [r for p in csvs[n_train:] for r in read_feature_csv(p) if r.label is not None]
    values = svm.decision_function(np.stack([r.vector for r in test_rows]))
    pred = [ENGAGED if v >= 0 else DISENGAGED for v in values]
    metrics = compute_metrics(pred, [r.label for r in test_rows])
    eng_report = metrics.report()
    predicted, reference = defaultdict(list), defaultdict(list)
    for r, p in zip(test_rows, pred):
        predicted[r.window_id].append(int(p == ENGAGED))
        reference[r.window_id].append(int(r.label == ENGAGED))
    tl = mean_engagement_timeline(predicted, reference)
    eng_report["timeline_correlation"] = tl.correlation
    (reports / "engagement.json").write_text(json.dumps(eng_report, indent=2, sort_keys=True) + "\n")
    with open(reports / "timeline.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window", "mean_predicted", "mean_reference"])
        for wid, p, r in tl.rows:
            w.writerow([wid, repr(p), "" if r is None else repr(r)])
    return eng_report


def _calibrate_from_truth(tracks, truth, tolerance: float):
    """Target yaw from frames where a student does an on-task, board-facing action."""
    from .synth import match_tracks_to_students

    facing = set(ENGAGED_ACTIONS) - {ActionLabel.discussing}
    owner = match_tracks_to_students(tracks, truth)
    poses = []
    for t in tracks:
        s = owner.get(t.track_id)
        if s is None:
            continue
        for f, pose in t.entries.items():
            if truth.engagement_at(s, f) and truth.action_at(s, f) in facing:
                poses.append(pose)
    return calibrate(poses, tolerance=tolerance)
