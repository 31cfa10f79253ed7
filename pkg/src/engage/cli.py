"""``engage`` command-line interface.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numeric
failure. Errors are written to standard error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

log = logging.getLogger("engage")

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _limit_threads(n: int | None) -> None:
    if n is None:
        env = os.environ.get("ENGAGE_THREADS")
        n = int(env) if env else None
    if n is None:
        return
    if n < 1:
        raise UsageError("--threads must be >= 1")
    if "numpy" not in sys.modules:
        for var in THREAD_VARS:
            os.environ[var] = str(n)
        return
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        log.warning("numpy already loaded; thread cap not applied")
        return
    threadpool_limits(n)


def _write_json(obj, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ------------------------------------------------------------------ config

def read_config(path) -> dict[str, dict[str, str]]:
    """Flat ``key = value`` file with ``[section]`` headers (keys before any header go to ``""``)."""
    sections: dict[str, dict[str, str]] = {"": {}}
    current = ""
    for line_no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{line_no}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        sections[current][k] = v
    return sections


def _model_config(values: dict):
    from .net3d import ModelConfig

    kw = {}
    if "stem_channels" in values:
        kw["stem_channels"] = int(values["stem_channels"])
    if "stage_channels" in values:
        kw["stage_channels"] = tuple(int(v) for v in values["stage_channels"].split(","))
    return ModelConfig(**kw)


# ------------------------------------------------------------------ commands

def cmd_synth(args) -> None:
    from .ingest import save_session
    from .synth import SynthConfig, config_from_mapping, generate_session, save_truth

    values = read_config(args.config).get("", {}) if args.config else {}
    if args.config:
        # a sectioned file may keep synth keys under [synth]
        values = {**values, **read_config(args.config).get("synth", {})}
    if args.seed is not None:
        values["seed"] = args.seed
    for key in ("students", "duration_seconds", "noise_sigma", "disengaged_rate", "schedule"):
        v = getattr(args, key)
        if v is not None:
            values[key] = v
    cfg = config_from_mapping(values, SynthConfig())
    session = generate_session(cfg)
    save_session(session.stream, args.out)
    if args.truth:
        save_truth(session.truth, args.truth)


def cmd_ingest(args) -> None:
    from .ingest import load_session

    stream = load_session(args.input)
    summary = {"frames": len(stream.frames), "detections": stream.num_detections,
               "width": stream.frame_width, "height": stream.frame_height, "fps": stream.fps}
    if not args.validate_only:
        print(json.dumps(summary, sort_keys=True))


def cmd_track(args) -> None:
    from .ingest import load_session
    from .tracker import associate, save_tracks

    stream = load_session(args.input)
    tracks = associate(stream, iou_threshold=args.iou, max_gap=args.max_gap, conf_threshold=args.conf)
    save_tracks(tracks, args.out, width=stream.frame_width, height=stream.frame_height, fps=stream.fps)


def _sampler(args):
    from .heatmap import SamplerConfig

    return SamplerConfig(T=args.T, H=args.size, W=args.size, sigma=args.sigma)


def cmd_volumes(args) -> None:
    from .dataset import collect_action_clips, write_volume_dir
    from .synth import load_truth
    from .tracker import load_tracks

    if len(args.tracks) != len(args.truth):
        raise UsageError("give one --truth per --tracks")
    records = []
    for k, (tp, gp) in enumerate(zip(args.tracks, args.truth)):
        tracks, meta = load_tracks(tp)
        truth = load_truth(gp)
        prefix = f"{Path(tp).stem}-" if len(args.tracks) > 1 else ""
        records += collect_action_clips(tracks, truth, float(meta["fps"]), _sampler(args),
                                        args.window_seconds, args.subclip_seconds, prefix=prefix)
    write_volume_dir(records, args.out)


def _split(records, seed: int, part: str):
    from .dataset import stratified_split

    train, test = stratified_split([r.clip_id for r in records], [r.label for r in records], seed)
    idx = {"train": train, "test": test, "all": list(range(len(records)))}[part]
    return [records[i] for i in idx]


def cmd_train_actions(args) -> None:
    import numpy as np

    from .dataset import read_volume_dir
    from .net3d import ModelConfig, TrainConfig, load_checkpoint, save_checkpoint, train

    records = _split(read_volume_dir(args.data), args.split_seed if args.split_seed is not None else args.seed,
                     "all" if args.no_split else "train")
    X = np.stack([r.volume for r in records])
    y = np.array([r.label for r in records])
    model = None
    if args.init:
        model = load_checkpoint(args.init, freeze_prefix=args.freeze)
    mc = ModelConfig(freeze_prefix=args.freeze)
    if args.model_config:
        from dataclasses import replace
        mc = replace(_model_config(read_config(args.model_config).get("net3d", {})), freeze_prefix=args.freeze)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch, learning_rate=args.lr, seed=args.seed)
    model, history = train((X, y), cfg, mc, model=model)
    if not np.all(np.isfinite(history)):
        from .errors import NumericError
        raise NumericError("training loss is not finite")
    save_checkpoint(model, args.out)
    if args.history:
        _write_json({"loss": history}, args.history)


def cmd_eval_actions(args) -> None:
    import numpy as np

    from .dataset import read_volume_dir
    from .engagement import action_metrics
    from .net3d import load_checkpoint, predict_proba

    records = _split(read_volume_dir(args.data), args.seed, args.part)
    model = load_checkpoint(args.model)
    X = np.stack([r.volume for r in records])
    preds = predict_proba(model, X).argmax(axis=1)
    report = action_metrics(preds, [r.label for r in records], model.config.num_classes)
    report["part"] = args.part
    _write_json(report, args.report)


def cmd_features(args) -> None:
    from .dataset import engagement_labels
    from .features import extract_features, write_feature_csv
    from .gaze import GazeConfig, load_gaze_config
    from .net3d import load_checkpoint
    from .tracker import load_tracks

    tracks, meta = load_tracks(args.tracks)
    fps = float(meta["fps"])
    model = load_checkpoint(args.model)
    gaze = load_gaze_config(args.gaze) if args.gaze else GazeConfig()
    labels = None
    if args.truth:
        from .synth import load_truth
        labels = engagement_labels(tracks, load_truth(args.truth), fps, args.window_seconds, args.subclip_seconds)
    rows = extract_features(tracks, model, fps, gaze, _sampler(args), args.window_seconds,
                            args.subclip_seconds, labels)
    write_feature_csv(rows, args.out)


def cmd_gaze_calibrate(args) -> None:
    from .gaze import calibrate, save_gaze_config
    from .ingest import load_session, select_upper_body

    stream = load_session(args.frames)
    poses = [select_upper_body(p) for f in stream.frames for p in f.poses]
    save_gaze_config(calibrate(poses, tolerance=args.tolerance), args.out)


def _feature_matrix(paths, require_labels=True):
    import numpy as np

    from .errors import EmptyDataset
    from .features import read_feature_csv

    rows = [r for p in paths for r in read_feature_csv(p)]
    if require_labels:
        rows = [r for r in rows if r.label is not None]
    if not rows:
        raise EmptyDataset("no labelled feature rows")
    return rows, np.stack([r.vector for r in rows])


def cmd_train_engagement(args) -> None:
    from .engagement import save_svm, train_svm

    rows, X = _feature_matrix(args.features)
    weighting = None if args.class_weighting == "none" else args.class_weighting
    model = train_svm(X, [r.label for r in rows], C=args.C, kernel=args.kernel, gamma=args.gamma,
                      class_weighting=weighting, max_iter=args.max_iter)
    save_svm(model, args.out)


def _predict_rows(paths, model_path, require_labels):
    from .engagement import load_svm
    from .features import DISENGAGED, ENGAGED

    rows, X = _feature_matrix(paths, require_labels)
    model = load_svm(model_path)
    pred = [ENGAGED if v >= 0 else DISENGAGED for v in model.decision_function(X)]
    return rows, pred


def cmd_eval_engagement(args) -> None:
    from .engagement import compute_metrics

    rows, pred = _predict_rows(args.features, args.model, True)
    _write_json(compute_metrics(pred, [r.label for r in rows]).report(), args.report)


def cmd_timeline(args) -> None:
    import csv
    from collections import defaultdict

    from .engagement import mean_engagement_timeline
    from .features import ENGAGED

    rows, pred = _predict_rows(args.features, args.model, False)
    predicted, reference = defaultdict(list), defaultdict(list)
    for r, p in zip(rows, pred):
        predicted[r.window_id].append(1 if p == ENGAGED else 0)
        if r.label is not None:
            reference[r.window_id].append(1 if r.label == ENGAGED else 0)
    tl = mean_engagement_timeline(predicted, reference if reference else None)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window", "mean_predicted", "mean_reference"])
        for wid, p, r in tl.rows:
            w.writerow([wid, repr(p), "" if r is None else repr(r)])
    if args.report:
        _write_json({"correlation": tl.correlation, "windows": len(tl.rows)}, args.report)


def cmd_pipeline(args) -> None:
    from .pipeline import run_pipeline

    sections = read_config(args.config) if args.config else {"": {}}
    run_pipeline(sections, Path(args.workdir), seed=args.seed)


# ------------------------------------------------------------------ parser

def _add_sampler_flags(p) -> None:
    p.add_argument("--T", type=int, default=16, help="frames per volume")
    p.add_argument("--size", type=int, default=56, help="volume height and width")
    p.add_argument("--sigma", type=float, default=0.6)
    p.add_argument("--window-seconds", type=float, default=120.0)
    p.add_argument("--subclip-seconds", type=float, default=10.0)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="engage", description="Skeleton-based classroom action and engagement pipeline.")
    p.add_argument("--threads", type=int, default=None, help="cap on numeric worker threads")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic session")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--students", type=int)
    s.add_argument("--duration-seconds", dest="duration_seconds", type=float)
    s.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    s.add_argument("--disengaged-rate", dest="disengaged_rate", type=float)
    s.add_argument("--schedule", choices=("random", "balanced"))
    s.add_argument("--out", required=True)
    s.add_argument("--truth")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ingest", help="parse and validate a skeleton stream")
    s.add_argument("--input", required=True)
    s.add_argument("--validate-only", action="store_true")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("track", help="associate detections into tracks")
    s.add_argument("--input", required=True)
    s.add_argument("--iou", type=float, default=0.3)
    s.add_argument("--max-gap", type=int, default=15)
    s.add_argument("--conf", type=float, default=0.3)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_track)

    s = sub.add_parser("volumes", help="render labelled sub-clip volumes")
    s.add_argument("--tracks", required=True, action="append")
    s.add_argument("--truth", required=True, action="append")
    s.add_argument("--out", required=True, help="output directory")
    _add_sampler_flags(s)
    s.set_defaults(func=cmd_volumes)

    s = sub.add_parser("train-actions", help="train the 3D CNN")
    s.add_argument("--data", required=True)
    s.add_argument("--epochs", type=int, default=140)
    s.add_argument("--batch", type=int, default=16)
    s.add_argument("--lr", type=float, default=0.0025)
    s.add_argument("--freeze", type=int, default=0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--split-seed", type=int, help="split seed (default: --seed)")
    s.add_argument("--no-split", action="store_true", help="train on every clip")
    s.add_argument("--init", help="checkpoint to fine-tune")
    s.add_argument("--model-config", help="config file with a [net3d] section")
    s.add_argument("--history", help="write per-epoch loss JSON here")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_actions)

    s = sub.add_parser("eval-actions", help="evaluate the 3D CNN")
    s.add_argument("--data", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--seed", type=int, default=0, help="split seed used for training")
    s.add_argument("--part", choices=("test", "train", "all"), default="test")
    s.add_argument("--report", required=True)
    s.set_defaults(func=cmd_eval_actions)

    s = sub.add_parser("features", help="build engagement feature vectors")
    s.add_argument("--tracks", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--gaze")
    s.add_argument("--truth", help="ground truth for engagement labels")
    s.add_argument("--out", required=True)
    _add_sampler_flags(s)
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("gaze-calibrate", help="estimate the target yaw")
    s.add_argument("--frames", required=True)
    s.add_argument("--tolerance", type=float, default=0.25)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gaze_calibrate)

    s = sub.add_parser("train-engagement", help="train the engagement SVM")
    s.add_argument("--features", required=True, nargs="+")
    s.add_argument("--kernel", choices=("linear", "rbf"), default="linear")
    s.add_argument("--C", type=float, default=1.0)
    s.add_argument("--gamma", type=float)
    s.add_argument("--class-weighting", choices=("balanced", "none"), default="balanced")
    s.add_argument("--max-iter", type=int, default=100_000)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_engagement)

    s = sub.add_parser("eval-engagement", help="evaluate the engagement SVM")
    s.add_argument("--features", required=True, nargs="+")
    s.add_argument("--model", required=True)
    s.add_argument("--report", required=True)
    s.set_defaults(func=cmd_eval_engagement)

    s = sub.add_parser("timeline", help="class-mean engagement per window")
    s.add_argument("--features", required=True, nargs="+")
    s.add_argument("--model", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--report", help="write the timeline correlation here")
    s.set_defaults(func=cmd_timeline)

    s = sub.add_parser("pipeline", help="run every stage from one config")
    s.add_argument("--config")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--workdir", default="engage-run")
    s.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    from .errors import DataError, NumericError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        _limit_threads(args.threads)
        args.func(args)
    except UsageError as exc:
        print(f"engage: usage error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"engage: numeric failure: {exc}", file=sys.stderr)
        return 3
    except (DataError, OSError) as exc:
        print(f"engage: data error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"engage: invalid value: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
