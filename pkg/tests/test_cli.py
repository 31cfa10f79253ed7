import json

import numpy as np
import pytest

from engage.cli import main, read_config
from engage.features import read_feature_csv
from engage.net3d import load_checkpoint

SAMPLER = ["--T", "4", "--size", "8"]

TINY_PIPELINE = """\
[actions]
students = 13
duration_seconds = 30
epochs = 1
[net3d]
stem_channels = 4
stage_channels = 4,4,4
[features]
window_seconds = 20
subclip_seconds = 5
[sampler]
T = 4
size = 8
[sessions]
students = 6
duration_seconds = 240
disengaged_rate = 0.4
count = 2
train = 1
"""


def run(*args):
    return main([str(a) for a in args])


def test_no_command_is_usage_error(capsys):
    assert run() == 1
    assert run("bogus") == 1
    assert run("track", "--input", "x") == 1          # missing --out


def test_missing_file_is_data_error(tmp_path, capsys):
    assert run("ingest", "--input", tmp_path / "nope.jsonl") == 2


def test_ingest_reports_bad_line(tmp_path, capsys):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"meta": {"width": 64, "height": 48, "fps": 15}}\n{"frame": 0, "persons": []}\nnot json\n')
    assert run("ingest", "--input", path, "--validate-only") == 2
    assert "3" in capsys.readouterr().err


def test_threads_must_be_positive(tmp_path, capsys):
    assert run("--threads", "0", "ingest", "--input", tmp_path / "x") == 1


def test_read_config(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("seed = 3\n[net3d]\nstem_channels = 8  # small\n\n[sessions]\ncount=2\n")
    assert read_config(p) == {"": {"seed": "3"}, "net3d": {"stem_channels": "8"}, "sessions": {"count": "2"}}


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    """synth -> track -> volumes -> train-actions -> features, on a tiny model."""
    d = tmp_path_factory.mktemp("chain")
    (d / "model.cfg").write_text("[net3d]\nstem_channels = 4\nstage_channels = 4,4,4\n")
    assert run("synth", "--seed", 1, "--students", 13, "--duration-seconds", 20, "--schedule", "balanced",
               "--out", d / "a.jsonl", "--truth", d / "a.truth.json") == 0
    assert run("track", "--input", d / "a.jsonl", "--out", d / "a.tracks.jsonl") == 0
    assert run("volumes", "--tracks", d / "a.tracks.jsonl", "--truth", d / "a.truth.json",
               "--subclip-seconds", 5, "--window-seconds", 20, "--out", d / "vol", *SAMPLER) == 0
    assert run("train-actions", "--data", d / "vol", "--epochs", 2, "--model-config", d / "model.cfg",
               "--history", d / "hist.json", "--out", d / "m.egkm") == 0
    assert run("synth", "--seed", 2, "--students", 6, "--duration-seconds", 240, "--disengaged-rate", 0.4,
               "--out", d / "s.jsonl", "--truth", d / "s.truth.json") == 0
    assert run("track", "--input", d / "s.jsonl", "--out", d / "s.tracks.jsonl") == 0
    assert run("gaze-calibrate", "--frames", d / "s.jsonl", "--out", d / "gaze.json") == 0
    assert run("features", "--tracks", d / "s.tracks.jsonl", "--model", d / "m.egkm", "--gaze", d / "gaze.json",
               "--truth", d / "s.truth.json", "--out", d / "f.csv", *SAMPLER) == 0
    return d


def test_ingest_summary(chain, capsys):
    assert run("ingest", "--input", chain / "a.jsonl") == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["frames"] == 300 and summary["detections"] == 13 * 300


def test_train_actions_outputs(chain):
    m = load_checkpoint(chain / "m.egkm")
    assert m.config.stem_channels == 4
    assert len(json.loads((chain / "hist.json").read_text())["loss"]) == 2


def test_eval_actions_report(chain):
    assert run("eval-actions", "--data", chain / "vol", "--model", chain / "m.egkm",
               "--report", chain / "act.json") == 0
    rep = json.loads((chain / "act.json").read_text())
    assert {"top1_accuracy", "mean_class_accuracy", "part"} <= set(rep)
    assert 0 <= rep["top1_accuracy"] <= 1


def test_engagement_commands(chain):
    rows = read_feature_csv(chain / "f.csv")
    assert len(rows) == 12 and {r.label for r in rows} == {"engaged", "disengaged"}
    assert run("train-engagement", "--features", chain / "f.csv", "--out", chain / "svm.json") == 0
    assert run("eval-engagement", "--features", chain / "f.csv", "--model", chain / "svm.json",
               "--report", chain / "eng.json") == 0
    rep = json.loads((chain / "eng.json").read_text())
    assert {"disengaged", "engaged", "weighted_avg"} <= set(rep)
    assert run("timeline", "--features", chain / "f.csv", "--model", chain / "svm.json",
               "--out", chain / "tl.csv", "--report", chain / "tl.json") == 0
    lines = (chain / "tl.csv").read_text().splitlines()
    assert lines[0] == "window,mean_predicted,mean_reference" and len(lines) == 3


def test_single_class_features_is_data_error(chain, tmp_path):
    text = (chain / "f.csv").read_text().replace("disengaged", "engaged")
    (tmp_path / "one.csv").write_text(text)
    assert run("train-engagement", "--features", tmp_path / "one.csv", "--out", tmp_path / "svm.json") == 2


def test_pipeline_is_deterministic(tmp_path):
    (tmp_path / "p.cfg").write_text(TINY_PIPELINE)
    for name in ("a", "b"):
        assert run("pipeline", "--config", tmp_path / "p.cfg", "--seed", 3, "--workdir", tmp_path / name) == 0
    for rep in ("actions.json", "engagement.json", "timeline.csv"):
        a = (tmp_path / "a" / "reports" / rep).read_bytes()
        assert a == (tmp_path / "b" / "reports" / rep).read_bytes()
    eng = json.loads((tmp_path / "a" / "reports" / "engagement.json").read_text())
    assert "timeline_correlation" in eng
    assert np.isfinite(eng["weighted_avg"]["f1"])
