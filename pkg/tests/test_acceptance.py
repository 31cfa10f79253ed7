"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The lines are printed in the terminal summary (see ``conftest.py``).
Criteria 7 and 8 share one trained action model.
"""
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from engage.cli import main
from engage.dataset import collect_action_clips, stratified_split
from engage.engagement import action_metrics, compute_metrics, kkt_residuals, train_svm
from engage.heatmap import SamplerConfig, build_volume, uniform_sample_frames
from engage.ingest import Frame, PersonPose, SessionStream, parse_session, serialize_session
from engage.net3d import (
    ModelConfig,
    Net3D,
    TrainConfig,
    load_checkpoint,
    predict_proba,
    save_checkpoint,
    softmax,
    train,
    weighted_cross_entropy,
    weighted_cross_entropy_grad,
)
from engage.pipeline import action_corpus_config, run_engagement
from engage.synth import generate_session
from engage.tracker import associate

from conftest import ACCEPTANCE
from gradcheck import check_layer, check_model, layer_cases, rel_error, small_model
from svm_oracle import primal_subgradient
from tracker_oracle import optimal_associate
from test_tracker import assignment_of, random_stream

SEED = 7


def record(k, name, ok, detail):
    line = f"criterion {k:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE[k] = line
    print(line)
    assert ok, line


# ---------------------------------------------------------------- 1

def test_c01_metric_reproduction():
    t0 = time.perf_counter()
    # 100 disengaged windows (62 caught), 441 engaged (333 caught); the
    # published supports 145/609 weight the average
    truth = ["disengaged"] * 100 + ["engaged"] * 441
    pred = ["disengaged"] * 62 + ["engaged"] * 38 + ["disengaged"] * 108 + ["engaged"] * 333
    m = compute_metrics(pred, truth, supports={"disengaged": 145, "engaged": 609})
    f1_d, f1_e, f1_w = m.per_class["disengaged"].f1, m.per_class["engaged"].f1, m.weighted["f1"]
    dt = time.perf_counter() - t0
    ok = (abs(f1_d - 0.46) <= 0.005 and abs(f1_e - 0.82) <= 0.005 and abs(f1_w - 0.75) <= 0.005
          and dt < 1.0)
    record(1, "metric reproduction", ok,
           f"F1 {f1_d:.4f}/{f1_e:.4f}, weighted {f1_w:.4f} (targets 0.46/0.82/0.75 +-0.005), {dt:.3f}s")


# ---------------------------------------------------------------- 2

def test_c02_gradient_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    worst_layer = {}
    for name, layer, x in layer_cases(rng):
        worst_layer[name] = check_layer(layer, x, rng, probes=100)
    model = small_model(seed=SEED)
    X = rng.random((3, 11, 4, 8, 8))
    worst_model, probes = check_model(model, X, np.array([0, 1, 1]), np.array([0.8, 1.3]), rng, probes=150)
    dt = time.perf_counter() - t0
    worst = max(max(worst_layer.values()), worst_model)
    ok = worst < 1e-4 and probes >= 100 and dt < 120
    record(2, "gradient correctness", ok,
           f"max rel err layers {max(worst_layer.values()):.2e}, model {worst_model:.2e} "
           f"over {probes} probes, {dt:.1f}s")


# ---------------------------------------------------------------- 3

def test_c03_weighted_ce_identities():
    rng = np.random.default_rng(SEED)
    z = rng.standard_normal(13)
    exact = all(weighted_cross_entropy(z, k, np.ones(13)) == weighted_cross_entropy(z, k) for k in range(13))
    plain = max(abs(weighted_cross_entropy(z, k, np.ones(13)) - (-math.log(softmax(z)[k]))) for k in range(13))
    w = rng.uniform(0.3, 3.0, 13)
    eq = max(abs(weighted_cross_entropy(np.full(13, c), k, w) - w[k] * math.log(13))
             for k in range(13) for c in (0.0, -7.5, 42.0))
    fd_err = 0.0
    for k in range(13):
        g = weighted_cross_entropy_grad(z, k, w)
        assert np.allclose(g, w[k] * (softmax(z) - np.eye(13)[k]), rtol=0, atol=1e-15)
        for j in range(13):
            d = np.zeros(13)
            d[j] = 1e-6
            fd = (weighted_cross_entropy(z + d, k, w) - weighted_cross_entropy(z - d, k, w)) / 2e-6
            fd_err = max(fd_err, rel_error(g[j], fd))
    ok = exact and plain < 1e-12 and eq <= 1e-9 and fd_err < 1e-6
    record(3, "weighted cross-entropy identities", ok,
           f"uniform==plain {exact}, equal-logit err {eq:.1e}, gradient rel err {fd_err:.1e}")


# ---------------------------------------------------------------- 4

def random_segment(rng):
    n = int(rng.integers(1, 40))
    arr = np.zeros((n, 11, 3))
    arr[..., :2] = np.round(rng.uniform(0, 900, (n, 11, 2)) * 64) / 64
    arr[..., 2] = np.round(rng.uniform(0, 1, (n, 11)), 3)
    arr[rng.random((n, 11)) < 0.15] = 0.0
    arr[0, 0, 2] = 0.9
    return arr


def test_c04_heatmap_invariances():
    rng = np.random.default_rng(SEED)
    cfg = SamplerConfig()
    n_cases, translation, scale_err, bounds, peaks = 1000, True, 0.0, True, True
    for _ in range(n_cases):
        arr = random_segment(rng)
        vis = arr[..., 2] > 0
        base = arr.copy()
        base[..., :2][vis] += 500
        moved = base.copy()
        moved[..., 0][vis] += int(rng.integers(-400, 401))
        moved[..., 1][vis] += int(rng.integers(-400, 401))
        vol = build_volume(base)
        translation &= np.array_equal(vol, build_volume(moved))
        s, px, py = rng.uniform(0.25, 4.0), rng.uniform(-300, 300), rng.uniform(-300, 300)
        scaled = arr.copy()
        scaled[..., 0][vis] = px + s * (arr[..., 0][vis] - px)
        scaled[..., 1][vis] = py + s * (arr[..., 1][vis] - py)
        scale_err = max(scale_err, float(np.abs(build_volume(arr) - build_volume(scaled)).max()))
        bounds &= bool(vol.min() >= 0 and vol.max() <= 1)
        conf = arr[uniform_sample_frames(len(arr), cfg.T), :, 2].T
        top = vol.reshape(11, cfg.T, -1).max(axis=2)
        peaks &= bool(np.all(top <= conf + 1e-6) and np.all((top == 0) == (conf == 0)))
    # peak value equals the confidence when a joint lands on a grid point:
    # without padding, a square box maps its corners onto the grid corners
    one = np.zeros((1, 11, 3))
    one[0, 0] = (100.0, 100.0, 0.73)
    one[0, 1] = (155.0, 155.0, 0.41)
    v = build_volume(one, SamplerConfig(padding=0.0))
    on_grid = v[0].max() == np.float32(0.73) and v[1].max() == np.float32(0.41)
    ok = translation and scale_err <= 0.02 and bounds and peaks and on_grid
    record(4, "heatmap invariances", ok,
           f"{n_cases} segments: translation bit-identical {translation}, scale max diff {scale_err:.1e}, "
           f"in [0,1] {bounds}, peak==confidence {peaks and on_grid}")


# ---------------------------------------------------------------- 5

def test_c05_tracker_oracle():
    t0 = time.perf_counter()
    checked = agree = 0
    seed = 0
    while checked < 500:
        s = random_stream(seed)
        seed += 1
        expected, separated = optimal_associate(s)
        if not separated:
            continue
        checked += 1
        agree += assignment_of(associate(s)) == expected
    dt = time.perf_counter() - t0
    ok = agree == checked == 500 and dt < 60
    record(5, "tracker oracle", ok, f"{agree}/{checked} separated cases agree ({seed} drawn), {dt:.1f}s")


# ---------------------------------------------------------------- 6

def test_c06_svm_correctness():
    grid = np.stack(np.meshgrid(np.linspace(-3, 3, 10), np.linspace(-3, 3, 10)), -1).reshape(-1, 2)
    worst_kkt, worst_agree = 0.0, 1.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        X = np.r_[rng.normal(1, 1, (10, 2)), rng.normal(-1, 1, (10, 2))]
        y = np.r_[np.ones(10), -np.ones(10)]
        m = train_svm(X, y, C=1.0, class_weighting=None)
        worst_kkt = max(worst_kkt, float(kkt_residuals(m, X, y).max()))
        w, b, _ = primal_subgradient(X, y, np.ones(20), iters=20000)
        worst_agree = min(worst_agree, float(np.mean(m.predict(grid) == np.where(grid @ w + b >= 0, 1, -1))))
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        X = rng.normal(0, 1, (30, 5))
        y = np.where(X[:, 0] - X[:, 1] + 0.3 * rng.normal(size=30) > 0, 1, -1)
        for kernel in ("linear", "rbf"):
            m = train_svm(X, y, C=2.0, kernel=kernel)
            worst_kkt = max(worst_kkt, float(kkt_residuals(m, X, y).max()))
    Xs = np.array([[2, 2], [3, 1], [2.5, 3], [-2, -2], [-1, -3], [-3, -1.5]], dtype=float)
    ys = np.array([1, 1, 1, -1, -1, -1])
    sep = bool(np.array_equal(train_svm(Xs, ys, C=100.0).predict(Xs), ys))
    ok = worst_kkt <= 1e-3 and worst_agree >= 0.99 and sep
    record(6, "SVM correctness", ok,
           f"max KKT residual {worst_kkt:.1e}, min oracle agreement {worst_agree:.2f}, separable perfect {sep}")


# ---------------------------------------------------------------- 7 and 8

@pytest.fixture(scope="module")
def action_run():
    t0 = time.perf_counter()
    cfg = action_corpus_config(SEED)
    session = generate_session(cfg)
    tracks = associate(session.stream)
    records = collect_action_clips(tracks, session.truth, cfg.fps)
    labels = np.array([r.label for r in records])
    train_idx, test_idx = stratified_split([r.clip_id for r in records], list(labels), SEED)
    X = np.stack([r.volume for r in records])
    model, history = train((X[train_idx], labels[train_idx]), TrainConfig(epochs=60, seed=SEED), ModelConfig())
    preds = predict_proba(model, X[test_idx]).argmax(axis=1)
    report = action_metrics(preds, labels[test_idx], 13)
    report["train_per_class"] = np.bincount(labels[train_idx], minlength=13).tolist()
    return model, report, time.perf_counter() - t0


@pytest.mark.slow
def test_c07_synthetic_action_recognition(action_run):
    _, rep, dt = action_run
    cores = os.cpu_count() or 1
    top1, mean_cls = rep["top1_accuracy"], rep["mean_class_accuracy"]
    # the runtime bound is stated for a 4-core machine
    time_ok = dt <= 20 * 60 if cores >= 4 else True
    time_note = f"{dt / 60:.1f} min on {cores} core(s)" + ("" if cores >= 4 else ", 4-core bound not evaluated")
    ok = top1 >= 0.90 and mean_cls >= 0.88 and time_ok
    record(7, "synthetic action recognition", ok,
           f"top-1 {top1:.4f} (>=0.90), mean-class {mean_cls:.4f} (>=0.88), "
           f"train/class {sorted(set(rep['train_per_class']))}, {rep['samples']} test clips, {time_note}")


@pytest.mark.slow
def test_c08_synthetic_engagement(action_run, tmp_path):
    model = action_run[0]
    t0 = time.perf_counter()
    sections = {"sessions": {"students": "10", "count": "3", "train": "2", "disengaged_rate": "0.2"}}
    rep = run_engagement(model, sections, tmp_path, seed=SEED)
    dt = time.perf_counter() - t0
    f1, corr = rep["weighted_avg"]["f1"], rep["timeline_correlation"]
    ok = f1 >= 0.85 and corr >= 0.8 and dt <= 300
    record(8, "synthetic engagement", ok,
           f"weighted F1 {f1:.4f} (>=0.85), timeline Pearson {corr:.4f} (>=0.8), "
           f"disengaged F1 {rep['disengaged']['f1']:.3f}, {dt:.0f}s (<=300s)")


# ---------------------------------------------------------------- 9

PIPELINE_CONFIG = """\
[actions]
students = 13
duration_seconds = 40
epochs = 2
[net3d]
stem_channels = 8
stage_channels = 8,8,16
[features]
window_seconds = 20
subclip_seconds = 5
[sampler]
T = 8
size = 16
[sessions]
students = 6
duration_seconds = 240
disengaged_rate = 0.4
count = 3
train = 2
"""


def test_c09_pipeline_determinism(tmp_path):
    cfg = tmp_path / "pipeline.cfg"
    cfg.write_text(PIPELINE_CONFIG)
    codes = [main(["pipeline", "--config", str(cfg), "--seed", str(SEED), "--workdir", str(tmp_path / run)])
             for run in ("a", "b")]
    names = sorted(p.name for p in (tmp_path / "a" / "reports").iterdir())
    same = all((tmp_path / "a" / "reports" / n).read_bytes() == (tmp_path / "b" / "reports" / n).read_bytes()
               for n in names)
    ok = codes == [0, 0] and same and len(names) == 3
    record(9, "pipeline determinism", ok, f"exit codes {codes}, {len(names)} reports byte-identical {same}")


# ---------------------------------------------------------------- 10

def random_session(rng):
    width, height = int(rng.integers(16, 4000)), int(rng.integers(16, 4000))
    fps = float(rng.choice([15.0, 25.0, 29.97, 7.5]))
    frames, idx = [], int(rng.integers(0, 10))
    for _ in range(int(rng.integers(1, 7))):
        poses = []
        for _ in range(int(rng.integers(0, 4))):
            kp = np.zeros((17, 3))
            kp[:, 0] = rng.uniform(0, width, 17)
            kp[:, 1] = rng.uniform(0, height, 17)
            kp[:, 2] = rng.uniform(0, 1, 17)
            kp[rng.random(17) < 0.2] = 0.0
            kp[0] = (rng.uniform(0, width), rng.uniform(0, height), rng.uniform(0.5, 1.0))
            poses.append(PersonPose(kp))
        frames.append(Frame(idx, tuple(poses)))
        idx += int(rng.integers(1, 5))
    return SessionStream(width, height, fps, tuple(frames))


def test_c10_round_trips(tmp_path):
    model = Net3D(ModelConfig(), seed=SEED)
    save_checkpoint(model, tmp_path / "m.egkm")
    back = load_checkpoint(tmp_path / "m.egkm")
    params_exact = all(np.array_equal(v, back.parameters()[k]) and v.dtype == back.parameters()[k].dtype
                       for k, v in model.parameters().items())
    save_checkpoint(back, tmp_path / "again.egkm")
    bytes_exact = (tmp_path / "m.egkm").read_bytes() == (tmp_path / "again.egkm").read_bytes()
    rng = np.random.default_rng(SEED)
    jsonl_ok = 0
    for _ in range(1000):
        s = random_session(rng)
        text = serialize_session(s)
        back_s = parse_session(text)
        jsonl_ok += back_s == s and serialize_session(back_s) == text
    ok = params_exact and bytes_exact and jsonl_ok == 1000
    record(10, "round-trips", ok,
           f"checkpoint params exact {params_exact}, bytes exact {bytes_exact}, JSONL {jsonl_ok}/1000 identical")
