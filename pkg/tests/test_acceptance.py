"""Acceptance gate: one test per primary criterion, each printing a PASS/FAIL line.

The three ablation criteria share a single end-to-end run of ``synth`` + ``ablate``
(7 subjects x 128 frames x 4 cameras, desk-scale network, 70 epochs, seed 0),
which takes roughly 15-25 minutes on a laptop-class CPU.
"""

import csv
import json
import time

import numpy as np
import pytest

from depthlift import camera as cg
from depthlift import cli
from depthlift import evaluation as ev
from depthlift import net
from depthlift import stats as st
from depthlift import training as tr
from oracles import brute_kendall, grad_check


@pytest.fixture
def report(capsys):
    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        return ok
    return emit


def random_rotation(rng):
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    return q if np.linalg.det(q) > 0 else -q


def test_geometry_round_trip(report):
    rng = np.random.default_rng(0)
    k = cg.CameraIntrinsics(1234.5, 1198.25, 512.0, 488.0)
    p = np.c_[rng.uniform(-4000, 4000, size=(10**5, 2)), rng.uniform(500, 8000, size=10**5)]
    t = time.perf_counter()
    back = cg.back_project(cg.project(p, k), p[:, 2], k)
    elapsed = time.perf_counter() - t
    err = float(np.max(np.abs(back - p)))
    ok = err < 1e-9 and elapsed < 1.0
    assert report("geometry round trip", ok, f"max |error| {err:.2e} mm over 1e5 points in {elapsed * 1e3:.1f} ms")


def test_gradient_oracle(report):
    rng = np.random.default_rng(1)
    worst = 0.0
    for trial in range(20):
        cfg = net.NetConfig(hidden_width=int(rng.integers(8, 33)), n_residual_blocks=int(rng.integers(0, 3)),
                            dropout_rate=float(rng.choice([0.0, 0.25, 0.5])), use_depth=bool(rng.integers(2)))
        params = net.xavier_init(cfg, trial, np.float64)
        x = rng.standard_normal((8, cfg.input_dim))
        y = rng.standard_normal((8, cfg.output_dim))
        worst = max(worst, grad_check(params, x, y, seed=trial, h=1e-5))
    assert report("gradient oracle", worst < 1e-4, f"max relative error {worst:.2e} over 20 random networks")


def test_procrustes_oracle(report, world):
    rng = np.random.default_rng(2)
    poses = world.poses - world.poses[:, :1]
    recover = transform = 0.0
    dets_ok = True
    for i in range(1000):
        gt = poses[rng.integers(len(poses))]
        R, t = random_rotation(rng), rng.uniform(-2000, 2000, 3)
        r = ev.procrustes_align(gt @ R.T + t, gt)
        recover = max(recover, ev.mpjpe(r.aligned, gt))
        transform = max(transform, np.abs(r.R - R.T).max(), np.abs(r.t + R.T @ t).max())
        mirror = gt @ (R * np.array([1.0, 1.0, -1.0])).T + t
        dets_ok &= abs(np.linalg.det(ev.procrustes_align(mirror, gt).R) - 1.0) < 1e-10
    violations = 0
    for i in range(1000):
        gt = rng.uniform(-800, 800, size=(17, 3))
        pred = gt + rng.normal(0, rng.uniform(5, 150), size=(17, 3))
        violations += ev.mpjpe(ev.procrustes_align(pred, gt).aligned, gt) > ev.mpjpe(pred, gt) + 1e-12
    ok = recover < 1e-8 and transform < 1e-8 and dets_ok and violations == 0
    assert report("procrustes oracle", ok,
                  f"recovered MPJPE {recover:.1e} mm, transform error {transform:.1e}, "
                  f"det +1 on reflections: {dets_ok}, aligned > raw in {violations}/1000 pairs")


def test_kendall_brute_force(report):
    rng = np.random.default_rng(3)
    mismatches = checked = 0
    while checked < 200:
        n = int(rng.integers(3, 51))
        x = rng.integers(0, int(rng.integers(2, n + 1)), size=n).astype(float)
        y = rng.integers(0, int(rng.integers(2, n + 1)), size=n).astype(float)
        if np.ptp(x) == 0 or np.ptp(y) == 0:
            continue
        checked += 1
        mismatches += st.kendall_tau(x, y)[0] != brute_kendall(x, y)[2]
    assert report("kendall brute force", mismatches == 0, f"{mismatches} mismatches in 200 tied arrays")


@pytest.mark.slow
def test_statistical_calibration(report):
    rng = np.random.default_rng(4)
    tests = {"shapiro": lambda x: st.shapiro_wilk(x)[1] < 0.05,
             "anderson": lambda x: st.anderson_darling(x)[0] > st.AD_CRITICAL_05,
             "dagostino": lambda x: st.dagostino_k2(x)[1] < 0.05}
    t = time.perf_counter()
    null = {k: 0 for k in tests}
    for _ in range(1000):
        x = rng.standard_normal(500)
        for k, rejects in tests.items():
            null[k] += rejects(x)
    power = {k: 0 for k in tests}
    for _ in range(1000):
        x = np.where(rng.uniform(size=5000) < 0.5, -3.0, 3.0) + rng.standard_normal(5000)
        for k, rejects in tests.items():
            power[k] += rejects(x)
    elapsed = time.perf_counter() - t
    ok = all(30 <= null[k] <= 70 and power[k] >= 990 for k in tests) and elapsed < 120
    detail = ", ".join(f"{k} size {null[k] / 1000:.3f} power {power[k] / 1000:.3f}" for k in tests)
    assert report("statistical calibration", ok, f"{detail} ({elapsed:.0f} s)")


# --- shared ablation run ---------------------------------------------------------


@pytest.fixture(scope="module")
def ablation(tmp_path_factory):
    root = tmp_path_factory.mktemp("ablation")
    t = time.perf_counter()
    synth = root / "synth.json"
    synth.write_text(json.dumps({"subjects": 7, "frames": 128, "cameras": 4}))
    assert cli.main(["synth", "--config", str(synth), "--seed", "0", "--out", str(root / "data")]) == 0
    sweep = root / "ablate.json"
    sweep.write_text(json.dumps({"levels": [0.0, 0.3, 0.6, 0.9, 1.0], "baseline": True}))
    assert cli.main(["ablate", "--dataset", str(root / "data" / "dataset.jsonl"), "--config", str(sweep),
                     "--seed", "0", "--out", str(root / "out")]) == 0
    rows = [{k: float(v) for k, v in r.items()} for r in csv.DictReader((root / "out" / "ablation.csv").open())]
    trend = json.loads((root / "out" / "trend.json").read_text())
    from depthlift import skeleton as sk
    train, _ = sk.split_protocol(sk.load_dataset(root / "data" / "dataset.jsonl"), "P1")
    return rows, trend, len(train), time.perf_counter() - t


@pytest.mark.slow
def test_hypothesis_1_depth_beats_2d(report, ablation):
    rows, trend, n_train, elapsed = ablation
    perfect = next(r for r in rows if r["rho_target"] == 1.0)["mpjpe"]
    base = trend["baseline_2d_only"]["mpjpe"]
    reduction = 1 - perfect / base
    ok = reduction >= 0.40 and n_train >= 30_000
    assert report("hypothesis 1 analog", ok,
                  f"rho=1 MPJPE {perfect:.1f} mm vs 2D-only {base:.1f} mm, reduction {100 * reduction:.1f}% "
                  f"({n_train} train frames; whole sweep {elapsed / 60:.1f} min)")


@pytest.mark.slow
def test_hypothesis_2_negative_trend(report, ablation):
    rows, trend, _, _ = ablation
    rho = [r["rho_measured"] for r in rows]
    err = [r["mpjpe"] for r in rows]
    fit = st.trend_fit(np.c_[rho, err])
    s = st.spearman(rho, err)[0]
    table = ", ".join(f"{r['rho_target']:g}->{r['mpjpe']:.1f}" for r in rows)
    ok = fit.slope < 0 and s <= -0.8
    assert report("hypothesis 2 analog", ok, f"slope {fit.slope:.1f} mm per unit rho, Spearman {s:.2f} [{table}]")


@pytest.mark.slow
def test_perfect_depth_floor(report, ablation):
    rows, trend, _, _ = ablation
    err = np.array([r["mpjpe"] for r in rows])
    perfect = next(r for r in rows if r["rho_target"] == 1.0)["mpjpe"]
    ok = perfect == err.min() and trend["floor"]["rho_target"] == 1.0
    assert report("perfect-depth floor", ok, f"empirical floor {perfect:.1f} mm (aligned "
                  f"{next(r for r in rows if r['rho_target'] == 1.0)['mpjpe_aligned']:.1f} mm)")


# --- determinism and latency -----------------------------------------------------


def _artifacts(directory):
    return {p.relative_to(directory): p.read_bytes() for p in sorted(directory.rglob("*"))
            if p.is_file() and p.name != "manifest.json"}


def test_determinism(report, tmp_path):
    synth = tmp_path / "synth.json"
    synth.write_text(json.dumps({"subjects": 7, "frames": 16, "cameras": 4, "depth": {"target_spearman": 0.6}}))
    train = tmp_path / "train.json"
    train.write_text(json.dumps({"train": {"epochs": 3, "batch_size": 512}}))
    for run in ("a", "b"):
        d = tmp_path / run
        data = str(d / "data" / "dataset.jsonl")
        assert cli.main(["synth", "--config", str(synth), "--seed", "5", "--out", str(d / "data")]) == 0
        assert cli.main(["train", "--dataset", data, "--config", str(train), "--seed", "5",
                         "--out", str(d / "model")]) == 0
        assert cli.main(["eval", "--dataset", data, "--model", str(d / "model" / "model.json"),
                         "--out", str(d / "eval")]) == 0
        assert cli.main(["stats", "--dataset", data, "--seed", "5", "--out", str(d / "stats")]) == 0
    a, b = _artifacts(tmp_path / "a"), _artifacts(tmp_path / "b")
    differing = sorted(str(k) for k in a if a[k] != b.get(k))
    ok = a.keys() == b.keys() and not differing
    assert report("determinism", ok, f"{len(a)} artifacts compared, {len(differing)} differ {differing}")


def test_latency(report):
    params = net.xavier_init(net.FULL_PRESET, 0, np.float32)
    stats = tr.NormStats(np.zeros(51), np.ones(51), np.zeros(48), np.ones(48))
    x = np.random.default_rng(0).standard_normal((1, 51))
    tr.predict_arrays(params, stats, x)
    times = []
    for _ in range(50):
        t = time.perf_counter()
        tr.predict_arrays(params, stats, x)
        times.append(time.perf_counter() - t)
    med = float(np.median(times))
    assert report("latency", med < 0.05,
                  f"median single-sample predict {med * 1e3:.2f} ms with {params.n_params / 1e6:.2f}M parameters")
