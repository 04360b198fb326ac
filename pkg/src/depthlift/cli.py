"""Command-line front end: synth, train, eval, stats, ablate.

Every command reads one JSON config (``--config``), overlays ``--seed`` and
command flags, writes its artifacts under ``--out`` together with a
``manifest.json``, and exits 0 on success, 2 on user/config errors, 3 on I/O
errors and 4 on numeric failures.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__
from . import camera as cg
from . import depth as dp
from . import evaluation as ev
from . import net, plotting
from . import skeleton as sk
from . import stats as st
from . import training as tr

log = logging.getLogger("depthlift")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


def _net_defaults():
    d = asdict(net.DESK_PRESET)
    for k in ("n_joints", "use_depth"):
        d.pop(k)
    return d


def _train_defaults():
    d = asdict(tr.TrainConfig())
    d.pop("seed")
    return d


def _depth_defaults():
    d = asdict(dp.DepthModelConfig())
    d.pop("seed")
    return d


DEFAULTS = {
    "synth": {"seed": 0, "subjects": 7, "frames": 128, "cameras": 4, "depth": _depth_defaults()},
    "train": {"seed": 0, "protocol": "P1", "use_depth": True, "net": _net_defaults(), "train": _train_defaults()},
    "eval": {"protocol": "P1", "aligned": "both"},
    "stats": {"seed": 0},
    "ablate": {"seed": 0, "protocol": "P1", "levels": [0.0, 0.3, 0.6, 0.9, 1.0], "baseline": True,
               "depth": {k: v for k, v in _depth_defaults().items() if k != "target_spearman"},
               "net": _net_defaults(), "train": _train_defaults()},
}


def _merge(base, override, where="config"):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if k not in out:
            raise ConfigError(f"unknown key {where}.{k}")
        if isinstance(out[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{where}.{k} must be an object")
            out[k] = _merge(out[k], v, f"{where}.{k}")
        else:
            out[k] = v
    return out


def load_config(command, path=None, seed=None):
    cfg = copy.deepcopy(DEFAULTS[command])
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be an object")
        cfg = _merge(cfg, user)
    if seed is not None and "seed" in cfg:
        cfg["seed"] = seed
    return cfg


def _build(cls, values, **extra):
    names = {f.name for f in fields(cls)}
    try:
        return cls(**{k: v for k, v in values.items() if k in names}, **extra)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{cls.__name__}: {e}") from None


def write_atomic(path: Path, text: str):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_manifest(out: Path, command, cfg, inputs, outputs, started):
    doc = {"command": command, "config": cfg, "seed": cfg.get("seed"),
           "inputs": {k: str(v) for k, v in inputs.items()},
           "outputs": sorted(str(Path(p).relative_to(out)) for p in outputs),
           "version": __version__, "duration_s": round(time.time() - started, 3)}
    write_atomic(out / "manifest.json", json.dumps(doc, indent=2) + "\n")


def _cameras_for(dataset_path, cameras_dir):
    return cg.load_cameras(cameras_dir or Path(dataset_path).parent / "cameras")


def _fmt(v):
    if v is None or (isinstance(v, float) and not np.isfinite(v)):
        return ""
    return format(v, ".10g") if isinstance(v, float) else str(v)


# --- commands ---------------------------------------------------------------


def cmd_synth(args, cfg, out: Path):
    depth_cfg = _build(dp.DepthModelConfig, cfg["depth"], seed=cfg["seed"])
    if cfg["subjects"] < 1 or cfg["frames"] < 1 or cfg["cameras"] < 1:
        raise ConfigError("subjects, frames and cameras must be >= 1")
    data = sk.synth_generate(sk.default_skeleton(), cfg["subjects"], cfg["frames"], cfg["seed"])
    cams = cg.synth_cameras(cfg["cameras"], cfg["seed"])
    data = sk.expand_cameras(data, sorted(cams))
    pose_cam = cg.camera_frame_poses(data, cams)
    uv = cg.pixel_poses(pose_cam, data.cameras, cams)
    depth = dp.simulate_dataset_depth(data, pose_cam, depth_cfg)
    data = data.replace(uv=uv, depth=depth, provenance=data.provenance + f" depth={json.dumps(cfg['depth'])}")
    outputs = cg.save_cameras(cams, out / "cameras")
    sk.save_dataset(data, out / "dataset.jsonl")
    outputs.append(out / "dataset.jsonl")
    log.info("wrote %d records to %s", len(data), out / "dataset.jsonl")
    return outputs


def _train_model(train, cams, cfg, use_depth, log_prefix=""):
    ncfg = _build(net.NetConfig, cfg["net"], use_depth=use_depth)
    tcfg = _build(tr.TrainConfig, cfg["train"], seed=cfg["seed"])

    def report(epoch, loss):
        log.info("%sepoch %d/%d loss %.5f", log_prefix, epoch, tcfg.epochs, loss)

    return tr.fit(train, cams, ncfg, tcfg, callback=report)


def cmd_train(args, cfg, out: Path):
    if args.no_depth:
        cfg["use_depth"] = False
    if args.protocol:
        cfg["protocol"] = args.protocol
    data = sk.load_dataset(args.dataset)
    if cfg["use_depth"] and data.depth is None:
        raise ConfigError("dataset has no depth field (use --no-depth for the 2D-only model)")
    cams = _cameras_for(args.dataset, args.cameras)
    train, _ = sk.split_protocol(data, cfg["protocol"])
    res = _train_model(train, cams, cfg, cfg["use_depth"])
    net.save_model(out / "model.json", res.params, res.stats)
    with (out / "loss_history.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        for i, v in enumerate(res.history, start=1):
            w.writerow([i, _fmt(float(v))])
    plotting.plot_loss_history(res.history, out / "loss_history.png")
    return [out / "model.json", out / "loss_history.csv", out / "loss_history.png"]


def cmd_eval(args, cfg, out: Path):
    if args.protocol:
        cfg["protocol"] = args.protocol
    if args.aligned:
        cfg["aligned"] = args.aligned
    modes = {"both": (False, True), "on": (True,), "off": (False,)}.get(cfg["aligned"])
    if modes is None:
        raise ConfigError("aligned must be one of both/on/off")
    params, stats = net.load_model(args.model)
    data = sk.load_dataset(args.dataset)
    if params.config.use_depth and data.depth is None:
        raise ConfigError("model expects depth input but the dataset has none")
    cams = _cameras_for(args.dataset, args.cameras)
    _, test = sk.split_protocol(data, cfg["protocol"])
    outputs, reports = [], []
    for aligned in modes:
        r = ev.evaluate_protocol(params, stats, test, cams, cfg["protocol"], aligned)
        stem = f"report_{cfg['protocol']}_{'aligned' if aligned else 'raw'}"
        outputs.append(ev.emit_report(r, out / f"{stem}.csv", "csv"))
        outputs.append(ev.emit_report(r, out / f"{stem}.json", "json"))
        reports.append(r)
        log.info("%s: MPJPE %.2f mm over %d frames", stem, r.avg_mpjpe, r.n_frames)
    outputs.append(plotting.plot_per_joint(reports, out / f"per_joint_{cfg['protocol']}.png"))
    return outputs


STATS_COLUMNS = ["camera", "action", "joint", "n", "spearman", "spearman_p", "kendall", "kendall_p",
                 "sw_W", "sw_p", "ad_A2", "dagostino_K2", "dagostino_p"]


def _try(fn, *a):
    try:
        return fn(*a)
    except (st.SampleSizeError, st.DegenerateSampleError):
        return (None, None)


def cell_statistics(data, pose_cam, seed=0):
    """One row per populated (camera, action, joint) cell plus the list of empty cells."""
    z = pose_cam[..., 2]
    rows, reports, empty = [], [], []
    for cam in sorted({int(c) for c in data.cameras}):
        for act in range(1, sk.N_ACTIONS + 1):
            for j in range(sk.N_JOINTS):
                try:
                    d, zz = st.subsample(data, z, cam, act, j)
                except st.SelectionError:
                    empty.append([cam, act, sk.JOINT_NAMES[j]])
                    continue
                sp, kt = _try(st.spearman, d, zz), _try(st.kendall_tau, d, zz)
                if sp[0] is not None and kt[0] is not None:
                    reports.append(st.CorrelationReport(sp, kt, len(d)))
                sw = _try(st.shapiro_wilk_large, d, seed)
                ad = _try(st.anderson_darling, d)
                k2 = _try(st.dagostino_k2, d)
                rows.append([cam, act, sk.JOINT_NAMES[j], len(d), sp[0], sp[1], kt[0], kt[1],
                             sw[0], sw[1], ad[0], k2[0], k2[1]])
    return rows, reports, empty


def cmd_stats(args, cfg, out: Path):
    data = sk.load_dataset(args.dataset)
    if data.depth is None:
        raise ConfigError("dataset has no depth field")
    cams = _cameras_for(args.dataset, args.cameras)
    pose_cam = cg.camera_frame_poses(data, cams)
    rows, reports, empty = cell_statistics(data, pose_cam, cfg["seed"])
    with (out / "stats.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(STATS_COLUMNS)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    summary = st.significance_summary(reports) if reports else {"n_cells": 0}
    summary["pooled_spearman"] = dp.measure_correlation(data.depth.ravel(), pose_cam[..., 2].ravel())
    summary["empty_cells"] = empty
    summary["undefined_cells"] = len(rows) - len(reports)
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    plotting.plot_correlation_histogram([r.spearman[0] for r in reports], out / "correlation_hist.png",
                                        st.MODERATE_CORRELATION)
    log.info("%d cells, %.1f%% significant at 0.05", len(reports), 100 * summary.get("significant@0.05", 0))
    return [out / "stats.csv", out / "summary.json", out / "correlation_hist.png"]


ABLATION_COLUMNS = ["rho_target", "rho_measured", "mpjpe", "mpjpe_aligned"]


def run_ablation(data, cams, cfg, out: Path):
    """Train/evaluate one depth-input model per correlation level plus the 2D-only baseline."""
    pose_cam = cg.camera_frame_poses(data, cams)
    if data.uv is None:
        data = data.replace(uv=cg.pixel_poses(pose_cam, data.cameras, cams))
    z = pose_cam[..., 2]
    rows = []
    csv_path = out / "ablation.csv"
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ABLATION_COLUMNS)
        for level in cfg["levels"]:
            depth_cfg = _build(dp.DepthModelConfig, cfg["depth"], target_spearman=float(level), seed=cfg["seed"])
            depth = dp.simulate_dataset_depth(data, pose_cam, depth_cfg)
            lvl = data.replace(depth=depth)
            measured = float(np.mean(cell_spearman(lvl, z)))
            train, test = sk.split_protocol(lvl, cfg["protocol"])
            res = _train_model(train, cams, cfg, True, f"[rho={level:g}] ")
            raw = ev.evaluate_protocol(res.params, res.stats, test, cams, cfg["protocol"], False)
            al = ev.evaluate_protocol(res.params, res.stats, test, cams, cfg["protocol"], True)
            row = [float(level), measured, raw.avg_mpjpe, al.avg_mpjpe]
            rows.append(row)
            w.writerow([_fmt(v) for v in row])
            fh.flush()
            log.info("rho target %.2f measured %.3f: MPJPE %.2f mm (aligned %.2f)", *row)
    baseline = None
    if cfg["baseline"]:
        train, test = sk.split_protocol(data, cfg["protocol"])
        res = _train_model(train, cams, cfg, False, "[2D-only] ")
        baseline = {"mpjpe": ev.evaluate_protocol(res.params, res.stats, test, cams, cfg["protocol"], False).avg_mpjpe,
                    "mpjpe_aligned": ev.evaluate_protocol(res.params, res.stats, test, cams, cfg["protocol"],
                                                          True).avg_mpjpe}
    return rows, baseline


def cell_spearman(data, z):
    """Per-cell Spearman coefficients only, used to report the measured correlation of a sweep level."""
    rhos = []
    for cam in np.unique(data.cameras):
        for act in np.unique(data.actions):
            m = (data.cameras == cam) & (data.actions == act)
            for j in range(sk.N_JOINTS):
                try:
                    rhos.append(st.spearman(data.depth[m, j], z[m, j])[0])
                except (st.SampleSizeError, st.DegenerateSampleError):
                    pass
    return rhos


def summarize_ablation(rows, baseline):
    arr = np.asarray(rows, dtype=float)
    summary = {"levels": len(rows), "baseline_2d_only": baseline}
    if len(rows) >= 3 and np.ptp(arr[:, 1]) > 0:
        fit = st.trend_fit(arr[:, [1, 2]])
        summary["trend"] = {"slope": fit.slope, "intercept": fit.intercept, "r": fit.r}
        summary["spearman_rho_vs_mpjpe"] = st.spearman(arr[:, 1], arr[:, 2])[0]
    best = int(np.argmin(arr[:, 2]))
    summary["floor"] = {"rho_target": arr[best, 0], "rho_measured": arr[best, 1], "mpjpe": arr[best, 2]}
    perfect = arr[arr[:, 0] == 1.0]
    if len(perfect):
        summary["perfect_depth_mpjpe"] = float(perfect[0, 2])
        summary["perfect_depth_is_floor"] = bool(perfect[0, 2] == arr[:, 2].min())
        if baseline:
            summary["reduction_vs_2d_only"] = 1.0 - float(perfect[0, 2]) / baseline["mpjpe"]
    return summary


def cmd_ablate(args, cfg, out: Path):
    if args.protocol:
        cfg["protocol"] = args.protocol
    if not cfg["levels"]:
        raise ConfigError("levels must list at least one correlation target")
    data = sk.load_dataset(args.dataset)
    cams = _cameras_for(args.dataset, args.cameras)
    rows, baseline = run_ablation(data, cams, cfg, out)
    summary = summarize_ablation(rows, baseline)
    (out / "trend.json").write_text(json.dumps(summary, indent=2) + "\n")
    outputs = [out / "ablation.csv", out / "trend.json"]
    if "trend" in summary:
        arr = np.asarray(rows)
        fit = st.TrendFit(**summary["trend"])
        outputs.append(plotting.plot_trend(arr[:, 1], arr[:, 2], fit, out / "ablation_trend.png",
                                           baseline["mpjpe"] if baseline else None))
    return outputs


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "stats": cmd_stats, "ablate": cmd_ablate}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    common.add_argument("--config", type=Path, default=None, help="JSON config file")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--dump-config", action="store_true", help="print the effective config and exit")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="depthlift", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", parents=[common], help="generate a synthetic dataset with cameras and depth")

    def data_args(sp):
        sp.add_argument("--dataset", type=Path, required=False, help="dataset .jsonl")
        sp.add_argument("--cameras", type=Path, default=None, help="camera directory (default: <dataset dir>/cameras)")

    t = sub.add_parser("train", parents=[common], help="train the lifting network")
    data_args(t)
    t.add_argument("--protocol", choices=sorted(sk.PROTOCOLS), default=None)
    t.add_argument("--no-depth", action="store_true", help="train the 2D-only ablation")

    e = sub.add_parser("eval", parents=[common], help="evaluate a trained model on the protocol test split")
    data_args(e)
    e.add_argument("--model", type=Path, required=False)
    e.add_argument("--protocol", choices=sorted(sk.PROTOCOLS), default=None)
    e.add_argument("--aligned", choices=["both", "on", "off"], default=None)

    s = sub.add_parser("stats", parents=[common], help="per-cell depth/z correlation and normality analysis")
    data_args(s)

    a = sub.add_parser("ablate", parents=[common], help="depth-correlation sweep with trend fit")
    data_args(a)
    a.add_argument("--protocol", choices=sorted(sk.PROTOCOLS), default=None)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.time()
    try:
        cfg = load_config(args.command, args.config, args.seed)
        if args.dump_config:
            print(json.dumps(cfg, indent=2))
            return EXIT_OK
        for req in ("dataset", "model"):
            if hasattr(args, req) and getattr(args, req) is None:
                raise ConfigError(f"--{req} is required for {args.command}")
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        outputs = COMMANDS[args.command](args, cfg, out)
        inputs = {k: getattr(args, k) for k in ("dataset", "cameras", "model", "config") if getattr(args, k, None)}
        write_manifest(out, args.command, cfg, inputs, outputs, started)
    except FloatingPointError as e:
        print(f"depthlift {args.command}: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, sk.DatasetFormatError, sk.SkeletonError, ValueError, KeyError) as e:
        print(f"depthlift {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"depthlift {args.command}: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
