"""MPJPE, rigid (Kabsch) alignment and protocol-level reports."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .skeleton import ACTION_NAMES, JOINT_SHORT, N_ACTIONS, N_JOINTS, JointId
from . import training

NON_ROOT = tuple(j for j in range(N_JOINTS) if j != JointId.Root)


class AlignmentError(ValueError):
    pass


@dataclass(frozen=True)
class AlignmentResult:
    R: np.ndarray
    t: np.ndarray
    aligned: np.ndarray


@dataclass(frozen=True)
class EvalReport:
    avg_mpjpe: float
    per_action: np.ndarray  # (15,), NaN where the action has no frames
    per_joint: np.ndarray  # (16,)
    aligned: bool
    protocol: str
    n_frames: int
    frames_per_action: np.ndarray

    def to_dict(self):
        def clean(v):
            return None if not np.isfinite(v) else float(v)
        return {"protocol": self.protocol, "aligned": self.aligned, "n_frames": self.n_frames,
                "avg_mpjpe": float(self.avg_mpjpe),
                "per_action": {a: clean(v) for a, v in zip(ACTION_NAMES, self.per_action)},
                "frames_per_action": {a: int(c) for a, c in zip(ACTION_NAMES, self.frames_per_action)},
                "per_joint": {j: float(v) for j, v in zip(JOINT_SHORT, self.per_joint)}}


def joint_errors(pred, gt):
    return np.linalg.norm(np.asarray(pred, dtype=float) - np.asarray(gt, dtype=float), axis=-1)


def mpjpe(pred, gt, joints=NON_ROOT) -> float:
    """Mean Euclidean joint error (mm) over ``joints``; poses are (17, 3) or (N, 17, 3)."""
    kinds = {getattr(p, "frame", None) for p in (pred, gt)} - {None}
    if len(kinds) > 1:
        raise ValueError("cannot compare poses expressed in different frames")
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise ValueError(f"pose shapes differ: {pred.shape} vs {gt.shape}")
    idx = list(joints)
    return float(np.mean(joint_errors(pred[..., idx, :], gt[..., idx, :])))


def kabsch(pred, gt, weights=None):
    """Weighted least-squares rotation (det +1) and translation taking ``pred`` onto ``gt``."""
    w = np.ones(len(pred)) if weights is None else np.asarray(weights, dtype=float)
    w = w / w.sum()
    mp, mg = w @ pred, w @ gt
    U, _, Vt = np.linalg.svd((pred - mp).T @ ((gt - mg) * w[:, None]))
    d = np.sign(np.linalg.det(U @ Vt)) or 1.0
    R = (U @ np.diag([1.0, 1.0, d]) @ Vt).T
    return R, mg - R @ mp


def _mean_dist(pred, gt, R, t):
    return float(np.mean(np.linalg.norm(pred @ R.T + t - gt, axis=1)))


def procrustes_align(pred, gt, joints=None, max_iter=100, tol=1e-12) -> AlignmentResult:
    """Rigid transform (det +1, no scale) minimizing the mean joint distance from ``pred`` to ``gt``.

    Starts from the better of the least-squares Kabsch solution and the identity,
    then refines by iteratively reweighted Kabsch steps (weights 1/distance). Each
    step cannot increase the objective, so the aligned error never exceeds the
    starting one. ``joints`` selects the points entering the objective; for 17-joint
    poses it defaults to the non-root joints scored by ``mpjpe``.
    """
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise ValueError("procrustes_align expects two (K, 3) point sets")
    if joints is None:
        joints = NON_ROOT if len(pred) == N_JOINTS else range(len(pred))
    idx = list(joints)
    P, G = pred[idx], gt[idx]
    scale = max(np.abs(P - P.mean(0)).max(), np.abs(G - G.mean(0)).max(), 1e-300)
    for Q in (P, G):
        sv = np.linalg.svd(Q - Q.mean(axis=0), compute_uv=False)
        if len(sv) < 2 or sv[1] <= 1e-9 * scale:
            raise AlignmentError("point set is collinear or coincident")

    R, t = kabsch(P, G)
    cost = _mean_dist(P, G, R, t)
    if _mean_dist(P, G, np.eye(3), np.zeros(3)) < cost:
        R, t, cost = np.eye(3), np.zeros(3), _mean_dist(P, G, np.eye(3), np.zeros(3))
    floor = 1e-12 * scale
    for _ in range(max_iter):
        r = np.linalg.norm(P @ R.T + t - G, axis=1)
        if cost <= floor:
            break
        R2, t2 = kabsch(P, G, 1.0 / np.maximum(r, floor))
        cost2 = _mean_dist(P, G, R2, t2)
        if not cost2 < cost:
            break
        done = cost - cost2 <= tol * cost
        R, t, cost = R2, t2, cost2
        if done:
            break
    return AlignmentResult(R, t, pred @ R.T + t)


def _root_center(pose):
    return pose - pose[:, JointId.Root : JointId.Root + 1]


def evaluate_predictions(pred, gt, actions, aligned: bool, protocol: str) -> EvalReport:
    """Score root-centered predictions against camera-frame ground truth."""
    pred = np.asarray(pred, dtype=float)
    gt = _root_center(np.asarray(gt, dtype=float))
    if len(pred) == 0:
        raise ValueError("no test frames")
    if aligned:
        pred = np.stack([procrustes_align(p, g).aligned for p, g in zip(pred, gt)])
    err = joint_errors(pred, gt)[:, list(NON_ROOT)]
    per_frame = err.mean(axis=1)
    actions = np.asarray(actions)
    per_action = np.full(N_ACTIONS, np.nan)
    counts = np.zeros(N_ACTIONS, dtype=int)
    for a in range(1, N_ACTIONS + 1):
        m = actions == a
        counts[a - 1] = int(m.sum())
        if counts[a - 1]:
            per_action[a - 1] = per_frame[m].mean()
    return EvalReport(float(per_frame.mean()), per_action, err.mean(axis=0), aligned, protocol,
                      len(pred), counts)


def evaluate_protocol(params, stats, test, cams, protocol: str, aligned: bool) -> EvalReport:
    if len(test) == 0:
        raise ValueError("empty test split")
    x, _, pose_cam = training.observations(test, cams, params.config.use_depth)
    if x.shape[1] != params.config.input_dim:
        raise ValueError("model input dimension does not match the dataset")
    pred = training.predict_arrays(params, stats, x)
    # canonical order keeps the floating-point reductions independent of record order
    order = np.lexsort((test.frames, test.cameras, test.actions, test.subjects))
    return evaluate_predictions(pred[order], pose_cam[order], test.actions[order], aligned, protocol)


def emit_report(r: EvalReport, path, fmt: str = "csv") -> Path:
    path = Path(path)
    if fmt == "json":
        path.write_text(json.dumps(r.to_dict(), indent=2) + "\n")
        return path
    if fmt != "csv":
        raise ValueError(f"unknown report format {fmt!r}")
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ACTION_NAMES + ["Avg"])
        w.writerow(["" if not np.isfinite(v) else f"{v:.6f}" for v in r.per_action] + [f"{r.avg_mpjpe:.6f}"])
        w.writerow([])
        w.writerow(JOINT_SHORT)
        w.writerow([f"{v:.6f}" for v in r.per_joint])
    return path


def read_report_csv(path):
    """Parse a CSV report back into (per_action dict incl. Avg, per_joint dict)."""
    with Path(path).open(newline="") as fh:
        rows = [row for row in csv.reader(fh)]
    actions = {k: (float(v) if v else float("nan")) for k, v in zip(rows[0], rows[1])}
    joints = {k: float(v) for k, v in zip(rows[3], rows[4])}
    return actions, joints
