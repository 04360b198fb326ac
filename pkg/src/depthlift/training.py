"""Input/target preparation, standardization, training loop and inference."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import net
from .camera import camera_frame_poses, pixel_poses
from .skeleton import N_JOINTS, JointId

log = logging.getLogger(__name__)

STD_FLOOR = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 70
    batch_size: int = 1024
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")


@dataclass(frozen=True)
class NormStats:
    in_mean: np.ndarray
    in_std: np.ndarray
    out_mean: np.ndarray
    out_std: np.ndarray

    def as_dict(self):
        return {"in_mean": self.in_mean, "in_std": self.in_std,
                "out_mean": self.out_mean, "out_std": self.out_std}

    @classmethod
    def from_dict(cls, d):
        return cls(*(np.asarray(d[k], dtype=float) for k in ("in_mean", "in_std", "out_mean", "out_std")))


def _moments(a, what):
    mean = a.mean(axis=0)
    std = a.std(axis=0)
    bad = std < STD_FLOOR
    if np.any(bad):
        log.warning("%s: %d coordinate(s) with zero variance, std floored to %g", what, int(bad.sum()), STD_FLOOR)
        std = np.where(bad, STD_FLOOR, std)
    return mean, std


def compute_norm_stats(x, y) -> NormStats:
    """Per-coordinate mean/std of raw network inputs and root-centered targets (training split only)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return NormStats(*_moments(x, "inputs"), *_moments(y, "targets"))


def standardize(a, mean, std):
    return (np.asarray(a, dtype=float) - mean) / std


def destandardize(a, mean, std):
    return np.asarray(a, dtype=float) * std + mean


def build_inputs(uv, depth=None):
    """Per-joint interleaved (u, v, d) rows, or (u, v) rows without depth."""
    uv = np.asarray(uv, dtype=float)
    if depth is None:
        return uv.reshape(len(uv), -1)
    depth = np.asarray(depth, dtype=float)
    return np.concatenate([uv, depth[..., None]], axis=-1).reshape(len(uv), -1)


def build_targets(pose_cam):
    """Root-centered camera-frame joints without the root, flattened to (N, 3 (J - 1))."""
    pose_cam = np.asarray(pose_cam, dtype=float)
    rel = pose_cam - pose_cam[:, JointId.Root : JointId.Root + 1]
    return np.delete(rel, JointId.Root, axis=1).reshape(len(rel), -1)


def observations(dataset, cams, use_depth=True):
    """Network inputs and targets for every record of ``dataset``."""
    pose_cam = camera_frame_poses(dataset, cams)
    uv = dataset.uv if dataset.uv is not None else pixel_poses(pose_cam, dataset.cameras, cams)
    if use_depth and dataset.depth is None:
        raise ValueError("dataset has no depth field; train with use_depth=False for the 2D-only model")
    return build_inputs(uv, dataset.depth if use_depth else None), build_targets(pose_cam), pose_cam


@dataclass
class FitResult:
    params: net.NetParams
    stats: NormStats
    history: list = field(default_factory=list)


def fit_arrays(x, y, cfg: net.NetConfig, tcfg: TrainConfig, callback=None) -> FitResult:
    """Train on raw inputs ``x`` (N, input_dim) and root-centered targets ``y`` (N, output_dim)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) == 0:
        raise ValueError("empty training set")
    if x.shape[1] != cfg.input_dim or y.shape[1] != cfg.output_dim:
        raise ValueError(f"data dims {x.shape[1]}/{y.shape[1]} do not match the network "
                         f"({cfg.input_dim}/{cfg.output_dim})")
    dtype = np.dtype(tcfg.dtype)
    stats = compute_norm_stats(x, y)
    xs = standardize(x, stats.in_mean, stats.in_std).astype(dtype)
    ys = standardize(y, stats.out_mean, stats.out_std).astype(dtype)

    seeds = np.random.SeedSequence(tcfg.seed)
    init_ss, shuffle_ss, drop_ss = seeds.spawn(3)
    params = net.xavier_init(cfg, int(init_ss.generate_state(1)[0]), dtype)
    state = net.AdamState.zeros_like(params)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    drop_rng = np.random.default_rng(drop_ss)

    n = len(xs)
    history = []
    for epoch in range(tcfg.epochs):
        perm = shuffle_rng.permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, tcfg.batch_size):
            idx = perm[start : start + tcfg.batch_size]
            if len(idx) < 2:
                continue
            out, cache = net.forward(params, xs[idx], "train", drop_rng)
            loss = net.loss_reconstruction(out, ys[idx], cfg.n_joints)
            if not np.isfinite(loss):
                raise FloatingPointError(f"loss diverged at epoch {epoch + 1}")
            grads = net.backward(params, cache, out, ys[idx])
            params = net.update_running(params, cache)
            params, state = net.adam_step(params, grads, state, tcfg.learning_rate,
                                          tcfg.beta1, tcfg.beta2, tcfg.epsilon)
            total += loss * len(idx)
            seen += len(idx)
        history.append(total / seen)
        if callback is not None:
            callback(epoch + 1, history[-1])
    return FitResult(params, stats, history)


def fit(train, cams, cfg: net.NetConfig, tcfg: TrainConfig, callback=None) -> FitResult:
    x, y, _ = observations(train, cams, cfg.use_depth)
    return fit_arrays(x, y, cfg, tcfg, callback)


def predict_arrays(params: net.NetParams, stats: NormStats, x, chunk: int = 8192):
    """Root-centered camera-frame poses (N, 17, 3) from raw inputs; the root is exactly 0."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("non-finite input")
    if x.ndim == 1:
        x = x[None]
    xs = standardize(x, stats.in_mean, stats.in_std)
    outs = []
    for start in range(0, len(xs), chunk):
        out, _ = net.forward(params, xs[start : start + chunk], "infer")
        outs.append(out.astype(float))
    y = destandardize(np.concatenate(outs), stats.out_mean, stats.out_std)
    J = params.config.n_joints
    pose = np.zeros((len(y), J, 3))
    pose[:, 1:] = y.reshape(len(y), J - 1, 3)
    return pose


def predict(params: net.NetParams, stats: NormStats, uv, depth=None):
    if params.config.use_depth and depth is None:
        raise ValueError("this model needs depth input")
    return predict_arrays(params, stats, build_inputs(uv, depth if params.config.use_depth else None))


def mpjpe_on(params, stats, x, y) -> float:
    """Mean joint error (mm) over the non-root joints for raw inputs and targets."""
    pred = predict_arrays(params, stats, x)[:, 1:]
    gt = np.asarray(y).reshape(len(y), N_JOINTS - 1, 3)
    return float(np.mean(np.linalg.norm(pred - gt, axis=-1)))
