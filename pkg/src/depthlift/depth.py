"""Simulated per-joint depth observations and the depth-image training losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import stats

CALIBRATION_SIZE = 10_000
CALIBRATION_TOL = 0.005


@dataclass(frozen=True)
class DepthModelConfig:
    """Corruption model mapping true camera z to a simulated depth reading.

    With ``target_spearman`` set, the noise level is calibrated per call so that
    Spearman(depth, z) over the batch matches it; otherwise ``noise_scale`` (mm)
    is used as given.
    """

    target_spearman: float | None = 1.0
    noise_scale: float = 0.0
    monotone_distortion: float = 1.0
    occlusion_prob: float = 0.0
    occlusion_depth_factor: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.target_spearman is not None and not -1.0 <= self.target_spearman <= 1.0:
            raise ValueError("target_spearman must lie in [-1, 1]")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")
        if self.monotone_distortion <= 0:
            raise ValueError("monotone_distortion must be > 0")
        if not 0.0 <= self.occlusion_prob < 1.0:
            raise ValueError("occlusion_prob must lie in [0, 1)")
        if not 0.0 < self.occlusion_depth_factor < 1.0:
            raise ValueError("occlusion_depth_factor must lie in (0, 1)")


def _mix(signal, noise, weight):
    return weight * signal + (1.0 - weight) * (signal.mean() + signal.std() * noise)


def calibrate_weight(signal, target: float, rng) -> float:
    """Signal weight in [0, 1] whose mixture hits Spearman ``|target|`` against ``signal``.

    Bisection on a calibration batch of 10^4 draws that is independent of the
    noise used for the actual readings.
    """
    target = abs(target)
    if target >= 1.0:
        return 1.0
    if target == 0.0:
        return 0.0
    s = np.resize(np.asarray(signal, dtype=float).ravel(), CALIBRATION_SIZE)
    if np.ptp(s) == 0:
        return 1.0
    eta = rng.standard_normal(CALIBRATION_SIZE)
    lo, hi = 0.0, 1.0
    w = 0.5
    for _ in range(40):
        w = 0.5 * (lo + hi)
        rho = stats.spearman(_mix(s, eta, w), s)[0]
        if abs(rho - target) < CALIBRATION_TOL:
            break
        if rho < target:
            lo = w
        else:
            hi = w
    return w


def simulate_from_z(z, cfg: DepthModelConfig, rng=None):
    """Depth readings for camera-frame z values (any shape); the batch is the normalization context."""
    z = np.asarray(z, dtype=float)
    if np.any(~(z > 0)):
        raise ValueError("depth simulation needs z > 0")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    zmin, zmax = z.min(), z.max()
    span = zmax - zmin
    zhat = (z - zmin) / span if span > 0 else np.zeros_like(z)
    signal = zhat**cfg.monotone_distortion
    calib_rng, noise_rng, occ_rng = rng.spawn(3)

    if cfg.target_spearman is None:
        d = zmin + span * signal + cfg.noise_scale * noise_rng.standard_normal(z.shape)
    else:
        if cfg.target_spearman < 0:
            signal = 1.0 - signal
        w = calibrate_weight(signal, cfg.target_spearman, calib_rng)
        d = zmin + span * _mix(signal, noise_rng.standard_normal(z.shape), w)

    if cfg.occlusion_prob > 0:
        occluded = occ_rng.uniform(size=z.shape) < cfg.occlusion_prob
        d = np.where(occluded, cfg.occlusion_depth_factor * d, d)
    return np.maximum(d, 0.0)


def simulate_depth(pose_cam, cfg: DepthModelConfig, rng=None):
    """Depth readings for camera-frame joints ``pose_cam[..., 3]``."""
    return simulate_from_z(np.asarray(pose_cam, dtype=float)[..., 2], cfg, rng)


def simulate_dataset_depth(dataset, pose_cam, cfg: DepthModelConfig):
    """Depth for every (frame, joint), simulated separately per (camera, action, joint) cell.

    Each cell draws from its own seed stream, so the result does not depend on
    record order.
    """
    z = np.asarray(pose_cam)[..., 2]
    depth = np.empty(z.shape)
    for cam in np.unique(dataset.cameras):
        for act in np.unique(dataset.actions):
            m = (dataset.cameras == cam) & (dataset.actions == act)
            if not np.any(m):
                continue
            # deterministic order inside the cell regardless of record order
            idx = np.flatnonzero(m)
            idx = idx[np.lexsort((dataset.frames[idx], dataset.subjects[idx]))]
            for j in range(z.shape[1]):
                rng = np.random.default_rng([cfg.seed, int(cam), int(act), j])
                depth[idx, j] = simulate_from_z(z[idx, j], cfg, rng)
    return depth


def measure_correlation(depths, zs) -> float:
    return stats.spearman(depths, zs)[0]


def _images(y, y_hat):
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape:
        raise ValueError(f"image shapes differ: {y.shape} vs {y_hat.shape}")
    if y.ndim != 2:
        raise ValueError("depth images must be 2-D")
    return y, y_hat


def loss_mse(y, y_hat) -> float:
    y, y_hat = _images(y, y_hat)
    return float(np.mean((y - y_hat) ** 2))


def loss_grad(y, y_hat) -> float:
    """Mean L1 norm of forward-difference residual gradients; the last row/column gradient is 0."""
    y, y_hat = _images(y, y_hat)
    if min(y.shape) < 2:
        raise ValueError("gradient loss needs images of at least 2x2")
    r = y - y_hat
    gx = np.zeros_like(r)
    gy = np.zeros_like(r)
    gx[:, :-1] = r[:, 1:] - r[:, :-1]
    gy[:-1, :] = r[1:, :] - r[:-1, :]
    return float(np.mean(np.abs(gx) + np.abs(gy)))
