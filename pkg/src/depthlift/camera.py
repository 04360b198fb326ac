"""Pinhole camera geometry: world -> camera -> pixel and the depth-conditioned inverse."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .skeleton import JOINT_NAMES


class ProjectionError(ValueError):
    """Raised for points that cannot be projected (z <= 0)."""


@dataclass(frozen=True)
class CameraExtrinsics:
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=float).reshape(3, 3)
        t = np.array(self.t, dtype=float).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-10, rtol=0):
            raise ValueError("R is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-10:
            raise ValueError("det(R) must be +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    # optional sensor metadata: fx = f / sx, fy = f / sy
    f: float | None = None
    sx: float | None = None
    sy: float | None = None

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.f is not None:
            if self.sx is None or self.sy is None:
                raise ValueError("f requires both sx and sy")
            if abs(self.fx * self.sx - self.f) > 1e-9 or abs(self.fy * self.sy - self.f) > 1e-9:
                raise ValueError("fx*sx and fy*sy must equal f")

    @classmethod
    def from_sensor(cls, f, sx, sy, cx, cy):
        return cls(f / sx, f / sy, cx, cy, f, sx, sy)

    @property
    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Camera:
    extrinsics: CameraExtrinsics
    intrinsics: CameraIntrinsics

    def to_dict(self):
        k = self.intrinsics
        return {"R": [float(v) for v in self.extrinsics.R.ravel()],
                "t": [float(v) for v in self.extrinsics.t],
                "fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy}

    @classmethod
    def from_dict(cls, d):
        return cls(CameraExtrinsics(np.reshape(d["R"], (3, 3)), d["t"]),
                   CameraIntrinsics(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"])))

    def to_camera(self, p_world):
        return world_to_camera(p_world, self.extrinsics)

    def project(self, p_cam):
        return project(p_cam, self.intrinsics)

    def back_project(self, px, z):
        return back_project(px, z, self.intrinsics)


def world_to_camera(p, e: CameraExtrinsics):
    """R p + t for points p[..., 3]."""
    return np.asarray(p, dtype=float) @ e.R.T + e.t


def project(p, k: CameraIntrinsics):
    """Pixel coordinates (r, s) of camera-frame points p[..., 3]."""
    p = np.asarray(p, dtype=float)
    z = p[..., 2]
    if np.any(~(z > 0)):
        raise ProjectionError("point with z <= 0 is not projectable")
    return np.stack([k.fx * p[..., 0] / z + k.cx, k.fy * p[..., 1] / z + k.cy], axis=-1)


def back_project(px, z, k: CameraIntrinsics):
    """Camera-frame point from pixel coordinates px[..., 2] and depth z."""
    px = np.asarray(px, dtype=float)
    z = np.asarray(z, dtype=float)
    if np.any(~(z > 0)):
        raise ProjectionError("back-projection needs z > 0")
    x = z * (px[..., 0] - k.cx) / k.fx
    y = z * (px[..., 1] - k.cy) / k.fy
    return np.stack([x, y, np.broadcast_to(z, x.shape)], axis=-1)


def _bad_joint(z):
    bad = np.flatnonzero(np.any(~(np.asarray(z) > 0).reshape(-1, len(JOINT_NAMES)), axis=0))
    return JOINT_NAMES[bad[0]]


def project_pose(pose_cam, k: CameraIntrinsics):
    """Project (..., 17, 3) camera-frame poses to (..., 17, 2) pixels."""
    pose_cam = np.asarray(pose_cam, dtype=float)
    if np.any(~(pose_cam[..., 2] > 0)):
        raise ProjectionError(f"joint {_bad_joint(pose_cam[..., 2])} has z <= 0")
    return project(pose_cam, k)


def back_project_pose(uv, z, k: CameraIntrinsics):
    z = np.asarray(z, dtype=float)
    if np.any(~(z > 0)):
        raise ProjectionError(f"joint {_bad_joint(z)} has z <= 0")
    return back_project(uv, z, k)


def look_at(center, target, up=(0.0, 0.0, 1.0)) -> CameraExtrinsics:
    """Extrinsics for a camera at ``center`` looking at ``target`` (x right, y down, z forward)."""
    center = np.asarray(center, dtype=float)
    zc = np.asarray(target, dtype=float) - center
    zc /= np.linalg.norm(zc)
    xc = np.cross(zc, up)
    xc /= np.linalg.norm(xc)
    yc = np.cross(zc, xc)
    R = np.stack([xc, yc, zc])
    return CameraExtrinsics(R, -R @ center)


def synth_cameras(n: int = 4, seed: int = 0, image_size: float = 1000.0) -> dict[int, Camera]:
    """Cameras on a 4-6 m circle around the stage, 1-1.8 m high, looking at the pelvis height."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xCA]))
    cams = {}
    for i in range(n):
        ang = 2 * np.pi * i / n + rng.uniform(-0.2, 0.2)
        radius = rng.uniform(4000.0, 6000.0)
        height = rng.uniform(1000.0, 1800.0)
        center = (radius * np.cos(ang), radius * np.sin(ang), height)
        target = (rng.uniform(-100, 100), rng.uniform(-100, 100), 900.0)
        f = rng.uniform(1000.0, 1500.0)
        cams[i + 1] = Camera(look_at(center, target), CameraIntrinsics(f, f, image_size / 2, image_size / 2))
    return cams


def save_cameras(cams: dict[int, Camera], directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for cid, cam in sorted(cams.items()):
        p = directory / f"camera_{cid}.json"
        p.write_text(json.dumps(cam.to_dict()) + "\n")
        paths.append(p)
    return paths


def load_cameras(directory) -> dict[int, Camera]:
    cams = {}
    for p in sorted(Path(directory).glob("camera_*.json")):
        cams[int(p.stem.split("_")[1])] = Camera.from_dict(json.loads(p.read_text()))
    if not cams:
        raise FileNotFoundError(f"no camera_*.json files in {directory}")
    return cams


def camera_frame_poses(dataset, cams: dict[int, Camera]):
    """World poses of every record mapped into its own camera's frame, (N, 17, 3)."""
    out = np.empty(dataset.poses.shape)
    for cid in np.unique(dataset.cameras):
        if int(cid) not in cams:
            raise KeyError(f"dataset references camera {cid} with no calibration")
        m = dataset.cameras == cid
        out[m] = cams[int(cid)].to_camera(dataset.poses[m])
    return out


def pixel_poses(pose_cam, cameras_col, cams: dict[int, Camera]):
    uv = np.empty(pose_cam.shape[:-1] + (2,))
    for cid in np.unique(cameras_col):
        m = cameras_col == cid
        uv[m] = project_pose(pose_cam[m], cams[int(cid)].intrinsics)
    return uv
