"""17-joint skeleton model, synthetic pose generation and the JSON-lines dataset format."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SCHEMA = "depthlift-pose-v1"
N_JOINTS = 17
N_ACTIONS = 15


class JointId(enum.IntEnum):
    Root = 0
    RHip = 1
    RKnee = 2
    RAnkle = 3
    LHip = 4
    LKnee = 5
    LAnkle = 6
    Thorax = 7
    Neck = 8
    Nose = 9
    Head = 10
    LShoulder = 11
    LElbow = 12
    LWrist = 13
    RShoulder = 14
    RElbow = 15
    RWrist = 16


JOINT_NAMES = [j.name for j in JointId]
# column labels used by the per-joint reports (root excluded)
JOINT_SHORT = ["RH", "RK", "RA", "LH", "LK", "LA", "Tho.", "Neck", "Nose", "Head",
               "LS", "LE", "LW", "RS", "RE", "RW"]
ACTION_NAMES = ["Dir.", "Dis.", "Eat", "Gre.", "Phon.", "Pose", "Pur.", "Sit.", "SitD.",
                "Smo.", "Phot.", "Wait", "Walk", "WalkD.", "WalkP."]

# synthetic subject id -> benchmark subject role
SUBJECT_ROLES = {1: "S1", 2: "S5", 3: "S6", 4: "S7", 5: "S8", 6: "S9", 7: "S11"}
PROTOCOLS = {
    "P1": (("S1", "S5", "S6", "S7", "S8", "S9"), ("S11",)),
    "P2": (("S1", "S5", "S6", "S7", "S8"), ("S9", "S11")),
}
TEST_STRIDE = 64


class SkeletonError(ValueError):
    pass


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Bone:
    parent: int
    child: int
    length: float
    direction: tuple[float, float, float]
    # (min, max) rotation about the local x, y, z axes in radians
    limits: tuple[tuple[float, float], tuple[float, float], tuple[float, float]]


def _bone(parent, child, length, direction, lx=(0.0, 0.0), ly=(0.0, 0.0), lz=(0.0, 0.0)):
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    return Bone(int(parent), int(child), float(length), tuple(float(v) for v in d),
                (tuple(lx), tuple(ly), tuple(lz)))


@dataclass(frozen=True)
class SkeletonModel:
    """Kinematic tree over the 17 joints.

    Body frame: +x is the subject's left, +y forward, +z up. Each bone is a rest
    direction scaled by its length; its rotation limits apply at the parent joint.
    """

    bones: tuple[Bone, ...]

    def __post_init__(self):
        self.validate()

    def validate(self):
        if len(self.bones) != N_JOINTS - 1:
            raise SkeletonError(f"expected {N_JOINTS - 1} bones, got {len(self.bones)}")
        seen = {int(JointId.Root)}
        for b in self.bones:
            if b.parent not in seen:
                raise SkeletonError(f"bone {b.parent}->{b.child} listed before its parent is reached")
            if b.child in seen or not 0 <= b.child < N_JOINTS:
                raise SkeletonError(f"joint {b.child} is not a fresh tree node")
            if not 50.0 <= b.length <= 700.0:
                raise SkeletonError(f"bone {b.parent}->{b.child} length {b.length} outside [50, 700] mm")
            for lo, hi in b.limits:
                if lo > hi or abs(lo) > np.pi or abs(hi) > np.pi:
                    raise SkeletonError(f"bad angle range ({lo}, {hi}) on bone {b.parent}->{b.child}")
            seen.add(b.child)
        if len(seen) != N_JOINTS:
            raise SkeletonError("bones do not cover all joints")

    @property
    def lengths(self):
        return np.array([b.length for b in self.bones])

    @property
    def edges(self):
        return [(b.parent, b.child) for b in self.bones]

    def to_dict(self):
        return {"bones": [{"parent": b.parent, "child": b.child, "length": b.length,
                           "direction": list(b.direction), "limits": [list(l) for l in b.limits]}
                          for b in self.bones]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(Bone(int(b["parent"]), int(b["child"]), float(b["length"]),
                              tuple(b["direction"]), tuple(tuple(l) for l in b["limits"]))
                         for b in d["bones"]))


def default_skeleton() -> SkeletonModel:
    J = JointId
    small = (-0.1, 0.1)
    return SkeletonModel((
        _bone(J.Root, J.RHip, 133, (-1, 0, 0), small, small, small),
        _bone(J.RHip, J.RKnee, 445, (0, 0, -1), (-0.5, 2.0), (-0.6, 0.3), (-0.4, 0.4)),
        _bone(J.RKnee, J.RAnkle, 440, (0, 0, -1), (-2.3, 0.0), (-0.05, 0.05), (-0.05, 0.05)),
        _bone(J.Root, J.LHip, 133, (1, 0, 0), small, small, small),
        _bone(J.LHip, J.LKnee, 445, (0, 0, -1), (-0.5, 2.0), (-0.3, 0.6), (-0.4, 0.4)),
        _bone(J.LKnee, J.LAnkle, 440, (0, 0, -1), (-2.3, 0.0), (-0.05, 0.05), (-0.05, 0.05)),
        _bone(J.Root, J.Thorax, 430, (0, 0, 1), (-0.9, 0.3), (-0.3, 0.3), (-0.5, 0.5)),
        _bone(J.Thorax, J.Neck, 100, (0, 0, 1), (-0.3, 0.3), (-0.2, 0.2), (-0.2, 0.2)),
        _bone(J.Neck, J.Nose, 110, (0, 0.6, 0.8), (-0.4, 0.4), (-0.3, 0.3), (-0.8, 0.8)),
        _bone(J.Nose, J.Head, 110, (0, -0.3, 1), small, small, small),
        _bone(J.Thorax, J.LShoulder, 150, (1, 0, -0.1), (-0.15, 0.15), (-0.15, 0.15), (-0.15, 0.15)),
        _bone(J.LShoulder, J.LElbow, 280, (0, 0, -1), (-1.0, 2.5), (-2.0, 0.2), (-0.8, 0.8)),
        _bone(J.LElbow, J.LWrist, 250, (0, 0, -1), (0.0, 2.4), (-0.05, 0.05), (-0.05, 0.05)),
        _bone(J.Thorax, J.RShoulder, 150, (-1, 0, -0.1), (-0.15, 0.15), (-0.15, 0.15), (-0.15, 0.15)),
        _bone(J.RShoulder, J.RElbow, 280, (0, 0, -1), (-1.0, 2.5), (-0.2, 2.0), (-0.8, 0.8)),
        _bone(J.RElbow, J.RWrist, 250, (0, 0, -1), (0.0, 2.4), (-0.05, 0.05), (-0.05, 0.05)),
    ))


def euler_xyz(angles):
    """Rotation matrices R = Rz(c) @ Ry(b) @ Rx(a) for angles[..., (a, b, c)]."""
    a, b, c = np.moveaxis(np.asarray(angles, dtype=float), -1, 0)
    ca, sa, cb, sb, cc, sc = np.cos(a), np.sin(a), np.cos(b), np.sin(b), np.cos(c), np.sin(c)
    R = np.empty(a.shape + (3, 3))
    R[..., 0, 0] = cc * cb
    R[..., 0, 1] = cc * sb * sa - sc * ca
    R[..., 0, 2] = cc * sb * ca + sc * sa
    R[..., 1, 0] = sc * cb
    R[..., 1, 1] = sc * sb * sa + cc * ca
    R[..., 1, 2] = sc * sb * ca - cc * sa
    R[..., 2, 0] = -sb
    R[..., 2, 1] = cb * sa
    R[..., 2, 2] = cb * ca
    return R


def forward_kinematics(model: SkeletonModel, bone_angles, root_rotation, root_position, lengths=None):
    """Joint positions (..., 17, 3) from per-bone angles (..., 16, 3).

    ``root_rotation`` is (..., 3, 3) and ``root_position`` (..., 3). ``lengths`` overrides
    the model's bone lengths (e.g. subject-scaled).
    """
    bone_angles = np.asarray(bone_angles, dtype=float)
    lengths = model.lengths if lengths is None else np.asarray(lengths, dtype=float)
    local = euler_xyz(bone_angles)
    batch = bone_angles.shape[:-2]
    pos = np.zeros(batch + (N_JOINTS, 3))
    orient = np.zeros(batch + (N_JOINTS, 3, 3))
    pos[..., JointId.Root, :] = root_position
    orient[..., JointId.Root, :, :] = root_rotation
    for k, b in enumerate(model.bones):
        g = orient[..., b.parent, :, :] @ local[..., k, :, :]
        orient[..., b.child, :, :] = g
        pos[..., b.child, :] = pos[..., b.parent, :] + lengths[k] * (g @ np.asarray(b.direction))
    return pos


def bone_lengths(model: SkeletonModel, poses):
    poses = np.asarray(poses)
    p = np.array([b.parent for b in model.bones])
    c = np.array([b.child for b in model.bones])
    return np.linalg.norm(poses[..., c, :] - poses[..., p, :], axis=-1)


@dataclass(frozen=True, eq=False)
class Pose3D:
    """17 joint positions in mm, tagged with the frame they are expressed in."""

    joints: np.ndarray
    frame: str = "camera"

    def __post_init__(self):
        if self.frame not in ("world", "camera"):
            raise ValueError(f"unknown frame kind {self.frame!r}")
        j = _readonly(self.joints)
        if j.shape != (N_JOINTS, 3):
            raise ValueError(f"pose must be ({N_JOINTS}, 3), got {j.shape}")
        if not np.all(np.isfinite(j)):
            raise ValueError("non-finite joint coordinates")
        object.__setattr__(self, "joints", j)

    def __array__(self, dtype=None, copy=None):
        return self.joints if dtype is None else self.joints.astype(dtype)


@dataclass(frozen=True)
class FrameRecord:
    subject: int
    action: int
    camera: int
    frame: int
    pose: np.ndarray
    depth: np.ndarray | None = None
    uv: np.ndarray | None = None


def _readonly(a, dtype=float):
    if a is None:
        return None
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented frame table.

    ``poses`` holds world-frame joints (N, 17, 3) in mm. ``depth`` (N, 17) and
    ``uv`` (N, 17, 2) are optional per-frame observations for the frame's camera.
    """

    subjects: np.ndarray
    actions: np.ndarray
    cameras: np.ndarray
    frames: np.ndarray
    poses: np.ndarray
    skeleton: SkeletonModel
    depth: np.ndarray | None = None
    uv: np.ndarray | None = None
    subject_lengths: dict = field(default_factory=dict)
    provenance: str = ""

    def __post_init__(self):
        for name in ("subjects", "actions", "cameras", "frames"):
            object.__setattr__(self, name, _readonly(getattr(self, name), np.int64))
        object.__setattr__(self, "poses", _readonly(self.poses))
        object.__setattr__(self, "depth", _readonly(self.depth))
        object.__setattr__(self, "uv", _readonly(self.uv))
        n = len(self.subjects)
        if n == 0:
            raise DatasetFormatError("dataset is empty")
        if self.poses.shape != (n, N_JOINTS, 3):
            raise DatasetFormatError(f"poses must be ({n}, {N_JOINTS}, 3), got {self.poses.shape}")
        for col in (self.actions, self.cameras, self.frames):
            if col.shape != (n,):
                raise DatasetFormatError("column length mismatch")
        if self.depth is not None and self.depth.shape != (n, N_JOINTS):
            raise DatasetFormatError(f"depth must be ({n}, {N_JOINTS})")
        if self.uv is not None and self.uv.shape != (n, N_JOINTS, 2):
            raise DatasetFormatError(f"uv must be ({n}, {N_JOINTS}, 2)")
        if not np.all(np.isfinite(self.poses)):
            raise DatasetFormatError("non-finite joint coordinates")

    def __len__(self):
        return len(self.subjects)

    def __getitem__(self, i) -> FrameRecord:
        return FrameRecord(int(self.subjects[i]), int(self.actions[i]), int(self.cameras[i]),
                           int(self.frames[i]), self.poses[i],
                           None if self.depth is None else self.depth[i],
                           None if self.uv is None else self.uv[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def keys(self):
        return np.stack([self.subjects, self.actions, self.cameras, self.frames], axis=1)

    def select(self, mask_or_index) -> "Dataset":
        idx = np.asarray(mask_or_index)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        if idx.size == 0:
            raise DatasetFormatError("selection is empty")
        return Dataset(self.subjects[idx], self.actions[idx], self.cameras[idx], self.frames[idx],
                       self.poses[idx], self.skeleton,
                       None if self.depth is None else self.depth[idx],
                       None if self.uv is None else self.uv[idx],
                       self.subject_lengths, self.provenance)

    def replace(self, **changes) -> "Dataset":
        fields = dict(subjects=self.subjects, actions=self.actions, cameras=self.cameras,
                      frames=self.frames, poses=self.poses, skeleton=self.skeleton, depth=self.depth,
                      uv=self.uv, subject_lengths=self.subject_lengths, provenance=self.provenance)
        fields.update(changes)
        return Dataset(**fields)

    def equals(self, other: "Dataset", rtol=0.0) -> bool:
        def close(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and np.allclose(a, b, rtol=rtol, atol=0.0)
        return (np.array_equal(self.keys(), other.keys()) and close(self.poses, other.poses)
                and close(self.depth, other.depth) and close(self.uv, other.uv)
                and self.skeleton == other.skeleton)


# per-action (angle step rad/frame, yaw step rad/frame, translation step mm/frame)
ACTION_DYNAMICS = {
    1: (0.030, 0.010, 6.0), 2: (0.045, 0.015, 4.0), 3: (0.020, 0.005, 1.0),
    4: (0.040, 0.020, 5.0), 5: (0.020, 0.008, 2.0), 6: (0.025, 0.006, 1.0),
    7: (0.035, 0.015, 6.0), 8: (0.020, 0.004, 0.5), 9: (0.030, 0.004, 0.5),
    10: (0.020, 0.008, 2.0), 11: (0.035, 0.015, 4.0), 12: (0.030, 0.008, 2.0),
    13: (0.050, 0.010, 15.0), 14: (0.045, 0.015, 12.0), 15: (0.050, 0.012, 13.0),
}
MEAN_REVERSION = 0.03
PELVIS_HEIGHT = 950.0
STAGE_RADIUS = 1000.0


def _reflect(x, lo, hi):
    width = hi - lo
    if np.all(width == 0):
        return np.broadcast_to(lo, x.shape).copy()
    safe = np.where(width > 0, width, 1.0)
    y = np.mod(x - lo, 2 * safe)
    y = np.where(y > safe, 2 * safe - y, y)
    return np.where(width > 0, lo + y, lo)


def synth_generate(model: SkeletonModel, n_subjects: int, n_frames_per: int, seed: int) -> Dataset:
    """Generate n_subjects x 15 actions x n_frames_per world-frame poses.

    Each (subject, action) sequence is a mean-reverting bounded random walk on the
    bone angles, pulled toward an action-specific posture. Subjects differ by
    per-limb length factors in [0.9, 1.1] (left/right limbs share a factor).
    All frames carry camera id 1; see ``expand_cameras``.
    """
    if n_subjects < 1 or n_frames_per < 1:
        raise ValueError("n_subjects and n_frames_per must be >= 1")
    model.validate()
    lo = np.array([[l[0] for l in b.limits] for b in model.bones])
    hi = np.array([[l[1] for l in b.limits] for b in model.bones])
    ss = np.random.SeedSequence(seed)
    action_ss, subject_ss = ss.spawn(2)
    arng = np.random.default_rng(action_ss)
    centers = {a: lo + (hi - lo) * arng.uniform(0.2, 0.8, size=lo.shape) for a in range(1, N_ACTIONS + 1)}

    mirror = {}
    for k, b in enumerate(model.bones):
        name = JointId(b.child).name
        twin = name[1:] if name[0] in "LR" and name[1].isupper() else None
        mirror[k] = twin or name

    subjects, actions, frames, poses = [], [], [], []
    subject_lengths = {}
    for s, sub_ss in enumerate(subject_ss.spawn(n_subjects), start=1):
        rng = np.random.default_rng(sub_ss)
        groups = sorted(set(mirror.values()))
        factor = dict(zip(groups, rng.uniform(0.9, 1.1, size=len(groups))))
        lengths = model.lengths * np.array([factor[mirror[k]] for k in range(len(model.bones))])
        subject_lengths[s] = lengths
        for a in range(1, N_ACTIONS + 1):
            step, yaw_step, move_step = ACTION_DYNAMICS[a]
            theta = lo + (hi - lo) * rng.uniform(size=lo.shape)
            yaw = rng.uniform(0, 2 * np.pi)
            r, phi = STAGE_RADIUS * np.sqrt(rng.uniform()), rng.uniform(0, 2 * np.pi)
            xy = np.array([r * np.cos(phi), r * np.sin(phi)])
            tilt = rng.uniform(-0.1, 0.1, size=2)
            ang_seq = np.empty((n_frames_per,) + lo.shape)
            rot_seq = np.empty((n_frames_per, 3))
            pos_seq = np.empty((n_frames_per, 3))
            for f in range(n_frames_per):
                ang_seq[f], rot_seq[f] = theta, (tilt[0], tilt[1], yaw)
                pos_seq[f] = (xy[0], xy[1], PELVIS_HEIGHT)
                theta = _reflect(theta + MEAN_REVERSION * (centers[a] - theta)
                                 + step * rng.standard_normal(lo.shape), lo, hi)
                yaw += yaw_step * rng.standard_normal()
                tilt = np.clip(tilt + 0.005 * rng.standard_normal(2), -0.15, 0.15)
                xy = xy + move_step * rng.standard_normal(2)
                rr = np.linalg.norm(xy)
                if rr > STAGE_RADIUS:
                    xy *= STAGE_RADIUS / rr
            pose = forward_kinematics(model, ang_seq, euler_xyz(rot_seq), pos_seq, lengths)
            subjects.append(np.full(n_frames_per, s))
            actions.append(np.full(n_frames_per, a))
            frames.append(np.arange(n_frames_per))
            poses.append(pose)
    n = n_subjects * N_ACTIONS * n_frames_per
    return Dataset(np.concatenate(subjects), np.concatenate(actions), np.ones(n, dtype=np.int64),
                   np.concatenate(frames), np.concatenate(poses), model,
                   subject_lengths=subject_lengths,
                   provenance=f"synthetic subjects={n_subjects} frames={n_frames_per} seed={seed}")


def expand_cameras(d: Dataset, camera_ids) -> Dataset:
    """Replicate every frame once per camera id (camera-major order)."""
    camera_ids = list(camera_ids)
    k = len(camera_ids)
    n = len(d)
    idx = np.tile(np.arange(n), k)
    cams = np.repeat(np.asarray(camera_ids, dtype=np.int64), n)
    out = d.select(idx)
    return out.replace(cameras=cams)


def split_protocol(d: Dataset, protocol: str) -> tuple[Dataset, Dataset]:
    """Train/test split by subject role; test sequences keep every 64th frame."""
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}")
    present = {SUBJECT_ROLES[s] for s in np.unique(d.subjects) if s in SUBJECT_ROLES}
    train_roles, test_roles = PROTOCOLS[protocol]
    missing = set(train_roles + test_roles) - present
    if missing:
        raise ValueError(f"protocol {protocol} needs subject roles {sorted(missing)}; "
                         f"dataset has {len(present)} mapped subjects")
    roles = np.array([SUBJECT_ROLES.get(int(s), "") for s in d.subjects])
    train = d.select(np.isin(roles, train_roles))
    test_mask = np.isin(roles, test_roles)

    keep = np.zeros(len(d), dtype=bool)
    idx = np.flatnonzero(test_mask)
    order = np.lexsort((d.frames[idx], d.cameras[idx], d.actions[idx], d.subjects[idx]))
    idx = idx[order]
    seq = d.keys()[idx, :3]
    start = np.r_[True, np.any(seq[1:] != seq[:-1], axis=1)]
    pos = np.arange(len(idx)) - np.maximum.accumulate(np.where(start, np.arange(len(idx)), 0))
    keep[idx[pos % TEST_STRIDE == 0]] = True
    return train, d.select(keep)


def _fmt(v):
    return format(float(v), ".9g")


def save_dataset(d: Dataset, path) -> None:
    header = {"schema": SCHEMA, "joints": JOINT_NAMES, "skeleton": d.skeleton.to_dict(),
              "subject_lengths": {str(k): [float(x) for x in v] for k, v in sorted(d.subject_lengths.items())},
              "provenance": d.provenance}
    lines = [json.dumps(header)]
    for i in range(len(d)):
        pose = ",".join("[" + ",".join(_fmt(c) for c in p) + "]" for p in d.poses[i])
        rec = (f'{{"subject":{int(d.subjects[i])},"action":{int(d.actions[i])},'
               f'"camera":{int(d.cameras[i])},"frame":{int(d.frames[i])},"pose":[{pose}]')
        if d.uv is not None:
            rec += ',"uv":[' + ",".join("[" + ",".join(_fmt(c) for c in p) + "]" for p in d.uv[i]) + "]"
        if d.depth is not None:
            rec += ',"depth":[' + ",".join(_fmt(c) for c in d.depth[i]) + "]"
        lines.append(rec + "}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path) -> Dataset:
    text = Path(path).read_text()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DatasetFormatError(f"{path}: empty file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"{path}:1: malformed header ({e.msg})") from None
    if header.get("schema") != SCHEMA:
        raise DatasetFormatError(f"{path}:1: unknown schema {header.get('schema')!r}")
    if header.get("joints") != JOINT_NAMES:
        raise DatasetFormatError(f"{path}:1: expected the {N_JOINTS} joint names {JOINT_NAMES}")
    skeleton = SkeletonModel.from_dict(header["skeleton"]) if "skeleton" in header else default_skeleton()

    cols = {k: [] for k in ("subject", "action", "camera", "frame")}
    poses, depth, uv = [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
            for k in cols:
                cols[k].append(int(rec[k]))
            pose = np.asarray(rec["pose"], dtype=float)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise DatasetFormatError(f"{path}:{lineno}: malformed record ({e})") from None
        if pose.shape != (N_JOINTS, 3):
            raise DatasetFormatError(f"{path}:{lineno}: expected {N_JOINTS} joints x 3, got shape {pose.shape}")
        poses.append(pose)
        if "depth" in rec:
            depth.append(rec["depth"])
        if "uv" in rec:
            uv.append(rec["uv"])
    n = len(poses)
    for name, col in (("depth", depth), ("uv", uv)):
        if col and len(col) != n:
            raise DatasetFormatError(f"{path}: field {name!r} present on only {len(col)} of {n} records")
    try:
        depth_arr = np.asarray(depth, dtype=float) if depth else None
        uv_arr = np.asarray(uv, dtype=float) if uv else None
    except ValueError as e:
        raise DatasetFormatError(f"{path}: ragged depth/uv fields ({e})") from None
    keys = np.array([cols["subject"], cols["action"], cols["camera"], cols["frame"]]).T
    if n and len(np.unique(keys, axis=0)) != n:
        raise DatasetFormatError(f"{path}: duplicate (subject, action, camera, frame) keys")
    lengths = {int(k): np.asarray(v) for k, v in header.get("subject_lengths", {}).items()}
    return Dataset(cols["subject"], cols["action"], cols["camera"], cols["frame"],
                   np.asarray(poses).reshape(n, N_JOINTS, 3), skeleton, depth_arr, uv_arr,
                   lengths, header.get("provenance", ""))
