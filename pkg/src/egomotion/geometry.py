"""SE(3) pose algebra in double precision.

Conventions, fixed here and pinned by the test suite:

* Euler angles follow ``R = Rz(rz) @ Ry(ry) @ Rx(rx)``.
* Axes follow the KITTI camera frame: x right, y down, z forward.
* Horizontal mirroring of the scene conjugates a motion with the
  reflection ``diag(-1, 1, 1)`` about the x axis.

All operations are pure functions on immutable values; transforms wrap
read-only arrays so results can be shared freely between threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, GimbalLockError

ORTHONORMALITY_TOL = 1e-9
GIMBAL_COS_TOL = 1e-6


@dataclass(frozen=True)
class PoseVector6:
    """Relative 6-DoF motion: translation in meters, Euler angles in radians."""

    tx: float
    ty: float
    tz: float
    rx: float
    ry: float
    rz: float

    def __post_init__(self):
        vals = (self.tx, self.ty, self.tz, self.rx, self.ry, self.rz)
        if not all(math.isfinite(v) for v in vals):
            raise ContractError(f"pose vector has non-finite components: {vals}")
        for name in ("rx", "ry", "rz"):
            a = getattr(self, name)
            if not (-math.pi < a <= math.pi):
                raise ContractError(f"angle {name}={a!r} outside (-pi, pi]")

    @classmethod
    def from_array(cls, arr) -> "PoseVector6":
        arr = np.asarray(arr, dtype=np.float64).reshape(6)
        return cls(*(float(v) for v in arr))

    def to_array(self) -> np.ndarray:
        return np.array(
            [self.tx, self.ty, self.tz, self.rx, self.ry, self.rz], dtype=np.float64
        )


class RigidTransform:
    """A 4x4 homogeneous SE(3) matrix with validated structure."""

    __slots__ = ("mat",)

    def __init__(self, mat):
        mat = np.array(mat, dtype=np.float64)
        if mat.shape != (4, 4):
            raise ContractError(f"rigid transform must be 4x4, got {mat.shape}")
        if not np.all(np.isfinite(mat)):
            raise ContractError("rigid transform contains non-finite entries")
        if not np.array_equal(mat[3], [0.0, 0.0, 0.0, 1.0]):
            raise ContractError(f"bottom row must be (0,0,0,1), got {mat[3]}")
        R = mat[:3, :3]
        drift = np.abs(R.T @ R - np.eye(3)).max()
        if drift > ORTHONORMALITY_TOL:
            raise ContractError(f"rotation block not orthonormal (drift {drift:.3e})")
        det = np.linalg.det(R)
        if abs(det - 1.0) > ORTHONORMALITY_TOL:
            raise ContractError(f"rotation block must have det 1, got {det!r}")
        mat.flags.writeable = False
        self.mat = mat

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(4))

    @property
    def rotation(self) -> np.ndarray:
        return self.mat[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.mat[:3, 3]

    def __repr__(self):
        return f"RigidTransform({self.mat.tolist()!r})"


@dataclass(frozen=True)
class Trajectory:
    """Absolute poses by frame index; the first pose is the identity by convention."""

    frames: tuple

    def __post_init__(self):
        indices = [idx for idx, _ in self.frames]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise ContractError("trajectory frame indices must be strictly increasing")

    def __len__(self):
        return len(self.frames)

    def poses(self) -> list:
        return [pose for _, pose in self.frames]

    def positions(self) -> np.ndarray:
        """(n, 3) array of camera positions in meters."""
        return np.array([pose.translation for _, pose in self.frames])


def _rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=np.float64)


def _rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=np.float64)


def _rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=np.float64)


def _orthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix via polar decomposition (SVD route)."""
    U, _, Vt = np.linalg.svd(R)
    Q = U @ Vt
    if np.linalg.det(Q) < 0:
        U[:, -1] = -U[:, -1]
        Q = U @ Vt
    return Q


def _build(R: np.ndarray, t: np.ndarray) -> RigidTransform:
    drift = np.abs(R.T @ R - np.eye(3)).max()
    if drift > ORTHONORMALITY_TOL:
        R = _orthonormalize(R)
    mat = np.eye(4)
    mat[:3, :3] = R
    mat[:3, 3] = t
    return RigidTransform(mat)


def vec_to_se3(p: PoseVector6) -> RigidTransform:
    """Lift a 6-DoF pose vector to its homogeneous matrix."""
    R = _rot_z(p.rz) @ _rot_y(p.ry) @ _rot_x(p.rx)
    return _build(R, np.array([p.tx, p.ty, p.tz]))


def se3_to_vec(T: RigidTransform) -> PoseVector6:
    """Invert vec_to_se3. Raises GimbalLockError near |ry| = pi/2."""
    R = T.rotation
    cos_ry = math.hypot(R[2, 1], R[2, 2])
    if cos_ry < GIMBAL_COS_TOL:
        ry = math.asin(max(-1.0, min(1.0, -R[2, 0])))
        raise GimbalLockError(
            f"ry={ry!r} within {GIMBAL_COS_TOL} of the +-pi/2 singularity"
        )
    ry = math.atan2(-R[2, 0], cos_ry)
    rx = math.atan2(R[2, 1], R[2, 2])
    rz = math.atan2(R[1, 0], R[0, 0])
    t = T.translation
    # atan2 returns values in [-pi, pi]; fold the open end of the interval.
    rx, ry, rz = (math.pi if a == -math.pi else a for a in (rx, ry, rz))
    return PoseVector6(float(t[0]), float(t[1]), float(t[2]), rx, ry, rz)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Matrix product a @ b, re-orthonormalized if rounding drift built up."""
    m = a.mat @ b.mat
    return _build(m[:3, :3], m[:3, 3])


def invert(T: RigidTransform) -> RigidTransform:
    """Closed-form SE(3) inverse (R^T, -R^T t)."""
    R = T.rotation.T
    return _build(R, -R @ T.translation)


def accumulate(relatives) -> Trajectory:
    """Chain relative motions into absolute poses starting from the identity."""
    if not relatives:
        raise ContractError("accumulate needs at least one relative transform")
    frames = [(0, RigidTransform.identity())]
    for i, rel in enumerate(relatives):
        frames.append((i + 1, compose(frames[-1][1], rel)))
    return Trajectory(tuple(frames))


_MIRROR = np.diag([-1.0, 1.0, 1.0, 1.0])


def conjugate_mirror(T: RigidTransform) -> RigidTransform:
    """Motion seen in a horizontally mirrored scene: F @ T @ F with F = diag(-1,1,1)."""
    m = _MIRROR @ T.mat @ _MIRROR
    return _build(m[:3, :3], m[:3, 3])
