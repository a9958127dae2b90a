"""
Rigid-transform algebra and the two pose-distance metrics.

Convention (used everywhere in the package): column vectors, a pose maps a
point as ``p_out = R @ p_in + t`` and ``compose(a, b)`` applies ``b`` first,
then ``a``, so that ``compose(a, b).matrix() == a.matrix() @ b.matrix()``.
Translations are in millimetres, reported angles in degrees.

Euler angles use the intrinsic X-Y-Z convention: ``R = Rx(alpha) @ Ry(beta)
@ Rz(gamma)``.
"""

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy.spatial.transform import Rotation as _Rotation

from .exceptions import ValidationError

logger = logging.getLogger(__name__)

ROTATION_TOLERANCE = 1e-6
GIMBAL_TOLERANCE_DEG = 1e-6
EULER_SEQUENCE = 'XYZ'

Mat3 = NDArray[np.float64]
Vec3 = NDArray[np.float64]


def is_rotation(m: np.ndarray, tol: float = ROTATION_TOLERANCE) -> bool:
    """Return True when ``m`` is a 3x3 orthonormal matrix with det +1."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        return False
    if np.max(np.abs(m.T @ m - np.eye(3))) > tol:
        return False
    return abs(np.linalg.det(m) - 1.0) <= tol


def orthonormalize(m: np.ndarray) -> Mat3:
    """Project a 3x3 matrix onto the closest rotation (SVD)."""
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=np.float64))
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r


def rot_x(deg: float) -> Mat3:
    """Rotation about the x axis."""
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(deg: float) -> Mat3:
    """Rotation about the y axis."""
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(deg: float) -> Mat3:
    """Rotation about the z axis."""
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_from_rotvec(rotvec: Sequence[float]) -> Mat3:
    """Rotation matrix from a rotation vector in radians (axis * angle)."""
    return _Rotation.from_rotvec(np.asarray(rotvec, dtype=np.float64)).as_matrix()


def rotation_about_axis(axis: Sequence[float], angle_deg: float) -> Mat3:
    """Rotation of ``angle_deg`` about ``axis`` (normalized here)."""
    axis = np.asarray(axis, dtype=np.float64)
    norm = np.linalg.norm(axis)
    if norm == 0.0 or not np.isfinite(norm):
        raise ValidationError(f"Rotation axis must be a finite non-zero vector, got {axis}")
    return rotation_from_rotvec(axis / norm * math.radians(angle_deg))


def random_rotation(rng: np.random.Generator) -> Mat3:
    """Uniformly distributed rotation drawn from ``rng``."""
    return _Rotation.random(random_state=rng).as_matrix()


def skew(v: Sequence[float]) -> Mat3:
    """Cross-product matrix: ``skew(a) @ b == cross(a, b)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


# ==================== POSE ====================

@dataclass(frozen=True, eq=False)
class Pose:
    """
    Rigid transform: rotation matrix plus translation vector in millimetres.

    Arrays are copied and made read-only on construction, so a Pose can be
    shared between threads.
    """

    rotation: Mat3
    translation: Vec3

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64)
        t = np.array(self.translation, dtype=np.float64).reshape(-1)
        if t.shape != (3,) or not np.all(np.isfinite(t)):
            raise ValidationError(f"Pose translation must be 3 finite values, got {t}")
        if not is_rotation(r):
            raise ValidationError("Pose rotation must be orthonormal with det(R) = +1")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, 'rotation', r)
        object.__setattr__(self, 'translation', t)

    @classmethod
    def identity(cls) -> 'Pose':
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_translation(cls, x: float, y: float, z: float) -> 'Pose':
        return cls(np.eye(3), np.array([x, y, z], dtype=np.float64))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> 'Pose':
        """Build from a 4x4 homogeneous matrix."""
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValidationError(f"Homogeneous pose matrix must be 4x4, got {m.shape}")
        if not np.allclose(m[3], [0.0, 0.0, 0.0, 1.0], atol=1e-9):
            raise ValidationError("Last row of a homogeneous pose must be [0, 0, 0, 1]")
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_list(cls, values: Iterable[float]) -> 'Pose':
        """Build from the 16-number row-major serialization."""
        values = list(values)
        if len(values) != 16:
            raise ValidationError(f"Serialized pose needs 16 numbers, got {len(values)}")
        return cls.from_matrix(np.array(values, dtype=np.float64).reshape(4, 4))

    def matrix(self) -> NDArray[np.float64]:
        """4x4 homogeneous matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def to_list(self) -> List[float]:
        """16-number row-major serialization (translation in mm)."""
        return [float(v) for v in self.matrix().reshape(-1)]

    def transform_points(self, points: np.ndarray) -> NDArray[np.float64]:
        """Apply the pose to an (N, 3) array (or a single 3-vector)."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def inverse(self) -> 'Pose':
        return invert(self)

    def __matmul__(self, other: 'Pose') -> 'Pose':
        return compose(self, other)

    def allclose(self, other: 'Pose', atol: float = 1e-9) -> bool:
        return (np.allclose(self.rotation, other.rotation, atol=atol)
                and np.allclose(self.translation, other.translation, atol=atol))

    def __repr__(self) -> str:
        t = ', '.join(f'{v:.3f}' for v in self.translation)
        return f'Pose(t=[{t}] mm, angle={rotation_angle_deg(self.rotation):.3f} deg)'


def compose(a: Pose, b: Pose) -> Pose:
    """Pose mapping a point through ``b`` then ``a``."""
    r = a.rotation @ b.rotation
    t = a.rotation @ b.translation + a.translation
    # keep long chains on the rotation manifold
    if not is_rotation(r, tol=1e-12):
        r = orthonormalize(r)
    return Pose(r, t)


def invert(p: Pose) -> Pose:
    """Inverse transform: ``compose(invert(p), p)`` is the identity."""
    rt = p.rotation.T
    return Pose(rt, -rt @ p.translation)


# ==================== METRICS ====================

def delta_t(t1: Sequence[float], t2: Sequence[float]) -> float:
    """Translation error: L2 norm of the difference, in mm."""
    return float(np.linalg.norm(np.asarray(t1, dtype=np.float64) - np.asarray(t2, dtype=np.float64)))


def delta_R(r1: np.ndarray, r2: np.ndarray) -> float:
    """
    Rotation error in degrees: arccos((Tr(R1^T R2) - 1) / 2).

    Evaluated through atan2 of the sine and (clamped) cosine of the relative
    angle, which equals the arccos form on [0, 180] and keeps full precision
    when the two rotations are nearly equal or nearly opposite.
    """
    m = np.asarray(r1, dtype=np.float64).T @ np.asarray(r2, dtype=np.float64)
    cos_angle = float(np.clip((np.trace(m) - 1.0) / 2.0, -1.0, 1.0))
    sin_angle = 0.5 * float(np.linalg.norm([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]]))
    return math.degrees(math.atan2(sin_angle, cos_angle))


def rotation_angle_deg(r: np.ndarray) -> float:
    """Angle of a rotation, i.e. its distance to the identity."""
    return delta_R(np.eye(3), r)


def pose_errors(reference: Pose, estimate: Pose) -> Tuple[float, float]:
    """(delta_t in mm, delta_R in degrees) between two poses."""
    return (delta_t(reference.translation, estimate.translation),
            delta_R(reference.rotation, estimate.rotation))


# ==================== EULER ANGLES ====================

@dataclass(frozen=True)
class EulerAngles:
    """Intrinsic X-Y-Z Euler angles in degrees."""

    alpha: float
    beta: float
    gamma: float
    gimbal_lock: bool = False

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.alpha, self.beta, self.gamma)


def euler_to_rotation(angles) -> Mat3:
    """
    Rotation matrix ``Rx(alpha) @ Ry(beta) @ Rz(gamma)``.

    Args:
        angles: EulerAngles or a sequence (alpha, beta, gamma) in degrees
    """
    if isinstance(angles, EulerAngles):
        angles = angles.as_tuple()
    values = np.asarray(angles, dtype=np.float64)
    if values.shape != (3,) or not np.all(np.isfinite(values)):
        raise ValidationError(f"Euler angles must be 3 finite values, got {angles}")
    return _Rotation.from_euler(EULER_SEQUENCE, values, degrees=True).as_matrix()


def rotation_to_euler(r: np.ndarray) -> EulerAngles:
    """
    Decompose a rotation into intrinsic X-Y-Z Euler angles (degrees).

    The ``gimbal_lock`` flag is set when |beta| is within 1e-6 degrees of 90;
    alpha and gamma are then not individually recoverable (only their sum or
    difference is), and the returned split is arbitrary.
    """
    r = np.asarray(r, dtype=np.float64)
    beta = math.degrees(math.asin(float(np.clip(r[0, 2], -1.0, 1.0))))
    locked = abs(abs(beta) - 90.0) <= GIMBAL_TOLERANCE_DEG
    with warnings.catch_warnings():
        warnings.simplefilter('ignore', UserWarning)
        alpha, beta_s, gamma = _Rotation.from_matrix(r).as_euler(EULER_SEQUENCE, degrees=True)
    if locked:
        logger.debug("Euler decomposition at gimbal lock (beta=%.6f deg)", beta_s)
    return EulerAngles(float(alpha), float(beta_s), float(gamma), gimbal_lock=locked)


