"""
Pose-perturbation sampling for synthetic training pairs.

A pair is a predicted pose and a ground-truth pose that differs from it by
a random rigid perturbation; the label a learned tracker regresses is that
perturbation, expressed as (tx, ty, tz) in mm and intrinsic X-Y-Z Euler
angles in degrees.

Label convention::

    t_gt = t_pred + t_d
    R_gt = R_pred @ R_d
    label = (t_d, euler(R_d))

Two sampling modes:

- ``spherical``: translation = uniform direction * m_t with m_t ~ N(0, dt),
  rotation = uniform axis with angle m_r ~ N(0, dr) (standard deviations).
- ``uniform_component``: every translation component ~ U(-dt, dt) and every
  Euler component ~ U(-dr, dr).
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence

import cv2
import numpy as np
from numpy.typing import NDArray

from .camera import Intrinsics
from .exceptions import BehindCameraError, ValidationError
from .render import Mesh, project, render_depth
from .se3 import Pose, euler_to_rotation, random_rotation, rotation_about_axis, rotation_to_euler

logger = logging.getLogger(__name__)

MODES = ('spherical', 'uniform_component')
CROP_SIZE_PX = 150
CROP_SCALE = 1.3


@dataclass(frozen=True)
class PerturbationConfig:
    """Scales of the perturbation: translation in mm, rotation in degrees."""

    delta_t_mm: float = 30.0
    delta_r_deg: float = 15.0
    mode: str = 'spherical'

    def __post_init__(self):
        if self.delta_t_mm < 0 or self.delta_r_deg < 0:
            raise ValidationError(
                f"Perturbation scales must be >= 0, got dt={self.delta_t_mm}, dr={self.delta_r_deg}"
            )
        if self.mode not in MODES:
            raise ValidationError(f"Unknown sampling mode '{self.mode}'. Expected one of {MODES}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class PosePair:
    """Predicted and ground-truth pose with the label linking them, plus optional crops."""

    pose_gt: Pose
    pose_pred: Pose
    label: NDArray[np.float64]
    crop_pred: Optional[NDArray[np.float32]] = field(default=None, repr=False)
    crop_gt: Optional[NDArray[np.float32]] = field(default=None, repr=False)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'pose_gt': self.pose_gt.to_list(),
            'pose_pred': self.pose_pred.to_list(),
            'label': [float(v) for v in self.label]
        }


def sample_direction(rng: np.random.Generator, size: Optional[int] = None,
                     x: Optional[float] = None, theta: Optional[float] = None) -> NDArray[np.float64]:
    """
    Direction uniform on the unit sphere.

    theta ~ U(-pi, pi), phi = arccos(x) with x ~ U(-1, 1); the direction is
    (sin(phi) cos(theta), sin(phi) sin(theta), cos(phi)). ``x`` and ``theta``
    may be forced (e.g. ``x=1`` gives the +z pole).

    Returns:
        (3,) vector, or (size, 3) when ``size`` is given
    """
    n = 1 if size is None else int(size)
    xs = rng.uniform(-1.0, 1.0, n) if x is None else np.full(n, float(x))
    thetas = rng.uniform(-np.pi, np.pi, n) if theta is None else np.full(n, float(theta))
    phi = np.arccos(np.clip(xs, -1.0, 1.0))
    d = np.stack([np.sin(phi) * np.cos(thetas), np.sin(phi) * np.sin(thetas), np.cos(phi)], axis=1)
    return d[0] if size is None else d


def sample_perturbation(cfg: PerturbationConfig, rng: np.random.Generator) -> Pose:
    """Random perturbation (t_d, R_d) as a Pose."""
    if cfg.mode == 'spherical':
        translation = sample_direction(rng) * rng.normal(0.0, cfg.delta_t_mm)
        axis = sample_direction(rng)
        angle = rng.normal(0.0, cfg.delta_r_deg)
        return Pose(rotation_about_axis(axis, angle), translation)
    translation = rng.uniform(-cfg.delta_t_mm, cfg.delta_t_mm, 3)
    angles = rng.uniform(-cfg.delta_r_deg, cfg.delta_r_deg, 3)
    return Pose(euler_to_rotation(angles), translation)


def pose_label(pose_pred: Pose, pose_gt: Pose) -> NDArray[np.float64]:
    """Label (tx, ty, tz, rx, ry, rz) taking ``pose_pred`` to ``pose_gt``."""
    t_d = pose_gt.translation - pose_pred.translation
    r_d = pose_pred.rotation.T @ pose_gt.rotation
    return np.concatenate([t_d, rotation_to_euler(r_d).as_tuple()])


def apply_label(pose_pred: Pose, label: Sequence[float]) -> Pose:
    """Ground-truth pose reconstructed from the prediction and a label."""
    label = np.asarray(label, dtype=np.float64)
    if label.shape != (6,):
        raise ValidationError(f"A pose label has 6 values, got {label.shape}")
    return Pose(pose_pred.rotation @ euler_to_rotation(label[3:]), pose_pred.translation + label[:3])


def crop_depth(depth: np.ndarray, pose: Pose, center_obj: np.ndarray, diameter: float, k: Intrinsics,
               size: int = CROP_SIZE_PX, scale: float = CROP_SCALE) -> NDArray[np.float32]:
    """
    Square crop around the projection of the object centre, resized to ``size``.

    The side covers ``scale * diameter`` mm at the centre's depth; pixels
    outside the image are 0.
    """
    center = pose.transform_points(center_obj)
    try:
        u, v, z = project(center, k)
    except BehindCameraError:
        return np.zeros((size, size), dtype=np.float32)
    half = max(1, int(round(0.5 * scale * diameter * k.fx / z)))
    col, row = int(np.floor(u)), int(np.floor(v))
    padded = np.zeros((2 * half, 2 * half), dtype=np.float32)
    r0, c0 = row - half, col - half
    sr0, sr1 = max(r0, 0), min(r0 + 2 * half, k.height)
    sc0, sc1 = max(c0, 0), min(c0 + 2 * half, k.width)
    if sr0 < sr1 and sc0 < sc1:
        padded[sr0 - r0:sr1 - r0, sc0 - c0:sc1 - c0] = depth[sr0:sr1, sc0:sc1]
    return cv2.resize(padded, (size, size), interpolation=cv2.INTER_NEAREST)


def generate_pairs(
    mesh: Optional[Mesh],
    base_poses: Sequence[Pose],
    cfg: PerturbationConfig,
    n: int,
    rng: np.random.Generator,
    k: Optional[Intrinsics] = None,
    render: bool = False,
    crop_size: int = CROP_SIZE_PX,
    crop_scale: float = CROP_SCALE
) -> Iterator[PosePair]:
    """
    Stream ``n`` training pairs.

    Pair ``i`` takes ``base_poses[i % len(base_poses)]`` as the predicted
    pose and applies a sampled perturbation on the right of its rotation.
    With ``render`` both poses are rendered and cropped around the
    predicted pose, so the two crops share the same window.

    Raises:
        ValidationError: n < 1, no base poses, or rendering without mesh/intrinsics
    """
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    if not base_poses:
        raise ValidationError("At least one base pose is required")
    if render and (mesh is None or k is None):
        raise ValidationError("Rendering crops needs a mesh and intrinsics")
    if render:
        center_obj, diameter = mesh.centroid(), mesh.max_dimension()

    for i in range(n):
        pose_pred = base_poses[i % len(base_poses)]
        delta = sample_perturbation(cfg, rng)
        pose_gt = Pose(pose_pred.rotation @ delta.rotation, pose_pred.translation + delta.translation)
        label = np.concatenate([delta.translation, rotation_to_euler(delta.rotation).as_tuple()])
        if not render:
            yield PosePair(pose_gt, pose_pred, label)
            continue
        crop_pred = crop_depth(render_depth(mesh, pose_pred, k), pose_pred, center_obj, diameter, k,
                               crop_size, crop_scale)
        crop_gt = crop_depth(render_depth(mesh, pose_gt, k), pose_pred, center_obj, diameter, k,
                             crop_size, crop_scale)
        yield PosePair(pose_gt, pose_pred, label, crop_pred, crop_gt)


def default_base_poses(n: int, distance_mm: float, rng: np.random.Generator) -> List[Pose]:
    """``n`` random viewpoints of an object centred at ``distance_mm`` on the optical axis."""
    return [Pose(random_rotation(rng), np.array([0.0, 0.0, distance_mm])) for _ in range(n)]


def manifest_record(cfg: PerturbationConfig, seed: int, n: int, render: bool) -> Dict[str, Any]:
    """Header written next to a pair stream; lets reports of sweeps be compared."""
    return {
        'seed': int(seed),
        'n': int(n),
        'render': bool(render),
        'perturbation': cfg.to_dict(),
        'label': 'tx,ty,tz mm; rx,ry,rz deg (intrinsic XYZ); R_gt = R_pred @ R_d',
        'sigma_convention': 'standard deviation' if cfg.mode == 'spherical' else 'half-width'
    }
