"""
Pluggable frame-to-frame trackers.

A tracker is initialised at a pose, then asked for one pose per incoming
frame. It only ever sees an ``Observation`` (depth, optional colour,
intrinsics, timestamp): the ground-truth pose that a ``Frame`` carries for
the harness is stripped before ``update`` is called. The single exception is
the ``echo`` reference tracker, which declares ``reads_ground_truth`` and is
used to validate the harness itself.

Available trackers (see ``make_tracker``):

- ``icp``: point-to-plane ICP of sampled model points against the observed
  depth, cropped around the previous pose.
- ``echo``: returns the ground-truth pose of every frame.
- ``frozen``: never moves away from its init/reset pose.
- ``playback``: replays a recorded pose trace.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Union

import cv2
import numpy as np
from numpy.typing import NDArray
from scipy.spatial import cKDTree

from .camera import PIXEL_CENTER, Intrinsics
from .exceptions import LowOverlapError, ValidationError
from .render import Mesh
from .se3 import Pose, rotation_from_rotvec

logger = logging.getLogger(__name__)


# ==================== FRAMES ====================

@dataclass(frozen=True, eq=False)
class Observation:
    """What a tracker is allowed to see of a frame."""

    depth: NDArray[np.float32]
    intrinsics: Intrinsics
    timestamp_ms: float = 0.0
    index: int = 0
    rgb: Optional[NDArray[np.uint8]] = None


@dataclass(frozen=True, eq=False)
class Frame:
    """
    One captured (or synthesized) frame of a sequence.

    Attributes:
        depth: (H, W) depth in mm, 0 = no return
        intrinsics: camera of the depth image
        timestamp_ms: capture time
        gt_pose: ground-truth object-to-camera pose (harness use only)
        index: position in the sequence
        rgb: optional (H, W, 3) colour image
    """

    depth: NDArray[np.float32]
    intrinsics: Intrinsics
    timestamp_ms: float = 0.0
    gt_pose: Optional[Pose] = None
    index: int = 0
    rgb: Optional[NDArray[np.uint8]] = None

    def __post_init__(self):
        depth = np.asarray(self.depth, dtype=np.float32)
        if depth.shape != self.intrinsics.shape:
            raise ValidationError(
                f"Depth image {depth.shape} does not match intrinsics {self.intrinsics.shape}"
            )
        depth.flags.writeable = False
        object.__setattr__(self, 'depth', depth)

    def observation(self) -> Observation:
        """GT-stripped view handed to trackers."""
        return Observation(self.depth, self.intrinsics, self.timestamp_ms, self.index, self.rgb)


# ==================== TRACKER INTERFACE ====================

@dataclass
class TrackerState:
    """Current pose plus per-tracker scratch (model samples, indices...)."""

    current_pose: Pose
    mesh: Mesh
    scratch: Dict[str, Any] = field(default_factory=dict)


class Tracker(ABC):
    """
    Stateful single-object tracker.

    One instance tracks one sequence at a time; ``init`` (or ``reset``) must
    be called before ``update``.
    """

    name = 'tracker'
    reads_ground_truth = False

    def __init__(self):
        self.state: Optional[TrackerState] = None
        self.last_status: Optional['IcpStatus'] = None

    def init(self, mesh: Mesh, pose0: Pose) -> TrackerState:
        mesh.validate()
        self.state = TrackerState(pose0, mesh)
        self.last_status = None
        return self.state

    @abstractmethod
    def update(self, frame: Union[Observation, Frame]) -> Pose:
        """Consume the next frame and return the new pose estimate."""

    def reset(self, pose: Pose) -> None:
        """Overwrite the current pose (scratch derived from the mesh is kept)."""
        self._require_state().current_pose = pose

    @property
    def current_pose(self) -> Pose:
        return self._require_state().current_pose

    def _require_state(self) -> TrackerState:
        if self.state is None:
            raise ValidationError(f"Tracker '{self.name}' used before init()")
        return self.state


# ==================== ICP ====================

@dataclass(frozen=True)
class IcpParams:
    """Point-to-plane ICP settings."""

    n_model_points: int = 5000
    max_iterations: int = 30
    tolerance: float = 1e-4
    max_correspondence_mm: float = 20.0
    max_normal_angle_deg: float = 60.0
    crop_scale: float = 1.3
    min_inlier_fraction: float = 0.1
    normal_smoothing_px: int = 5
    seed: int = 0
    strict: bool = False

    def __post_init__(self):
        if self.n_model_points < 6 or self.max_iterations < 1:
            raise ValidationError("ICP needs at least 6 model points and 1 iteration")
        if not 0.0 <= self.min_inlier_fraction <= 1.0:
            raise ValidationError(f"min_inlier_fraction must lie in [0, 1], got {self.min_inlier_fraction}")


@dataclass(frozen=True, eq=False)
class ModelCloud:
    """Area-uniform surface samples of a mesh, fixed for the lifetime of a tracker."""

    points: NDArray[np.float64]
    normals: NDArray[np.float64]
    centroid: NDArray[np.float64]
    diameter: float

    @classmethod
    def from_mesh(cls, mesh: Mesh, n_points: int, seed: int = 0) -> 'ModelCloud':
        points, normals = mesh.sample_surface(n_points, np.random.default_rng(seed))
        return cls(points, normals, mesh.centroid(), mesh.max_dimension())


@dataclass
class IcpStatus:
    """Outcome of one ICP refinement."""

    pose: Pose
    iterations: int = 0
    inlier_fraction: float = 0.0
    low_overlap: bool = False
    cost_history: List[float] = field(default_factory=list)


@dataclass
class _Matches:
    points: NDArray[np.float64]
    normals: NDArray[np.float64]
    targets: NDArray[np.float64]
    visible: int

    @property
    def count(self) -> int:
        return len(self.points)

    @property
    def fraction(self) -> float:
        return self.count / self.visible if self.visible else 0.0

    @property
    def residuals(self) -> NDArray[np.float64]:
        return np.sum(self.normals * (self.points - self.targets), axis=1)

    @property
    def cost(self) -> float:
        r = self.residuals
        return float(r @ r) / len(r) if len(r) else float('inf')


def _crop_window(center: np.ndarray, half_mm: float, k: Intrinsics):
    """Pixel rectangle (row0, row1, col0, col1) covering a cube around ``center``."""
    z_near = center[2] - half_mm
    if z_near <= 0:
        return 0, k.height, 0, k.width
    u = k.fx * center[0] / center[2] + k.cx
    v = k.fy * center[1] / center[2] + k.cy
    du = k.fx * (abs(center[0]) + half_mm) / z_near - k.fx * abs(center[0]) / center[2]
    dv = k.fy * (abs(center[1]) + half_mm) / z_near - k.fy * abs(center[1]) / center[2]
    c0 = int(np.clip(np.floor(u - du), 0, k.width))
    c1 = int(np.clip(np.ceil(u + du) + 1, 0, k.width))
    r0 = int(np.clip(np.floor(v - dv), 0, k.height))
    r1 = int(np.clip(np.ceil(v + dv) + 1, 0, k.height))
    return r0, r1, c0, c1


def observed_cloud(depth: np.ndarray, k: Intrinsics, center: np.ndarray, half_mm: float,
                   smoothing_px: int = 5):
    """
    Observed points and normals inside an axis-aligned cube around ``center``.

    Normals come from central differences of a box-filtered point map
    (normalized by the count of valid pixels) and point towards the camera.

    Returns:
        (points, normals): (N, 3) arrays
    """
    r0, r1, c0, c1 = _crop_window(center, half_mm, k)
    if r1 - r0 < 3 or c1 - c0 < 3:
        return np.empty((0, 3)), np.empty((0, 3))
    # one pixel of margin for the differences
    r0, r1 = max(r0 - 1, 0), min(r1 + 1, k.height)
    c0, c1 = max(c0 - 1, 0), min(c1 + 1, k.width)
    sub = np.asarray(depth[r0:r1, c0:c1], dtype=np.float64)
    valid = sub > 0

    u = np.arange(c0, c1, dtype=np.float64) + PIXEL_CENTER
    v = np.arange(r0, r1, dtype=np.float64) + PIXEL_CENTER
    pts = np.stack([(u[None, :] - k.cx) * sub / k.fx,
                    (v[:, None] - k.cy) * sub / k.fy,
                    sub], axis=-1)

    size = (smoothing_px, smoothing_px)
    weight = cv2.blur(valid.astype(np.float64), size)
    smooth = np.empty_like(pts)
    for c in range(3):
        smooth[..., c] = cv2.blur(pts[..., c], size)
    with np.errstate(invalid='ignore', divide='ignore'):
        smooth /= weight[..., None]

    du = np.zeros_like(smooth)
    dv = np.zeros_like(smooth)
    du[:, 1:-1] = smooth[:, 2:] - smooth[:, :-2]
    dv[1:-1, :] = smooth[2:, :] - smooth[:-2, :]
    normals = np.cross(du, dv)
    norm = np.linalg.norm(normals, axis=-1)

    neighbours = np.zeros_like(valid)
    neighbours[1:-1, 1:-1] = (valid[1:-1, 1:-1] & valid[:-2, 1:-1] & valid[2:, 1:-1]
                              & valid[1:-1, :-2] & valid[1:-1, 2:])
    keep = neighbours & np.isfinite(norm) & (norm > 0)
    keep &= np.all(np.abs(pts - center) <= half_mm, axis=-1)

    p = pts[keep]
    n = normals[keep] / norm[keep][:, None]
    flip = np.sum(n * p, axis=1) > 0
    n[flip] = -n[flip]
    return p, n


def _match(model: ModelCloud, pose: Pose, tree: cKDTree, obs_normals: np.ndarray,
           obs_points: np.ndarray, params: IcpParams, min_cos: float) -> _Matches:
    p = pose.transform_points(model.points)
    n = model.normals @ pose.rotation.T
    # back-facing samples cannot be observed
    facing = np.sum(n * p, axis=1) < 0
    p, n = p[facing], n[facing]
    dist, idx = tree.query(p, distance_upper_bound=params.max_correspondence_mm)
    found = np.isfinite(dist)
    idx = np.where(found, idx, 0)
    agree = np.sum(n * obs_normals[idx], axis=1) >= min_cos
    keep = found & agree
    return _Matches(p[keep], n[keep], obs_points[idx[keep]], int(facing.sum()))


def refine_pose(
    mesh: Mesh,
    start_pose: Pose,
    depth: np.ndarray,
    k: Intrinsics,
    params: Optional[IcpParams] = None,
    model: Optional[ModelCloud] = None
) -> IcpStatus:
    """
    Point-to-plane ICP of the mesh against one depth image.

    Each iteration re-associates the visible model samples with their
    nearest observed points (rejecting pairs further than
    ``max_correspondence_mm`` or with normals more than
    ``max_normal_angle_deg`` apart), solves the linearized small-motion
    problem and applies the increment on the left. A step is accepted only
    if the point-to-plane cost with fresh correspondences does not increase.

    When fewer than ``min_inlier_fraction`` of the visible samples find a
    partner, the start pose is returned with ``low_overlap`` set (or
    LowOverlapError raised when ``params.strict``).

    Args:
        mesh: object mesh (only used when ``model`` is not given)
        start_pose: initial object-to-camera pose
        depth: observed depth in mm
        k: camera intrinsics
        params: ICP settings
        model: pre-sampled model cloud

    Returns:
        IcpStatus with the refined pose
    """
    params = params or IcpParams()
    if model is None:
        model = ModelCloud.from_mesh(mesh, params.n_model_points, params.seed)

    center = start_pose.transform_points(model.centroid)
    half = 0.5 * params.crop_scale * model.diameter
    obs_points, obs_normals = observed_cloud(depth, k, center, half, params.normal_smoothing_px)

    status = IcpStatus(start_pose)
    matches = None
    if len(obs_points) >= 6:
        tree = cKDTree(obs_points)
        min_cos = float(np.cos(np.radians(params.max_normal_angle_deg)))
        matches = _match(model, start_pose, tree, obs_normals, obs_points, params, min_cos)
        status.inlier_fraction = matches.fraction

    if matches is None or matches.count < 6 or matches.fraction < params.min_inlier_fraction:
        status.low_overlap = True
        message = (f"ICP overlap too low ({status.inlier_fraction:.1%} of visible model points "
                   f"matched, {len(obs_points)} observed points in the crop)")
        if params.strict:
            raise LowOverlapError(message)
        logger.warning("%s; keeping the previous pose", message)
        return status

    pose, cost = start_pose, matches.cost
    status.cost_history.append(cost)
    for it in range(params.max_iterations):
        a = np.hstack([np.cross(matches.points, matches.normals), matches.normals])
        b = -matches.residuals
        x, *_ = np.linalg.lstsq(a, b, rcond=None)
        dr = rotation_from_rotvec(x[:3])
        candidate = Pose(dr @ pose.rotation, dr @ pose.translation + x[3:])
        fresh = _match(model, candidate, tree, obs_normals, obs_points, params, min_cos)
        status.iterations = it + 1
        if fresh.count < 6 or fresh.cost > cost:
            break
        change = (cost - fresh.cost) / cost if cost > 0 else 0.0
        pose, cost, matches = candidate, fresh.cost, fresh
        status.cost_history.append(cost)
        if change < params.tolerance:
            break

    status.pose = pose
    status.inlier_fraction = matches.fraction
    logger.debug("ICP: %d iterations, cost %.4f mm^2, inliers %.1f%%",
                 status.iterations, cost, 100.0 * status.inlier_fraction)
    return status


class IcpTracker(Tracker):
    """Depth-only baseline: one ICP refinement per frame, seeded at the previous pose."""

    name = 'icp'

    def __init__(self, params: Optional[IcpParams] = None):
        super().__init__()
        self.params = params or IcpParams()

    def init(self, mesh: Mesh, pose0: Pose) -> TrackerState:
        state = super().init(mesh, pose0)
        state.scratch['model'] = ModelCloud.from_mesh(mesh, self.params.n_model_points, self.params.seed)
        return state

    def update(self, frame: Union[Observation, Frame]) -> Pose:
        state = self._require_state()
        status = refine_pose(state.mesh, state.current_pose, frame.depth, frame.intrinsics,
                             self.params, state.scratch['model'])
        self.last_status = status
        state.current_pose = status.pose
        return status.pose


# ==================== REFERENCE TRACKERS ====================

class EchoTracker(Tracker):
    """Oracle: returns the ground-truth pose of every frame."""

    name = 'echo'
    reads_ground_truth = True

    def update(self, frame: Union[Observation, Frame]) -> Pose:
        state = self._require_state()
        gt = getattr(frame, 'gt_pose', None)
        if gt is None:
            raise ValidationError("The echo tracker needs frames that carry a ground-truth pose")
        state.current_pose = gt
        return gt


class FrozenTracker(Tracker):
    """Never moves: returns the pose of the last init or reset."""

    name = 'frozen'

    def update(self, frame: Union[Observation, Frame]) -> Pose:
        return self.current_pose


class PlaybackTracker(Tracker):
    """
    Replays recorded estimates keyed by frame index.

    Frames missing from the trace keep the current pose.
    """

    name = 'playback'

    def __init__(self, trace: Mapping[int, Pose]):
        super().__init__()
        self.trace = dict(trace)

    def update(self, frame: Union[Observation, Frame]) -> Pose:
        state = self._require_state()
        pose = self.trace.get(frame.index)
        if pose is not None:
            state.current_pose = pose
        return state.current_pose


TRACKERS = ('icp', 'echo', 'frozen', 'playback')


def make_tracker(name: str, params: Optional[IcpParams] = None,
                 trace: Optional[Mapping[int, Pose]] = None) -> Tracker:
    """
    Build a tracker by name.

    Raises:
        ValidationError: unknown name, or ``playback`` without a trace
    """
    if name == 'icp':
        return IcpTracker(params)
    if name == 'echo':
        return EchoTracker()
    if name == 'frozen':
        return FrozenTracker()
    if name == 'playback':
        if trace is None:
            raise ValidationError("The playback tracker needs a pose trace")
        return PlaybackTracker(trace)
    raise ValidationError(f"Unknown tracker '{name}'. Available: {', '.join(TRACKERS)}")
