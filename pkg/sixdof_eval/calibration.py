"""
Ground-truth acquisition math.

The motion-capture system reports the marker frames of the object ("objm")
and of the camera rig ("kntm") in its own frame ("vcn"). The object pose in
the camera frame ("knt") is obtained by chaining those links with two
calibrated transforms:

    T_obj->knt = T_kntm->knt . (T_kntm->vcn)^-1 . T_objm->vcn . T_obj->objm

``T_kntm->knt`` comes from a probe-digitised checkerboard (sphere fit per
corner, then PnP), ``T_obj->objm`` from an ICP refinement against depth, and
the constant clock offset between the two devices from a reprojection-error
search.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import least_squares

from .camera import Intrinsics, project_points
from .exceptions import (
    DegenerateInputError,
    FlatObjectiveError,
    InsufficientPointsError,
    NoConvergenceError,
    NoOverlapError,
    ValidationError
)
from .render import Mesh
from .se3 import Pose, compose, invert, orthonormalize, rotation_from_rotvec, skew
from .tracking import IcpParams, refine_pose

logger = logging.getLogger(__name__)


# ==================== TRANSFORMATION CHAINING ====================

@dataclass(frozen=True)
class RigTransforms:
    """The four links between the object mesh and the camera."""

    objm_to_vcn: Pose
    kntm_to_vcn: Pose
    kntm_to_knt: Pose
    obj_to_objm: Pose


def objm_to_kntm(objm_to_vcn: Pose, kntm_to_vcn: Pose) -> Pose:
    """Object-marker frame expressed in the camera-marker frame."""
    return compose(invert(kntm_to_vcn), objm_to_vcn)


def chain_object_pose(rig: RigTransforms) -> Pose:
    """
    Object pose in the camera frame (T_obj->knt).

    Args:
        rig: the four rig links

    Returns:
        kntm_to_knt . kntm_to_vcn^-1 . objm_to_vcn . obj_to_objm
    """
    return compose(rig.kntm_to_knt, compose(objm_to_kntm(rig.objm_to_vcn, rig.kntm_to_vcn),
                                            rig.obj_to_objm))


def marker_frame(marker_positions: np.ndarray, rotation: Optional[np.ndarray] = None) -> Pose:
    """
    Local frame of a marker set: origin at the centre of mass of the markers.

    Args:
        marker_positions: (M, 3) marker positions in the tracking frame
        rotation: optional axes of the frame (defaults to the tracking axes)
    """
    pts = np.asarray(marker_positions, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValidationError("A marker frame needs at least one marker")
    return Pose(np.eye(3) if rotation is None else rotation, pts.mean(axis=0))


def refine_object_calibration(
    mesh: Mesh,
    depth: np.ndarray,
    k: Intrinsics,
    objm_to_knt: Pose,
    obj_to_objm_guess: Pose,
    params: Optional[IcpParams] = None
) -> Pose:
    """
    Refine a rough mesh-to-marker alignment with point-to-plane ICP.

    The guess places the mesh in the camera frame through the calibrated
    marker pose; ICP aligns it to the observed depth, and the refined link is
    read back through the same marker pose.

    Returns:
        Refined T_obj->objm
    """
    start = compose(objm_to_knt, obj_to_objm_guess)
    status = refine_pose(mesh, start, depth, k, params or IcpParams())
    if status.low_overlap:
        logger.warning("Object calibration kept the initial guess: too little overlap")
    return compose(invert(objm_to_knt), status.pose)


# ==================== PROBE SPHERE FIT ====================

@dataclass(frozen=True)
class SphereFit:
    """Least-squares sphere: centre and radius in mm, RMS geometric residual."""

    center: NDArray[np.float64]
    radius: float
    rms_residual: float

    def to_dict(self) -> dict:
        return {
            'center_mm': [float(c) for c in self.center],
            'radius_mm': float(self.radius),
            'rms_residual_mm': float(self.rms_residual)
        }


def fit_sphere(points: np.ndarray, max_condition: float = 1e8) -> SphereFit:
    """
    Fit a sphere to probe-tip positions.

    An algebraic linear fit (|p|^2 = 2 c.p + r^2 - |c|^2) on centred and
    scaled coordinates gives the start; a Levenberg-Marquardt run on the
    geometric residuals |p - c| - r refines it.

    Args:
        points: (N, 3) positions in mm, N >= 4, not coplanar
        max_condition: largest accepted condition number of the linear system

    Raises:
        DegenerateInputError: too few points, or points (nearly) coplanar
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 4:
        raise DegenerateInputError(f"Sphere fit needs at least 4 points, got {len(pts)}")
    mean = pts.mean(axis=0)
    scale = float(np.sqrt(np.mean(np.sum((pts - mean) ** 2, axis=1))))
    if scale == 0.0:
        raise DegenerateInputError("All probe points coincide")
    q = (pts - mean) / scale

    a = np.hstack([2.0 * q, np.ones((len(q), 1))])
    b = np.sum(q * q, axis=1)
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > max_condition:
        raise DegenerateInputError(
            f"Probe points do not sweep a sphere (condition number {cond:.3g})"
        )
    sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    r2 = sol[3] + sol[:3] @ sol[:3]
    if r2 <= 0:
        raise DegenerateInputError("Algebraic sphere fit returned an imaginary radius")

    def residuals(x):
        return np.linalg.norm(q - x[:3], axis=1) - x[3]

    def jacobian(x):
        d = q - x[:3]
        n = np.linalg.norm(d, axis=1)[:, None]
        return np.hstack([-d / np.where(n > 0, n, 1.0), -np.ones((len(q), 1))])

    x0 = np.append(sol[:3], np.sqrt(r2))
    fit = least_squares(residuals, x0, jac=jacobian, method='lm', xtol=1e-15, ftol=1e-15, gtol=1e-15)
    x = fit.x if np.sum(fit.fun ** 2) <= np.sum(residuals(x0) ** 2) else x0
    center = mean + scale * x[:3]
    radius = scale * abs(x[3])
    rms = float(np.sqrt(np.mean((np.linalg.norm(pts - center, axis=1) - radius) ** 2)))
    logger.debug("Sphere fit: center=%s radius=%.4f rms=%.4f", center, radius, rms)
    return SphereFit(center, float(radius), rms)


# ==================== PERSPECTIVE-N-POINTS ====================

@dataclass(frozen=True)
class Correspondence2D3D:
    """Detected image point (px) and its tracked 3D position (mm)."""

    image_point: NDArray[np.float64]
    world_point: NDArray[np.float64]


@dataclass(frozen=True)
class PnpParams:
    """Levenberg-Marquardt settings for the reprojection refinement."""

    min_points: int = 6
    max_iterations: int = 100
    lambda_init: float = 1e-3
    max_mean_error_px: float = 2.0
    relative_tolerance: float = 1e-12
    planarity_ratio: float = 1e-6


@dataclass
class PnpResult:
    """World-to-camera pose with the reprojection error of the solution."""

    pose: Pose
    mean_reprojection_px: float
    iterations: int
    initialization: str
    cost_history: List[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            'pose': self.pose.to_list(),
            'mean_reprojection_px': self.mean_reprojection_px,
            'iterations': self.iterations,
            'initialization': self.initialization
        }


def _normalized_image_points(uv: np.ndarray, k: Intrinsics) -> NDArray[np.float64]:
    return np.stack([(uv[:, 0] - k.cx) / k.fx, (uv[:, 1] - k.cy) / k.fy], axis=1)


def _similarity(points: np.ndarray) -> NDArray[np.float64]:
    """Hartley normalization: centre on the mean, mean distance sqrt(dim)."""
    dim = points.shape[1]
    mean = points.mean(axis=0)
    dist = np.mean(np.linalg.norm(points - mean, axis=1))
    s = np.sqrt(dim) / dist if dist > 0 else 1.0
    t = np.eye(dim + 1)
    t[:dim, :dim] *= s
    t[:dim, dim] = -s * mean
    return t


def _dlt_pose(xn: np.ndarray, world: np.ndarray) -> Pose:
    """Linear 3x4 projection estimate on normalized image coordinates."""
    t = _similarity(world)
    xw = (np.hstack([world, np.ones((len(world), 1))]) @ t.T)
    rows = []
    for (u, v), x in zip(xn, xw):
        rows.append(np.concatenate([x, np.zeros(4), -u * x]))
        rows.append(np.concatenate([np.zeros(4), x, -v * x]))
    _, _, vt = np.linalg.svd(np.asarray(rows))
    p = vt[-1].reshape(3, 4) @ t
    if np.linalg.det(p[:, :3]) < 0:
        p = -p
    u_, s, vt_ = np.linalg.svd(p[:, :3])
    return Pose(u_ @ vt_, p[:, 3] / s.mean())


def _homography_pose(xn: np.ndarray, world: np.ndarray) -> Pose:
    """Plane-induced homography estimate for coplanar 3D points."""
    mean = world.mean(axis=0)
    _, _, basis = np.linalg.svd(world - mean)
    if np.linalg.det(basis) < 0:
        basis[2] = -basis[2]
    plane_to_world = Pose(basis.T, mean)
    q = (world - mean) @ basis[:2].T

    t = _similarity(q)
    qh = np.hstack([q, np.ones((len(q), 1))]) @ t.T
    rows = []
    for (u, v), x in zip(xn, qh):
        rows.append(np.concatenate([x, np.zeros(3), -u * x]))
        rows.append(np.concatenate([np.zeros(3), x, -v * x]))
    _, _, vt = np.linalg.svd(np.asarray(rows))
    h = vt[-1].reshape(3, 3) @ t
    lam = 2.0 / (np.linalg.norm(h[:, 0]) + np.linalg.norm(h[:, 1]))
    if h[2, 2] * lam < 0:
        lam = -lam
    r1, r2, tr = lam * h[:, 0], lam * h[:, 1], lam * h[:, 2]
    r = orthonormalize(np.stack([r1, r2, np.cross(r1, r2)], axis=1))
    return compose(Pose(r, tr), invert(plane_to_world))


def _reprojection(pose: Pose, world: np.ndarray, uv: np.ndarray, k: Intrinsics):
    cam = pose.transform_points(world)
    proj, _ = project_points(cam, k)
    return cam, (proj - uv).reshape(-1)


def solve_pnp(
    correspondences: Sequence[Correspondence2D3D],
    k: Intrinsics,
    params: PnpParams = PnpParams()
) -> PnpResult:
    """
    Camera pose from 2D-3D correspondences.

    DLT (or a homography for a planar target) initialises a
    Levenberg-Marquardt refinement of the mean squared pixel reprojection
    error. The pose is applied on the left by small rotation-vector /
    translation increments; a step is only accepted when it lowers the cost,
    so the cost history is non-increasing.

    Args:
        correspondences: at least ``params.min_points`` image/world pairs
        k: intrinsics of the image points
        params: solver settings

    Returns:
        PnpResult with the world->camera pose and the mean reprojection error

    Raises:
        InsufficientPointsError: fewer than ``params.min_points`` pairs
        ValidationError: image point outside the image
        NoConvergenceError: iteration cap reached with a large residual
    """
    if len(correspondences) < params.min_points:
        raise InsufficientPointsError(
            f"PnP needs at least {params.min_points} correspondences, got {len(correspondences)}"
        )
    uv = np.array([c.image_point for c in correspondences], dtype=np.float64).reshape(-1, 2)
    world = np.array([c.world_point for c in correspondences], dtype=np.float64).reshape(-1, 3)
    outside = [(u, v) for u, v in uv if not k.contains(u, v)]
    if outside:
        raise ValidationError(f"Image points outside a {k.width}x{k.height} image: {outside[:3]}")

    xn = _normalized_image_points(uv, k)
    spread = np.linalg.svd(world - world.mean(axis=0), compute_uv=False)
    if spread[2] <= params.planarity_ratio * spread[0]:
        pose, init = _homography_pose(xn, world), 'homography'
    else:
        pose, init = _dlt_pose(xn, world), 'dlt'

    n = len(world)
    cam, r = _reprojection(pose, world, uv, k)
    cost = float(r @ r) / n
    history = [cost]
    lam = params.lambda_init
    converged = cost == 0.0
    iterations = 0
    while not converged and iterations < params.max_iterations:
        iterations += 1
        z = cam[:, 2]
        jp = np.zeros((n, 2, 3))
        jp[:, 0, 0] = k.fx / z
        jp[:, 0, 2] = -k.fx * cam[:, 0] / z ** 2
        jp[:, 1, 1] = k.fy / z
        jp[:, 1, 2] = -k.fy * cam[:, 1] / z ** 2
        dp = np.concatenate([-np.stack([skew(p) for p in cam]),
                             np.broadcast_to(np.eye(3), (n, 3, 3))], axis=2)
        jac = np.einsum('nij,njk->nik', jp, dp).reshape(-1, 6)
        hess = jac.T @ jac
        grad = jac.T @ r
        accepted = False
        while lam < 1e16:
            step = np.linalg.solve(hess + lam * np.diag(np.diag(hess) + 1e-12), -grad)
            dr = rotation_from_rotvec(step[:3])
            candidate = Pose(dr @ pose.rotation, dr @ pose.translation + step[3:])
            cam_c, r_c = _reprojection(candidate, world, uv, k)
            cost_c = float(r_c @ r_c) / n
            if cost_c < cost:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            converged = True
            break
        improvement = (cost - cost_c) / cost
        pose, cam, r, cost = candidate, cam_c, r_c, cost_c
        history.append(cost)
        lam = max(lam / 10.0, 1e-12)
        if improvement < params.relative_tolerance or cost == 0.0:
            converged = True

    mean_error = float(np.mean(np.linalg.norm(r.reshape(-1, 2), axis=1)))
    if not converged and mean_error > params.max_mean_error_px:
        raise NoConvergenceError(
            f"PnP did not converge in {params.max_iterations} iterations "
            f"(mean reprojection {mean_error:.3f} px)"
        )
    logger.info("PnP (%s init): %d iterations, mean reprojection %.4f px", init, iterations, mean_error)
    return PnpResult(pose, mean_error, iterations, init, history)


# ==================== TEMPORAL SYNCHRONIZATION ====================

@dataclass(frozen=True)
class TimedPoints:
    """
    Timestamped point sets.

    Attributes:
        timestamps_ms: (N,) strictly increasing times
        points: (N, M, D) positions; D = 3 for motion capture (mm),
            D = 2 for image detections (px)
    """

    timestamps_ms: NDArray[np.float64]
    points: NDArray[np.float64]

    def __post_init__(self):
        t = np.asarray(self.timestamps_ms, dtype=np.float64).reshape(-1)
        p = np.asarray(self.points, dtype=np.float64)
        if p.ndim == 2:
            p = p[:, None, :]
        if p.ndim != 3 or len(p) != len(t):
            raise ValidationError(f"Expected {len(t)} samples of (M, D) points, got shape {p.shape}")
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            raise ValidationError("Timestamps must be strictly increasing")
        object.__setattr__(self, 'timestamps_ms', t)
        object.__setattr__(self, 'points', p)


@dataclass(frozen=True)
class SyncParams:
    """Offset search: grid of ``step_ms`` within +/- ``window_ms``."""

    window_ms: float = 500.0
    step_ms: float = 1.0
    min_detections: int = 3
    flat_tolerance: float = 1e-6


@dataclass
class SyncResult:
    """Estimated clock offset and the reprojection RMS at that offset."""

    delta_t_ms: float
    residual_px: float
    grid_offsets_ms: NDArray[np.float64] = field(repr=False, default=None)
    grid_residuals_px: NDArray[np.float64] = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {'delta_t_ms': self.delta_t_ms, 'residual_px': self.residual_px}


def interpolate_track(track: TimedPoints, times_ms: np.ndarray) -> NDArray[np.float64]:
    """Linear interpolation of every marker at ``times_ms`` (inside the track range)."""
    t = track.timestamps_ms
    idx = np.clip(np.searchsorted(t, times_ms, side='right') - 1, 0, len(t) - 2)
    w = ((times_ms - t[idx]) / (t[idx + 1] - t[idx]))[:, None, None]
    return (1.0 - w) * track.points[idx] + w * track.points[idx + 1]


def reprojection_rms(
    mocap_track: TimedPoints,
    detections: TimedPoints,
    k: Intrinsics,
    extrinsics: Pose,
    offset_ms: float,
    min_detections: int = 3
) -> float:
    """
    RMS pixel distance between detections and mocap markers sampled at
    ``detection_time + offset_ms``; inf when too few detections overlap.
    """
    t = mocap_track.timestamps_ms
    times = detections.timestamps_ms + offset_ms
    inside = (times >= t[0]) & (times <= t[-1])
    if inside.sum() < min_detections:
        return float('inf')
    positions = interpolate_track(mocap_track, times[inside])
    uv, _ = project_points(extrinsics.transform_points(positions.reshape(-1, 3)), k)
    err = uv - detections.points[inside].reshape(-1, 2)
    return float(np.sqrt(np.mean(np.sum(err * err, axis=1))))


def estimate_time_offset(
    mocap_track: TimedPoints,
    detections: TimedPoints,
    k: Intrinsics,
    extrinsics: Pose,
    params: SyncParams = SyncParams()
) -> SyncResult:
    """
    Constant clock offset between motion capture and camera.

    Grid search over the offset, then a parabola through the best grid point
    and its neighbours; the parabolic estimate is kept only when it does not
    increase the residual.

    Args:
        mocap_track: (N, M, 3) marker positions in the tracking frame
        detections: (F, M, 2) detected image points of the same markers
        k: camera intrinsics
        extrinsics: tracking frame -> camera pose
        params: search settings

    Raises:
        NoOverlapError: fewer than ``params.min_detections`` detections stay
            inside the mocap time range across the whole offset window
        FlatObjectiveError: the residual does not depend on the offset
            (static target: the motion must vary in speed)
    """
    if len(mocap_track.timestamps_ms) < 2:
        raise ValidationError("Mocap track needs at least two samples to interpolate")
    if mocap_track.points.shape[1] != detections.points.shape[1]:
        raise ValidationError("Mocap track and detections must list the same markers")

    offsets = np.arange(-params.window_ms, params.window_ms + params.step_ms / 2.0, params.step_ms)
    t = mocap_track.timestamps_ms
    times = detections.timestamps_ms
    common = (times + offsets.min() >= t[0]) & (times + offsets.max() <= t[-1])
    if common.sum() < params.min_detections:
        raise NoOverlapError(
            f"Only {int(common.sum())} detections stay inside the mocap time range at every offset "
            f"within +/-{params.window_ms} ms; need {params.min_detections}"
        )
    # every offset is scored on the same detections
    scored = TimedPoints(times[common], detections.points[common])

    def objective(offset: float) -> float:
        return reprojection_rms(mocap_track, scored, k, extrinsics, offset, params.min_detections)

    residuals = np.array([objective(o) for o in offsets])
    finite = np.isfinite(residuals)
    if not finite.any():
        raise NoOverlapError("Mocap and detection time ranges do not overlap for any offset")

    best = int(np.nanargmin(np.where(finite, residuals, np.nan)))
    lowest = residuals[best]
    spread = residuals[finite].max() - lowest
    if spread <= params.flat_tolerance * max(1.0, lowest):
        raise FlatObjectiveError(
            "Reprojection error does not depend on the time offset; move the target with varying speed"
        )

    delta, residual = float(offsets[best]), float(lowest)
    if 0 < best < len(offsets) - 1 and finite[best - 1] and finite[best + 1]:
        left, right = residuals[best - 1], residuals[best + 1]
        curvature = left - 2.0 * lowest + right
        if curvature > 0:
            refined = delta + 0.5 * (left - right) / curvature * params.step_ms
            refined_residual = objective(refined)
            if refined_residual <= residual:
                delta, residual = float(refined), float(refined_residual)
    logger.info("Time offset %.3f ms (reprojection RMS %.4f px)", delta, residual)
    return SyncResult(delta, residual, offsets, residuals)


# ==================== DEPTH CORRECTION ====================

@dataclass(frozen=True)
class DepthCorrection:
    """
    Per-pixel affine depth correction ``scale * d + offset_mm``.

    Either term may be a scalar or an (H, W) array. Invalid pixels (0) stay
    invalid.
    """

    scale: Union[float, np.ndarray] = 1.0
    offset_mm: Union[float, np.ndarray] = 0.0

    def apply(self, depth: np.ndarray) -> NDArray[np.float32]:
        d = np.asarray(depth, dtype=np.float64)
        corrected = np.where(d > 0, d * self.scale + self.offset_mm, 0.0)
        return np.clip(corrected, 0.0, None).astype(np.float32)
