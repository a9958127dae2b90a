"""
Removal of retroreflective marker artifacts from depth frames.

Motion-capture markers glued on the object corrupt the time-of-flight
depth around them. Given the ground-truth pose, each marker is reprojected;
if the depth observed around it agrees with the marker depth the marker is
visible, and the object pixels of a 10x10 window around it are replaced with
the rendered depth plus a little Gaussian noise. Background pixels and
pixels outside every window are left untouched.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray

from .camera import Intrinsics, project_points
from .exceptions import MarkerOutOfFrameError, PoseMeshMismatchError, ValidationError
from .render import Mesh, render_depth
from .se3 import Pose

logger = logging.getLogger(__name__)

MARKER_DIAMETER_MM = 3.0


@dataclass(frozen=True, eq=False)
class MarkerSet:
    """Marker centres in the object frame (mm) and their diameter."""

    positions: NDArray[np.float64]
    diameter: float = MARKER_DIAMETER_MM

    def __post_init__(self):
        pts = np.array(self.positions, dtype=np.float64).reshape(-1, 3)
        if len(pts) == 0:
            raise ValidationError("A marker set needs at least one marker")
        if not self.diameter > 0:
            raise ValidationError(f"Marker diameter must be positive, got {self.diameter}")
        pts.flags.writeable = False
        object.__setattr__(self, 'positions', pts)

    def __len__(self) -> int:
        return len(self.positions)

    def to_dict(self) -> Dict[str, Any]:
        return {'positions': self.positions.tolist(), 'diameter': float(self.diameter)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'MarkerSet':
        try:
            return cls(np.asarray(data['positions'], dtype=np.float64),
                       float(data.get('diameter', MARKER_DIAMETER_MM)))
        except (KeyError, TypeError, ValueError) as e:
            raise ValidationError(f"Invalid marker set record: {e}")


@dataclass(frozen=True)
class RepairParams:
    """Window size and visibility rule of the repair."""

    window_px: int = 10
    visibility_mm: float = 10.0
    max_invalid_fraction: float = 0.5
    noise_sigma_mm: float = 2.0
    min_mask_overlap: float = 0.1

    def __post_init__(self):
        if self.window_px <= 0:
            raise ValidationError(f"window_px must be positive, got {self.window_px}")
        if self.noise_sigma_mm < 0:
            raise ValidationError(f"noise_sigma_mm must be >= 0, got {self.noise_sigma_mm}")


@dataclass
class RepairReport:
    """Counts and error figures of one (or several merged) repairs."""

    markers_total: int = 0
    markers_visible: int = 0
    markers_patched: int = 0
    pixels_patched: int = 0
    object_pixels: int = 0
    rmse_before: Optional[float] = None
    rmse_after: Optional[float] = None

    @property
    def fraction_object_pixels_patched(self) -> float:
        return self.pixels_patched / self.object_pixels if self.object_pixels else 0.0

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['fraction_object_pixels_patched'] = self.fraction_object_pixels_patched
        return data


def marker_window(u: float, v: float, k: Intrinsics, size: int = 10) -> Tuple[int, int, int, int]:
    """
    ``size`` x ``size`` window around the pixel holding (u, v), clipped to the image.

    Returns:
        (row0, row1, col0, col1), half-open

    Raises:
        MarkerOutOfFrameError: (u, v) is not inside the image
    """
    if not (np.isfinite(u) and np.isfinite(v) and k.contains(u, v)):
        raise MarkerOutOfFrameError(f"Marker reprojects to ({u:.1f}, {v:.1f}), outside the image")
    col, row = int(np.floor(u)), int(np.floor(v))
    half = size // 2
    return (max(row - half, 0), min(row - half + size, k.height),
            max(col - half, 0), min(col - half + size, k.width))


def repair_frame(
    depth: np.ndarray,
    pose: Pose,
    mesh: Mesh,
    markers: MarkerSet,
    k: Intrinsics,
    noise_sigma: Optional[float] = None,
    seed: Optional[int] = 0,
    reference: Optional[np.ndarray] = None,
    params: RepairParams = RepairParams()
) -> Tuple[NDArray[np.float32], RepairReport]:
    """
    Patch the depth around every visible marker.

    Args:
        depth: observed (H, W) depth in mm, 0 = no return
        pose: ground-truth object-to-camera pose of this frame
        mesh: object mesh
        markers: marker set in the object frame
        k: camera intrinsics
        noise_sigma: std of the added noise in mm (default ``params.noise_sigma_mm``)
        seed: seed of the noise generator
        reference: optional clean depth; enables rmse_before / rmse_after
        params: window and visibility rule

    Returns:
        (repaired depth, report)

    Raises:
        PoseMeshMismatchError: the rendered object barely overlaps valid
            observed depth, so ``pose`` cannot belong to this frame
    """
    observed = np.asarray(depth, dtype=np.float32)
    if observed.shape != k.shape:
        raise ValidationError(f"Depth image {observed.shape} does not match intrinsics {k.shape}")
    sigma = params.noise_sigma_mm if noise_sigma is None else float(noise_sigma)
    if sigma < 0:
        raise ValidationError(f"noise_sigma must be >= 0, got {sigma}")

    rendered = render_depth(mesh, pose, k)
    mask = rendered > 0
    object_pixels = int(mask.sum())
    overlap = (mask & (observed > 0)).sum() / object_pixels if object_pixels else 0.0
    if overlap < params.min_mask_overlap:
        raise PoseMeshMismatchError(
            f"Only {overlap:.1%} of the rendered object overlaps valid depth; "
            "the pose does not match this frame"
        )

    rng = np.random.default_rng(seed)
    repaired = observed.copy()
    patched = np.zeros(k.shape, dtype=bool)
    report = RepairReport(markers_total=len(markers), object_pixels=object_pixels)

    cam = pose.transform_points(markers.positions)
    uv, z = project_points(cam, k)
    for (u, v), marker_z in zip(uv, z):
        if marker_z <= 0:
            logger.debug("Marker behind the camera, skipped")
            continue
        try:
            r0, r1, c0, c1 = marker_window(u, v, k, params.window_px)
        except MarkerOutOfFrameError as e:
            logger.debug("%s; skipped", e)
            continue
        window = observed[r0:r1, c0:c1]
        valid = window[window > 0]
        if valid.size == 0 or 1.0 - valid.size / window.size > params.max_invalid_fraction:
            continue
        if abs(float(np.median(valid)) - marker_z) >= params.visibility_mm:
            continue
        report.markers_visible += 1

        target = mask[r0:r1, c0:c1]
        if not target.any():
            continue
        noise = rng.normal(0.0, sigma, size=int(target.sum())) if sigma > 0 else 0.0
        block = repaired[r0:r1, c0:c1]
        block[target] = np.clip(rendered[r0:r1, c0:c1][target] + noise, 0.0, None)
        patched[r0:r1, c0:c1] |= target
        report.markers_patched += 1

    report.pixels_patched = int(patched.sum())
    if reference is not None and report.pixels_patched:
        ref = np.asarray(reference, dtype=np.float64)[patched]
        report.rmse_before = float(np.sqrt(np.mean((observed[patched] - ref) ** 2)))
        report.rmse_after = float(np.sqrt(np.mean((repaired[patched] - ref) ** 2)))
    logger.debug("Repaired %d/%d markers, %d pixels", report.markers_patched, report.markers_total,
                 report.pixels_patched)
    return repaired, report


def merge_reports(reports: Iterable[RepairReport]) -> RepairReport:
    """Sum the counts of several frame reports; RMSEs are pooled over patched pixels."""
    merged = RepairReport()
    sq_before = sq_after = 0.0
    n_ref = 0
    for r in reports:
        merged.markers_total += r.markers_total
        merged.markers_visible += r.markers_visible
        merged.markers_patched += r.markers_patched
        merged.pixels_patched += r.pixels_patched
        merged.object_pixels += r.object_pixels
        if r.rmse_before is not None:
            sq_before += r.rmse_before ** 2 * r.pixels_patched
            sq_after += r.rmse_after ** 2 * r.pixels_patched
            n_ref += r.pixels_patched
    if n_ref:
        merged.rmse_before = float(np.sqrt(sq_before / n_ref))
        merged.rmse_after = float(np.sqrt(sq_after / n_ref))
    return merged


def frame_seed(seed: int, index: int) -> int:
    """Independent per-frame seed derived from (seed, frame index)."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def repair_sequence(
    depths: Sequence[np.ndarray],
    poses: Sequence[Pose],
    mesh: Mesh,
    markers: MarkerSet,
    k: Intrinsics,
    noise_sigma: Optional[float] = None,
    seed: int = 0,
    references: Optional[Sequence[np.ndarray]] = None,
    params: RepairParams = RepairParams(),
    jobs: int = 1
) -> Tuple[List[NDArray[np.float32]], RepairReport]:
    """
    Repair every frame of a sequence.

    Frame ``i`` uses the seed ``frame_seed(seed, i)``, so the output does not
    depend on ``jobs``.

    Returns:
        (repaired depths, merged report)
    """
    if len(depths) != len(poses):
        raise ValidationError(f"{len(depths)} depth frames but {len(poses)} poses")
    if references is not None and len(references) != len(depths):
        raise ValidationError(f"{len(depths)} depth frames but {len(references)} reference frames")

    def repair(i: int) -> Tuple[NDArray[np.float32], RepairReport]:
        ref = references[i] if references is not None else None
        return repair_frame(depths[i], poses[i], mesh, markers, k, noise_sigma, frame_seed(seed, i), ref, params)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(repair, range(len(depths))))
    else:
        results = [repair(i) for i in range(len(depths))]
    repaired = [out for out, _ in results]
    merged = merge_reports(report for _, report in results)
    logger.info("Repaired %d frames: %d/%d markers patched, %.2f%% of object pixels",
                len(depths), merged.markers_patched, merged.markers_total,
                100.0 * merged.fraction_object_pixels_patched)
    return repaired, merged
