"""
Synthetic sequences with exact ground truth.

Depth frames are rendered from a mesh along a trajectory, optionally behind
a flat occluding panel, with additive Gaussian depth noise. Three trajectory
kinds cover the evaluation scenarios:

- ``static``: the object does not move (stability).
- ``turntable``: rotation about the camera's vertical axis by a fixed angle
  per frame (occlusion).
- ``smooth_random``: Ornstein-Uhlenbeck velocity with a restoring force,
  speeds clipped to [0.9, 1] x the requested per-frame speed (interaction).

The occluder is a fronto-parallel panel 50 mm in front of the object's
nearest point; it covers ``fraction`` of the object's projected extent,
from the bottom (horizontal panel) or from the left (vertical panel).
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from .camera import Intrinsics
from .dataset_io import (
    DatasetManifest,
    ObjectEntry,
    Sequence,
    SequenceEntry,
    save_manifest,
    save_mesh_ply,
    save_sequence,
    write_json
)
from .exceptions import ValidationError
from .harness import OCCLUSION_PERCENTS, ScenarioKind
from .render import Mesh, render_depth
from .se3 import Pose, euler_to_rotation, rot_y, rotation_from_rotvec
from .tracking import Frame

logger = logging.getLogger(__name__)

FRAME_PERIOD_MS = 1000.0 / 30.0
OCCLUDER_GAP_MM = 50.0
OCCLUSION_TOLERANCE_MM = 20.0
KINDS = ('static', 'turntable', 'smooth_random')
ORIENTATIONS = ('horizontal', 'vertical')
OCCLUDER_FRACTIONS = tuple(p / 100.0 for p in OCCLUSION_PERCENTS)


@dataclass(frozen=True)
class TrajectorySpec:
    """
    Object motion in front of the camera.

    Attributes:
        kind: static, turntable or smooth_random
        length: number of frames (>= 2)
        camera_distance_mm: distance of the object centre at frame 0
        deg_per_frame: turntable rotation step
        speed_t_mm_per_frame: smooth_random translation speed
        speed_r_deg_per_frame: smooth_random rotation speed
        seed: smooth_random motion seed
        view_euler_deg: object orientation at frame 0 (intrinsic XYZ)
    """

    kind: str = 'static'
    length: int = 30
    camera_distance_mm: float = 1000.0
    deg_per_frame: float = 0.0
    speed_t_mm_per_frame: float = 0.0
    speed_r_deg_per_frame: float = 0.0
    seed: int = 0
    view_euler_deg: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"Unknown trajectory kind '{self.kind}'. Expected one of {KINDS}")
        if self.length < 2:
            raise ValidationError(f"A trajectory needs at least 2 frames, got {self.length}")
        if min(self.deg_per_frame, self.speed_t_mm_per_frame, self.speed_r_deg_per_frame) < 0:
            raise ValidationError("Trajectory speeds must be >= 0")
        if self.camera_distance_mm <= 0:
            raise ValidationError(f"camera_distance_mm must be positive, got {self.camera_distance_mm}")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['view_euler_deg'] = list(self.view_euler_deg)
        return data


@dataclass(frozen=True)
class OccluderSpec:
    """Fraction of the projected extent hidden and the orientation of the panel edge."""

    fraction: float
    orientation: str = 'horizontal'

    def __post_init__(self):
        if not any(abs(self.fraction - f) < 1e-9 for f in OCCLUDER_FRACTIONS):
            raise ValidationError(f"Occluder fraction must be one of {OCCLUDER_FRACTIONS}, got {self.fraction}")
        if self.orientation not in ORIENTATIONS:
            raise ValidationError(f"Occluder orientation must be one of {ORIENTATIONS}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


# ==================== TRAJECTORIES ====================

def trajectory_poses(mesh: Mesh, spec: TrajectorySpec) -> List[Pose]:
    """Ground-truth poses; the mesh centroid sits on the optical axis at frame 0."""
    centroid = mesh.centroid()
    r0 = euler_to_rotation(spec.view_euler_deg)
    anchor = np.array([0.0, 0.0, spec.camera_distance_mm])

    def place(rotation: np.ndarray, center: np.ndarray) -> Pose:
        return Pose(rotation, center - rotation @ centroid)

    if spec.kind == 'static':
        pose = place(r0, anchor)
        return [pose] * spec.length
    if spec.kind == 'turntable':
        return [place(rot_y(i * spec.deg_per_frame) @ r0, anchor) for i in range(spec.length)]

    rng = np.random.default_rng(spec.seed)
    poses = [place(r0, anchor)]
    center, rotation = anchor.copy(), r0
    v = _clip_speed(rng.normal(size=3), spec.speed_t_mm_per_frame, rng)
    w = _clip_speed(rng.normal(size=3), spec.speed_r_deg_per_frame, rng)
    for _ in range(spec.length - 1):
        center = center + v
        rotation = rotation_from_rotvec(np.radians(w)) @ rotation
        poses.append(place(rotation, center))
        # OU step pulled back towards the start position
        v = 0.9 * v + 0.3 * spec.speed_t_mm_per_frame * rng.normal(size=3) - 0.02 * (center - anchor)
        w = 0.9 * w + 0.3 * spec.speed_r_deg_per_frame * rng.normal(size=3)
        v = _clip_speed(v, spec.speed_t_mm_per_frame, rng)
        w = _clip_speed(w, spec.speed_r_deg_per_frame, rng)
    return poses


def _clip_speed(vec: np.ndarray, speed: float, rng: np.random.Generator) -> NDArray[np.float64]:
    """Rescale ``vec`` so that its norm lies in [0.9 * speed, speed]."""
    if speed == 0:
        return np.zeros(3)
    norm = np.linalg.norm(vec)
    if norm == 0:
        vec = rng.normal(size=3)
        norm = np.linalg.norm(vec)
    return vec / norm * float(np.clip(norm, 0.9 * speed, speed))


# ==================== OCCLUSION ====================

def occluder_region(mesh: Mesh, pose: Pose, occluder: OccluderSpec, k: Intrinsics
                    ) -> Tuple[NDArray[np.bool_], float]:
    """
    Pixels hidden by the panel, and the panel depth.

    The hidden part of the projected extent is measured on normalized image
    coordinates (x/z for a vertical panel, y/z for a horizontal one).
    """
    cam = pose.transform_points(mesh.vertices)
    z_panel = float(cam[:, 2].min()) - OCCLUDER_GAP_MM
    mask = np.zeros(k.shape, dtype=bool)
    if occluder.fraction == 0 or z_panel <= 0:
        return mask, z_panel
    rows = np.arange(k.height) + 0.5
    cols = np.arange(k.width) + 0.5
    if occluder.orientation == 'horizontal':
        ny = cam[:, 1] / cam[:, 2]
        lo, hi = ny.min(), ny.max()
        edge = hi - occluder.fraction * (hi - lo)
        mask[(rows - k.cy) / k.fy >= edge, :] = True
    else:
        nx = cam[:, 0] / cam[:, 2]
        lo, hi = nx.min(), nx.max()
        edge = lo + occluder.fraction * (hi - lo)
        mask[:, (cols - k.cx) / k.fx <= edge] = True
    return mask, z_panel


def measure_occlusion(frame, mesh: Mesh, pose: Pose, k: Intrinsics,
                      tolerance_mm: float = OCCLUSION_TOLERANCE_MM) -> float:
    """
    Fraction of the unoccluded object silhouette not seen in ``frame``
    (a Frame or a depth image).

    A silhouette pixel counts as occluded when its observed depth is missing
    or differs from the rendered depth by more than ``tolerance_mm``.
    """
    rendered = render_depth(mesh, pose, k)
    mask = rendered > 0
    if not mask.any():
        return 0.0
    observed = np.asarray(getattr(frame, 'depth', frame), dtype=np.float64)[mask]
    hidden = (observed <= 0) | (np.abs(observed - rendered[mask]) > tolerance_mm)
    return float(hidden.mean())


# ==================== SEQUENCES ====================

def frame_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def render_frame(mesh: Mesh, pose: Pose, k: Intrinsics, occluder: Optional[OccluderSpec] = None,
                 noise_sigma_mm: float = 0.0, rng: Optional[np.random.Generator] = None,
                 quantize: bool = True) -> NDArray[np.float32]:
    """One observed depth frame: render, occlude, add noise, round to whole mm."""
    depth = render_depth(mesh, pose, k).astype(np.float64)
    if occluder is not None and occluder.fraction > 0:
        region, z_panel = occluder_region(mesh, pose, occluder, k)
        depth[region] = z_panel
    if noise_sigma_mm > 0:
        valid = depth > 0
        depth[valid] += (rng or np.random.default_rng()).normal(0.0, noise_sigma_mm, int(valid.sum()))
        depth[valid] = np.maximum(depth[valid], 1.0)
    if quantize:
        depth = np.round(depth)
    return depth.astype(np.float32)


def generate_sequence(
    mesh: Mesh,
    spec: TrajectorySpec,
    occluder: Optional[OccluderSpec],
    noise_sigma_mm: float,
    k: Intrinsics,
    seed: int = 0,
    scenario: Optional[ScenarioKind] = None,
    object_id: str = 'object',
    sequence_id: str = '',
    jobs: int = 1,
    quantize: bool = True
) -> Sequence:
    """
    Render a sequence along ``spec``.

    Frame ``i`` draws its noise from ``SeedSequence([seed, i])``, so the
    output does not depend on ``jobs``.

    Args:
        mesh: object mesh (mm)
        spec: trajectory
        occluder: optional panel
        noise_sigma_mm: std of the additive depth noise
        k: camera intrinsics
        seed: noise seed
        scenario: annotation (derived from spec/occluder when omitted)
        object_id: object name stored with the sequence
        sequence_id: identifier stored with the sequence
        jobs: frames rendered concurrently
        quantize: round depth to whole millimetres like a 16-bit sensor
    """
    if noise_sigma_mm < 0:
        raise ValidationError(f"noise_sigma_mm must be >= 0, got {noise_sigma_mm}")
    mesh.validate()
    poses = trajectory_poses(mesh, spec)
    if scenario is None:
        scenario = _default_scenario(spec, occluder)

    def make(i: int) -> Frame:
        depth = render_frame(mesh, poses[i], k, occluder, noise_sigma_mm, frame_rng(seed, i), quantize)
        return Frame(depth, k, i * FRAME_PERIOD_MS, poses[i], i)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            frames = list(pool.map(make, range(spec.length)))
    else:
        frames = [make(i) for i in range(spec.length)]
    logger.debug("Generated %s sequence '%s' (%d frames)", scenario.label, sequence_id, spec.length)
    return Sequence(tuple(frames), scenario, object_id, k, None, sequence_id)


def _default_scenario(spec: TrajectorySpec, occluder: Optional[OccluderSpec]) -> ScenarioKind:
    if spec.kind == 'turntable':
        fraction = occluder.fraction if occluder is not None else 0.0
        return ScenarioKind.occlusion(int(round(fraction * 100)),
                                      occluder.orientation if occluder is not None else 'horizontal')
    if spec.kind == 'static':
        return ScenarioKind.stability('occluded' if occluder is not None else 'near')
    return ScenarioKind.interaction('free_slow')


# ==================== SUITE ====================

VIEWPOINTS = ((0.0, 0.0, 0.0), (30.0, 45.0, 0.0), (-20.0, 135.0, 10.0), (45.0, -60.0, 0.0))
NEAR_MM, FAR_MM, TURNTABLE_MM, INTERACTION_MM = 800.0, 1500.0, 1200.0, 1000.0
INTERACTION_SPEEDS = {
    'translation_only': (10.0, 0.0),
    'rotation_only': (0.0, 4.0),
    'free_slow': (8.0, 3.0),
    'free_hard': (25.0, 10.0)
}


@dataclass
class SuiteItem:
    """One planned sequence of a suite."""

    name: str
    scenario: ScenarioKind
    spec: TrajectorySpec
    occluder: Optional[OccluderSpec] = None
    noise_sigma_mm: float = 2.0
    seed: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            'name': self.name,
            'scenario': self.scenario.to_dict(),
            'trajectory': self.spec.to_dict(),
            'occluder': self.occluder.to_dict() if self.occluder is not None else None,
            'noise_sigma_mm': self.noise_sigma_mm,
            'seed': self.seed
        }


def suite_plan(seed: int = 0, noise_sigma_mm: float = 2.0, stability_length: int = 30,
               occlusion_length: int = 90, interaction_length: int = 60) -> List[SuiteItem]:
    """
    The 27 sequences of one object: 12 stability, 11 occlusion, 4 interaction.

    Sequence ``j`` of the plan is seeded with ``seed * 1000 + j``.
    """
    items: List[SuiteItem] = []

    def add(name, scenario, spec, occluder=None):
        j = len(items)
        items.append(SuiteItem(name, scenario, spec, occluder, noise_sigma_mm, seed * 1000 + j))

    for v, view in enumerate(VIEWPOINTS):
        add(f'stability_near_{v}', ScenarioKind.stability('near'),
            TrajectorySpec('static', stability_length, NEAR_MM, view_euler_deg=view))
        add(f'stability_far_{v}', ScenarioKind.stability('far'),
            TrajectorySpec('static', stability_length, FAR_MM, view_euler_deg=view))
        add(f'stability_occluded_{v}', ScenarioKind.stability('occluded'),
            TrajectorySpec('static', stability_length, NEAR_MM, view_euler_deg=view),
            OccluderSpec(0.30, 'vertical'))

    turntable = TrajectorySpec('turntable', occlusion_length, TURNTABLE_MM, deg_per_frame=2.0,
                               view_euler_deg=(-10.0, 0.0, 0.0))
    add('occlusion_0', ScenarioKind.occlusion(0), turntable)
    for percent in OCCLUSION_PERCENTS[1:]:
        for orientation in ORIENTATIONS:
            add(f'occlusion_{percent}_{orientation}', ScenarioKind.occlusion(percent, orientation),
                turntable, OccluderSpec(percent / 100.0, orientation))

    for variant, (speed_t, speed_r) in INTERACTION_SPEEDS.items():
        add(f'interaction_{variant}', ScenarioKind.interaction(variant),
            TrajectorySpec('smooth_random', interaction_length, INTERACTION_MM,
                           speed_t_mm_per_frame=speed_t, speed_r_deg_per_frame=speed_r,
                           seed=seed * 1000 + len(items), view_euler_deg=(20.0, 30.0, 0.0)))
    return items


def generate_suite(mesh: Mesh, object_id: str, k: Intrinsics, seed: int = 0,
                   jobs: int = 1, **plan_kwargs) -> Iterator[Tuple[SuiteItem, Sequence]]:
    """Lazily generate every sequence of ``suite_plan`` for one object."""
    for item in suite_plan(seed, **plan_kwargs):
        seq = generate_sequence(mesh, item.spec, item.occluder, item.noise_sigma_mm, k, item.seed,
                                item.scenario, object_id, f'{object_id}/{item.name}', jobs)
        yield item, seq


def write_suite(mesh: Mesh, object_id: str, k: Intrinsics, out_dir: Path, seed: int = 0,
                jobs: int = 1, manifest: Optional[DatasetManifest] = None,
                **plan_kwargs) -> DatasetManifest:
    """
    Write the full suite of one object under ``out_dir`` and add it to a manifest.

    Layout: ``<out_dir>/meshes/<object>.ply``, ``<out_dir>/<object>/<name>/``
    (each with a ``spec.json`` of its generator parameters) and
    ``<out_dir>/manifest.json``.
    """
    out_dir = Path(out_dir)
    manifest = manifest or DatasetManifest(root=out_dir)
    manifest.root = out_dir
    mesh_rel = f'meshes/{object_id}.ply'
    save_mesh_ply(mesh, out_dir / mesh_rel)
    manifest.objects.append(ObjectEntry(object_id, mesh_rel, mesh.max_dimension()))
    for item, seq in generate_suite(mesh, object_id, k, seed, jobs, **plan_kwargs):
        rel = f'{object_id}/{item.name}'
        save_sequence(seq, out_dir / rel)
        write_json(out_dir / rel / 'spec.json', item.to_dict())
        manifest.sequences.append(SequenceEntry(rel, item.scenario, object_id))
    save_manifest(manifest)
    logger.info("Wrote %d sequences of '%s' to %s", len(manifest.sequences), object_id, out_dir)
    return manifest
