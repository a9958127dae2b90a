"""
6-DOF Object Tracking Evaluation

Pose metrics, ground-truth calibration, marker repair, training-pair
sampling, a baseline ICP tracker, synthetic sequences and the three
evaluation protocols (stability, occlusion, interaction).

Usage:
    from sixdof_eval import Mesh, Intrinsics, TrajectorySpec, generate_sequence
    from sixdof_eval import make_tracker, evaluate_sequence, aggregate

    mesh = Mesh.box(100, 60, 40)
    k = Intrinsics(525, 525, 320, 240, 640, 480)
    seq = generate_sequence(mesh, TrajectorySpec('turntable', 60, deg_per_frame=1.0), None, 0.0, k)

    report = evaluate_sequence(seq, make_tracker('icp'), mesh)
    print(aggregate([report]).to_text())
"""

__version__ = '1.0.0'

from .calibration import (
    Correspondence2D3D,
    DepthCorrection,
    PnpParams,
    PnpResult,
    RigTransforms,
    SphereFit,
    SyncParams,
    SyncResult,
    TimedPoints,
    chain_object_pose,
    estimate_time_offset,
    fit_sphere,
    objm_to_kntm,
    refine_object_calibration,
    solve_pnp
)
from .camera import Intrinsics, back_project_points, depth_to_points, project_points
from .config import Settings
from .dataset_io import (
    DatasetManifest,
    Sequence,
    load_manifest,
    load_mesh,
    load_sequence,
    save_manifest,
    save_mesh_ply,
    save_sequence,
    validate_manifest
)
from .exceptions import (
    BehindCameraError,
    DegenerateInputError,
    EmptyMeshError,
    FlatObjectiveError,
    InsufficientPointsError,
    LowOverlapError,
    MarkerOutOfFrameError,
    MissingFrameError,
    NoConvergenceError,
    NoOverlapError,
    ParseError,
    PoseCountMismatchError,
    PoseMeshMismatchError,
    SequenceTooShortError,
    SixDofError,
    ValidationError
)
from .harness import (
    COMPARISON_BINS,
    SPEED_BINS,
    EvalConfig,
    EvalReport,
    FailureDetector,
    ScenarioKind,
    Summary,
    aggregate,
    count_failures,
    eval_interaction,
    eval_occlusion,
    eval_stability,
    evaluate_sequence
)
from .marker_repair import MarkerSet, RepairParams, RepairReport, repair_frame, repair_sequence
from .render import Mesh, back_project, project, render_depth, render_mask
from .sampler import PerturbationConfig, PosePair, apply_label, generate_pairs, pose_label, sample_direction
from .se3 import EulerAngles, Pose, compose, delta_R, delta_t, euler_to_rotation, invert, rotation_to_euler
from .synth_gen import (
    OccluderSpec,
    TrajectorySpec,
    generate_sequence,
    generate_suite,
    measure_occlusion,
    write_suite
)
from .tracking import (
    EchoTracker,
    Frame,
    FrozenTracker,
    IcpParams,
    IcpTracker,
    Observation,
    PlaybackTracker,
    Tracker,
    make_tracker,
    refine_pose
)

__all__ = [
    # Geometry
    'Pose',
    'EulerAngles',
    'compose',
    'invert',
    'delta_t',
    'delta_R',
    'euler_to_rotation',
    'rotation_to_euler',
    'Intrinsics',
    'project_points',
    'back_project_points',
    'depth_to_points',
    'Mesh',
    'project',
    'back_project',
    'render_depth',
    'render_mask',
    # Calibration
    'RigTransforms',
    'objm_to_kntm',
    'chain_object_pose',
    'refine_object_calibration',
    'SphereFit',
    'fit_sphere',
    'Correspondence2D3D',
    'PnpParams',
    'PnpResult',
    'solve_pnp',
    'TimedPoints',
    'SyncParams',
    'SyncResult',
    'estimate_time_offset',
    'DepthCorrection',
    # Data
    'MarkerSet',
    'RepairParams',
    'RepairReport',
    'repair_frame',
    'repair_sequence',
    'PerturbationConfig',
    'PosePair',
    'sample_direction',
    'generate_pairs',
    'pose_label',
    'apply_label',
    'Sequence',
    'DatasetManifest',
    'load_sequence',
    'save_sequence',
    'load_mesh',
    'save_mesh_ply',
    'load_manifest',
    'save_manifest',
    'validate_manifest',
    'TrajectorySpec',
    'OccluderSpec',
    'generate_sequence',
    'generate_suite',
    'write_suite',
    'measure_occlusion',
    # Tracking and evaluation
    'Frame',
    'Observation',
    'Tracker',
    'IcpParams',
    'IcpTracker',
    'EchoTracker',
    'FrozenTracker',
    'PlaybackTracker',
    'make_tracker',
    'refine_pose',
    'ScenarioKind',
    'EvalConfig',
    'EvalReport',
    'FailureDetector',
    'count_failures',
    'eval_stability',
    'eval_occlusion',
    'eval_interaction',
    'evaluate_sequence',
    'aggregate',
    'Summary',
    'SPEED_BINS',
    'COMPARISON_BINS',
    'Settings',
    # Exceptions
    'SixDofError',
    'ValidationError',
    'DegenerateInputError',
    'InsufficientPointsError',
    'NoConvergenceError',
    'NoOverlapError',
    'FlatObjectiveError',
    'BehindCameraError',
    'MarkerOutOfFrameError',
    'PoseMeshMismatchError',
    'EmptyMeshError',
    'ParseError',
    'MissingFrameError',
    'PoseCountMismatchError',
    'SequenceTooShortError',
    'LowOverlapError',
]
