"""
6-DOF Evaluation Exceptions

Custom exception classes for calibration, rendering, tracking and evaluation
error handling.
"""


class SixDofError(Exception):
    """Base exception for all sixdof_eval errors"""
    pass


class ValidationError(SixDofError):
    """Raised when input validation fails (bad shapes, ranges, names)"""
    pass


class DegenerateInputError(SixDofError):
    """Raised when points do not constrain the fit (e.g. coplanar probe sweep)"""
    pass


class InsufficientPointsError(SixDofError):
    """Raised when fewer correspondences are given than the solver needs"""
    pass


class NoConvergenceError(SixDofError):
    """Raised when an iterative solver hits its cap with a large residual"""
    pass


class NoOverlapError(SixDofError):
    """Raised when two time ranges do not intersect for any tested offset"""
    pass


class FlatObjectiveError(SixDofError):
    """Raised when the synchronization objective has no unique minimum"""
    pass


class BehindCameraError(SixDofError):
    """Raised when projecting a point with non-positive depth"""
    pass


class MarkerOutOfFrameError(SixDofError):
    """Raised when a marker reprojects outside the image"""
    pass


class PoseMeshMismatchError(SixDofError):
    """Raised when the rendered object barely overlaps the observed depth"""
    pass


class EmptyMeshError(SixDofError):
    """Raised when a mesh has no triangles"""
    pass


class ParseError(SixDofError):
    """Raised when a mesh, CSV or JSON file cannot be parsed"""
    pass


class MissingFrameError(SixDofError):
    """Raised when a sequence directory lacks frames or metadata"""
    pass


class PoseCountMismatchError(SixDofError):
    """Raised when the number of poses does not match the number of frames"""
    pass


class SequenceTooShortError(SixDofError):
    """Raised when a sequence has fewer frames than a protocol needs"""
    pass


class LowOverlapError(SixDofError):
    """Raised by strict trackers when too few model points find a match"""
    pass
