"""
Pinhole camera model shared by calibration, rendering and tracking.

Image coordinates: ``u`` grows to the right, ``v`` grows downwards, and the
pixel with column ``c`` and row ``r`` covers ``[c, c+1) x [r, r+1)`` with its
centre at ``(c + 0.5, r + 0.5)``. No lens distortion is modelled.
"""

from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from .exceptions import ValidationError

PIXEL_CENTER = 0.5


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics: focal lengths and principal point in px, size in px."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError(f"Focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise ValidationError(f"Image size must be positive, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValidationError(
                f"Principal point ({self.cx}, {self.cy}) outside a "
                f"{self.width}x{self.height} image"
            )

    def matrix(self) -> NDArray[np.float64]:
        """3x3 calibration matrix K."""
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    def scaled(self, factor: float) -> 'Intrinsics':
        """Same camera sampled at ``factor`` times the resolution."""
        return Intrinsics(self.fx * factor, self.fy * factor, self.cx * factor, self.cy * factor,
                          int(round(self.width * factor)), int(round(self.height * factor)))

    @property
    def shape(self) -> Tuple[int, int]:
        """(height, width), the numpy shape of an image."""
        return (self.height, self.width)

    def contains(self, u: float, v: float) -> bool:
        return 0.0 <= u < self.width and 0.0 <= v < self.height

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Intrinsics':
        try:
            return cls(float(data['fx']), float(data['fy']), float(data['cx']), float(data['cy']),
                       int(data['width']), int(data['height']))
        except (KeyError, TypeError, ValueError) as e:
            raise ValidationError(f"Invalid intrinsics record {data}: {e}")


def project_points(points: np.ndarray, k: Intrinsics) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
    """
    Project camera-frame points; no depth check.

    Returns:
        (uv, z): (N, 2) pixel coordinates and (N,) depths in mm
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    z = pts[:, 2]
    with np.errstate(divide='ignore', invalid='ignore'):
        u = k.fx * pts[:, 0] / z + k.cx
        v = k.fy * pts[:, 1] / z + k.cy
    return np.stack([u, v], axis=1), z


def back_project_points(uv: np.ndarray, z: np.ndarray, k: Intrinsics) -> NDArray[np.float64]:
    """Camera-frame points from pixel coordinates and depths."""
    uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    x = (uv[:, 0] - k.cx) * z / k.fx
    y = (uv[:, 1] - k.cy) * z / k.fy
    return np.stack([x, y, z], axis=1)


def depth_to_points(depth: np.ndarray, k: Intrinsics,
                    window: Optional[Tuple[int, int, int, int]] = None
                    ) -> Tuple[NDArray[np.float64], NDArray[np.int64]]:
    """
    Back-project the valid (non-zero) pixels of a depth image.

    Args:
        depth: (H, W) depth in mm, 0 = no return
        k: camera intrinsics
        window: optional (row0, row1, col0, col1) sub-rectangle

    Returns:
        (points, pixels): (N, 3) camera-frame points and (N, 2) (row, col)
    """
    r0, r1, c0, c1 = window if window is not None else (0, depth.shape[0], 0, depth.shape[1])
    sub = np.asarray(depth[r0:r1, c0:c1], dtype=np.float64)
    rows, cols = np.nonzero(sub > 0)
    z = sub[rows, cols]
    rows = rows + r0
    cols = cols + c0
    uv = np.stack([cols + PIXEL_CENTER, rows + PIXEL_CENTER], axis=1)
    return back_project_points(uv, z, k), np.stack([rows, cols], axis=1).astype(np.int64)
