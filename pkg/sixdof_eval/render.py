"""
Minimal pinhole depth rasterizer.

Provides the render-at-pose primitive used by marker repair, the ICP
tracker, the training-pair sampler and the synthetic sequence generator.
Only depth is produced: triangles are z-buffered with perspective-correct
(1/z) interpolation and sampled at pixel centres, see ``camera``.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.distance import pdist

from .camera import PIXEL_CENTER, Intrinsics, back_project_points, depth_to_points, project_points  # noqa: F401
from .exceptions import BehindCameraError, EmptyMeshError, ValidationError
from .se3 import Pose

logger = logging.getLogger(__name__)

DepthImage = NDArray[np.float32]

NEAR_PLANE_MM = 1.0
_EDGE_EPS = 1e-9


# ==================== MESH ====================

@dataclass(frozen=True, eq=False)
class Mesh:
    """
    Triangle mesh in the object frame (mm).

    Construction checks shapes, finiteness and index range; emptiness is
    checked by ``validate`` so that callers can report it as EmptyMeshError.
    """

    vertices: NDArray[np.float64]
    triangles: NDArray[np.int64]
    colors: Optional[NDArray[np.float64]] = None

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise ValidationError("Mesh vertices must be finite")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValidationError(
                f"Triangle indices must lie in [0, {len(v)}), got [{f.min()}, {f.max()}]"
            )
        v.flags.writeable = False
        f.flags.writeable = False
        object.__setattr__(self, 'vertices', v)
        object.__setattr__(self, 'triangles', f)
        if self.colors is not None:
            c = np.array(self.colors, dtype=np.float64).reshape(-1, 3)
            if len(c) != len(v):
                raise ValidationError("Per-vertex colors must match the vertex count")
            object.__setattr__(self, 'colors', c)

    def validate(self) -> 'Mesh':
        """Raise EmptyMeshError when the mesh has no triangles."""
        if len(self.triangles) == 0:
            raise EmptyMeshError("Mesh has no triangles")
        return self

    # ---- constructors ----

    @classmethod
    def box(cls, size_x: float, size_y: float, size_z: float) -> 'Mesh':
        """Axis-aligned box centred on the origin, outward-facing triangles."""
        hx, hy, hz = size_x / 2.0, size_y / 2.0, size_z / 2.0
        v = np.array([[-hx, -hy, -hz], [hx, -hy, -hz], [hx, hy, -hz], [-hx, hy, -hz],
                      [-hx, -hy, hz], [hx, -hy, hz], [hx, hy, hz], [-hx, hy, hz]])
        quads = [(0, 3, 2, 1), (4, 5, 6, 7), (0, 1, 5, 4), (3, 7, 6, 2), (0, 4, 7, 3), (1, 2, 6, 5)]
        f = []
        for a, b, c, d in quads:
            f.append((a, b, c))
            f.append((a, c, d))
        return cls(v, np.array(f))

    @classmethod
    def plane(cls, width: float, height: float, z: float = 0.0) -> 'Mesh':
        """Square patch in the z = ``z`` plane, normal towards -z (the camera)."""
        hw, hh = width / 2.0, height / 2.0
        v = np.array([[-hw, -hh, z], [hw, -hh, z], [hw, hh, z], [-hw, hh, z]])
        return cls(v, np.array([[0, 3, 2], [0, 2, 1]]))

    @classmethod
    def icosphere(cls, radius: float, subdivisions: int = 2) -> 'Mesh':
        """Geodesic sphere built by subdividing an icosahedron."""
        t = (1.0 + 5.0 ** 0.5) / 2.0
        verts = [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
                 [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
                 [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]]
        faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
                 (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
                 (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
                 (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
        verts = [list(np.asarray(p, dtype=np.float64) / np.linalg.norm(p)) for p in verts]
        for _ in range(subdivisions):
            cache: Dict[Tuple[int, int], int] = {}

            def midpoint(a: int, b: int) -> int:
                key = (min(a, b), max(a, b))
                if key not in cache:
                    m = (np.asarray(verts[a]) + np.asarray(verts[b])) / 2.0
                    verts.append(list(m / np.linalg.norm(m)))
                    cache[key] = len(verts) - 1
                return cache[key]

            refined = []
            for a, b, c in faces:
                ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
                refined += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
            faces = refined
        return cls(np.asarray(verts) * radius, np.asarray(faces))

    # ---- geometry ----

    def centroid(self) -> NDArray[np.float64]:
        """Centre of mass of the vertices (origin convention of object meshes)."""
        return self.vertices.mean(axis=0)

    def max_dimension(self) -> float:
        """Largest distance between two vertices, in mm."""
        pts = self.vertices
        try:
            pts = pts[ConvexHull(pts).vertices]
        except (QhullError, ValueError):
            # flat or tiny meshes: fall back to every vertex
            pass
        return float(pdist(pts).max()) if len(pts) > 1 else 0.0

    def transformed(self, pose: Pose) -> 'Mesh':
        return Mesh(pose.transform_points(self.vertices), self.triangles, self.colors)

    def face_normals(self) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Unit face normals and face areas."""
        tri = self.vertices[self.triangles]
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        norm = np.linalg.norm(cross, axis=1)
        with np.errstate(invalid='ignore', divide='ignore'):
            normals = np.where(norm[:, None] > 0, cross / norm[:, None], 0.0)
        return normals, 0.5 * norm

    def sample_surface(self, n: int, rng: np.random.Generator
                       ) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
        """
        Area-uniform surface samples with their face normals.

        Returns:
            (points, normals), both (n, 3)
        """
        self.validate()
        normals, areas = self.face_normals()
        total = areas.sum()
        if total <= 0:
            raise EmptyMeshError("Mesh has zero surface area")
        idx = rng.choice(len(areas), size=n, p=areas / total)
        r1 = np.sqrt(rng.random(n))
        r2 = rng.random(n)
        tri = self.vertices[self.triangles[idx]]
        pts = ((1.0 - r1)[:, None] * tri[:, 0]
               + (r1 * (1.0 - r2))[:, None] * tri[:, 1]
               + (r1 * r2)[:, None] * tri[:, 2])
        return pts, normals[idx]


# ==================== PROJECTION ====================

def project(point, k: Intrinsics) -> Tuple[float, float, float]:
    """
    Project a camera-frame point.

    Returns:
        (u, v, depth): pixel coordinates and depth in mm

    Raises:
        BehindCameraError: depth (z) is not positive
    """
    x, y, z = (float(c) for c in point)
    if z <= 0:
        raise BehindCameraError(f"Point at z={z} mm is not in front of the camera")
    return k.fx * x / z + k.cx, k.fy * y / z + k.cy, z


def back_project(u: float, v: float, z: float, k: Intrinsics) -> NDArray[np.float64]:
    """Camera-frame point seen at pixel coordinates (u, v) with depth z."""
    return back_project_points(np.array([[u, v]]), np.array([z]), k)[0]


# ==================== RASTERIZATION ====================

def _rasterize_band(screen: np.ndarray, inv_z: np.ndarray, zbuf: np.ndarray, row0: int) -> None:
    """Z-buffer every screen triangle into ``zbuf`` (rows row0 .. row0 + len(zbuf))."""
    height, width = zbuf.shape
    row1 = row0 + height
    for (x0, y0), (x1, y1), (x2, y2), (iz0, iz1, iz2) in zip(screen[:, 0], screen[:, 1],
                                                              screen[:, 2], inv_z):
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if abs(area) < 1e-12:
            continue
        c_lo = max(int(np.ceil(min(x0, x1, x2) - PIXEL_CENTER)), 0)
        c_hi = min(int(np.floor(max(x0, x1, x2) - PIXEL_CENTER)), width - 1)
        r_lo = max(int(np.ceil(min(y0, y1, y2) - PIXEL_CENTER)), row0)
        r_hi = min(int(np.floor(max(y0, y1, y2) - PIXEL_CENTER)), row1 - 1)
        if c_lo > c_hi or r_lo > r_hi:
            continue
        px = np.arange(c_lo, c_hi + 1, dtype=np.float64)[None, :] + PIXEL_CENTER
        py = np.arange(r_lo, r_hi + 1, dtype=np.float64)[:, None] + PIXEL_CENTER
        w0 = ((x1 - px) * (y2 - py) - (x2 - px) * (y1 - py)) / area
        w1 = ((x2 - px) * (y0 - py) - (x0 - px) * (y2 - py)) / area
        w2 = 1.0 - w0 - w1
        inside = (w0 >= -_EDGE_EPS) & (w1 >= -_EDGE_EPS) & (w2 >= -_EDGE_EPS)
        if not inside.any():
            continue
        with np.errstate(divide='ignore'):
            z = 1.0 / (w0 * iz0 + w1 * iz1 + w2 * iz2)
        window = zbuf[r_lo - row0:r_hi - row0 + 1, c_lo:c_hi + 1]
        closer = inside & (z < window)
        window[closer] = z[closer]


def _roll_vertices(tri: np.ndarray, first: np.ndarray) -> np.ndarray:
    """Cyclically reorder each triangle so vertex ``first[i]`` comes first."""
    idx = (first[:, None] + np.arange(3)[None, :]) % 3
    return np.take_along_axis(tri, idx[:, :, None], axis=1)


def _cut(p: np.ndarray, q: np.ndarray, near_mm: float) -> np.ndarray:
    """Point where segment p -> q crosses z = near_mm (p in front, q not)."""
    s = (near_mm - p[:, 2]) / (q[:, 2] - p[:, 2])
    return p + s[:, None] * (q - p)


def clip_near(tri: np.ndarray, near_mm: float) -> NDArray[np.float64]:
    """
    Clip camera-frame triangles (T, 3, 3) against the plane z = near_mm.

    Triangles fully in front are kept, fully behind are dropped; one vertex
    in front leaves one smaller triangle, two in front leave a quad split
    into two triangles.
    """
    inside = tri[:, :, 2] > near_mm
    count = inside.sum(axis=1)
    parts = [tri[count == 3]]

    one = count == 1
    if one.any():
        t = _roll_vertices(tri[one], np.argmax(inside[one], axis=1))
        a, b, c = t[:, 0], t[:, 1], t[:, 2]
        parts.append(np.stack([a, _cut(a, b, near_mm), _cut(a, c, near_mm)], axis=1))

    two = count == 2
    if two.any():
        # outside vertex last
        t = _roll_vertices(tri[two], (np.argmin(inside[two], axis=1) + 1) % 3)
        a, b, c = t[:, 0], t[:, 1], t[:, 2]
        bc, ca = _cut(b, c, near_mm), _cut(a, c, near_mm)
        parts.append(np.stack([a, b, bc], axis=1))
        parts.append(np.stack([a, bc, ca], axis=1))
    return np.concatenate(parts, axis=0)


def render_depth(mesh: Mesh, pose: Pose, k: Intrinsics, jobs: int = 1,
                 near_mm: float = NEAR_PLANE_MM) -> DepthImage:
    """
    Render the depth of ``mesh`` placed at ``pose`` (object -> camera).

    Args:
        mesh: triangle mesh in the object frame
        pose: object-to-camera transform
        k: camera intrinsics
        jobs: number of horizontal bands rendered concurrently
        near_mm: triangles are clipped against the plane z = near_mm

    Returns:
        (H, W) float32 depth in mm, 0 where no surface is hit
    """
    mesh.validate()
    cam = pose.transform_points(mesh.vertices)
    tri = cam[mesh.triangles]
    tri = clip_near(tri, near_mm)
    zbuf = np.full(k.shape, np.inf)
    if len(tri):
        uv, z = project_points(tri.reshape(-1, 3), k)
        screen = uv.reshape(-1, 3, 2)
        inv_z = (1.0 / z).reshape(-1, 3)
        lo = screen.min(axis=1)
        hi = screen.max(axis=1)
        visible = (hi[:, 0] >= 0) & (hi[:, 1] >= 0) & (lo[:, 0] < k.width) & (lo[:, 1] < k.height)
        screen, inv_z = screen[visible], inv_z[visible]
        jobs = max(1, min(int(jobs), k.height))
        if jobs == 1:
            _rasterize_band(screen, inv_z, zbuf, 0)
        else:
            edges = np.linspace(0, k.height, jobs + 1).astype(int)
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                list(pool.map(lambda b: _rasterize_band(screen, inv_z, zbuf[edges[b]:edges[b + 1]],
                                                        int(edges[b])),
                              range(jobs)))
    depth = np.where(np.isfinite(zbuf), zbuf, 0.0).astype(np.float32)
    logger.debug("Rendered %d triangles, %d object pixels", len(tri), int((depth > 0).sum()))
    return depth


def render_mask(mesh: Mesh, pose: Pose, k: Intrinsics) -> NDArray[np.bool_]:
    """Object silhouette: True where ``render_depth`` is positive."""
    return render_depth(mesh, pose, k) > 0
