"""
On-disk formats: sequences, meshes, dataset manifest, CSV inputs, reports.

Sequence directory layout::

    <sequence>/
        meta.json        sequence_id, object_id, scenario, intrinsics,
                         timestamps_ms, markers (optional)
        poses.jsonl      one ground-truth 4x4 pose (row-major, mm) per line
        depth/000000.png 16-bit depth in mm, 0 = no return
        rgb/000000.png   optional colour frames

The dataset manifest is a single ``manifest.json`` at the dataset root
listing the objects (name, mesh path, max dimension) and the sequences
(path, scenario, object). Paths are relative to the manifest.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union

import cv2
import numpy as np
import trimesh
from numpy.typing import NDArray

from .calibration import Correspondence2D3D, DepthCorrection, TimedPoints
from .camera import Intrinsics
from .exceptions import EmptyMeshError, MissingFrameError, ParseError, PoseCountMismatchError, ValidationError
from .harness import FAMILIES, ScenarioKind
from .marker_repair import MarkerSet
from .render import Mesh
from .se3 import Pose
from .tracking import Frame

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

DEPTH_DIR = 'depth'
RGB_DIR = 'rgb'
POSES_FILE = 'poses.jsonl'
META_FILE = 'meta.json'
MANIFEST_FILE = 'manifest.json'
FRAME_PATTERN = '{:06d}.png'
DEFAULT_BREAKDOWN = {'stability': 12, 'occlusion': 11, 'interaction': 4}


# ==================== JSON ====================

def dumps_json(data: Any) -> str:
    """Deterministic JSON text (sorted keys, 2-space indent, trailing newline)."""
    return json.dumps(data, sort_keys=True, indent=2) + '\n'


def write_json(path: PathLike, data: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_json(data))
    return path


def read_json(path: PathLike) -> Any:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ParseError(f"{path}: invalid JSON ({e})")


# ==================== SEQUENCES ====================

@dataclass(frozen=True, eq=False)
class Sequence:
    """Ordered frames of one object in one scenario, with ground truth."""

    frames: Tuple[Frame, ...]
    scenario: ScenarioKind
    object_id: str
    intrinsics: Intrinsics
    markers: Optional[MarkerSet] = None
    sequence_id: str = ''

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise ValidationError("A sequence needs at least one frame")
        times = np.array([f.timestamp_ms for f in frames])
        if np.any(np.diff(times) < 0):
            raise ValidationError("Frame timestamps must be non-decreasing")
        for f in frames:
            if f.gt_pose is None:
                raise ValidationError(f"Frame {f.index} has no ground-truth pose")
            if f.intrinsics != self.intrinsics:
                raise ValidationError(f"Frame {f.index} uses different intrinsics than the sequence")
        object.__setattr__(self, 'frames', frames)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def gt_poses(self) -> List[Pose]:
        return [f.gt_pose for f in self.frames]

    @property
    def timestamps_ms(self) -> List[float]:
        return [float(f.timestamp_ms) for f in self.frames]


def _depth_to_png(depth: np.ndarray) -> NDArray[np.uint16]:
    d = np.asarray(depth, dtype=np.float64)
    if np.any(d > np.iinfo(np.uint16).max):
        raise ValidationError("Depth above 65535 mm cannot be stored in a 16-bit PNG")
    return np.round(np.clip(d, 0.0, None)).astype(np.uint16)


def save_sequence(seq: Sequence, directory: PathLike) -> Path:
    """
    Write ``seq`` in the native layout.

    Existing files are overwritten and numbered frames left over from an
    earlier, longer sequence in the same directory are removed. Depth is
    stored rounded to whole millimetres.
    """
    root = Path(directory)
    for folder in (root / DEPTH_DIR, root / RGB_DIR):
        if folder.is_dir():
            stale = [p for p in folder.glob('*.png') if p.stem.isdigit()]
            for p in stale:
                p.unlink()
            if stale:
                logger.debug("Removed %d old frames from %s", len(stale), folder)
    (root / DEPTH_DIR).mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(seq.frames):
        path = root / DEPTH_DIR / FRAME_PATTERN.format(i)
        if not cv2.imwrite(str(path), _depth_to_png(frame.depth)):
            raise ValidationError(f"Could not write {path}")
        if frame.rgb is not None:
            (root / RGB_DIR).mkdir(exist_ok=True)
            cv2.imwrite(str(root / RGB_DIR / FRAME_PATTERN.format(i)), frame.rgb)
    with open(root / POSES_FILE, 'w') as fh:
        for frame in seq.frames:
            fh.write(json.dumps(frame.gt_pose.matrix().tolist()) + '\n')
    meta = {
        'sequence_id': seq.sequence_id or root.name,
        'object_id': seq.object_id,
        'scenario': seq.scenario.to_dict(),
        'intrinsics': seq.intrinsics.to_dict(),
        'timestamps_ms': seq.timestamps_ms,
        'markers': seq.markers.to_dict() if seq.markers is not None else None
    }
    write_json(root / META_FILE, meta)
    logger.debug("Saved %d frames to %s", len(seq.frames), root)
    return root


def _read_png(path: Path, flags: int) -> np.ndarray:
    image = cv2.imread(str(path), flags)
    if image is None:
        raise ParseError(f"Could not decode image {path}")
    return image


def _frame_numbers(folder: Path) -> List[int]:
    numbers = []
    for p in folder.glob('*.png'):
        try:
            numbers.append(int(p.stem))
        except ValueError:
            logger.debug("Ignoring %s", p)
    return sorted(numbers)


def read_poses(path: PathLike) -> List[Pose]:
    """Poses from a poses.jsonl file (4x4 nested lists or 16 flat numbers per line)."""
    poses = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                values = np.asarray(json.loads(line), dtype=np.float64)
                poses.append(Pose.from_list(values.reshape(-1)))
            except (json.JSONDecodeError, ValueError, ValidationError) as e:
                raise ParseError(f"{path}:{line_no}: invalid pose ({e})")
    return poses


def load_sequence(directory: PathLike, correction: Optional[DepthCorrection] = None,
                  jobs: int = 1) -> Sequence:
    """
    Load a sequence written by ``save_sequence``.

    Args:
        directory: sequence directory
        correction: optional depth correction applied to every frame
        jobs: threads used to decode frames

    Raises:
        MissingFrameError: no depth frames, or a gap in the frame numbering
        PoseCountMismatchError: pose count differs from the frame count
        ParseError: unreadable metadata, pose or image file
    """
    root = Path(directory)
    numbers = _frame_numbers(root / DEPTH_DIR) if (root / DEPTH_DIR).is_dir() else []
    if not numbers:
        raise MissingFrameError(f"No depth frames found in {root / DEPTH_DIR}")
    missing = sorted(set(range(numbers[-1] + 1)) - set(numbers))
    if missing:
        raise MissingFrameError(f"{root}: depth frames missing: {missing[:10]}")

    poses = read_poses(root / POSES_FILE) if (root / POSES_FILE).is_file() else []
    if len(poses) != len(numbers):
        raise PoseCountMismatchError(f"{root}: {len(numbers)} depth frames but {len(poses)} poses")
    if not (root / META_FILE).is_file():
        raise MissingFrameError(f"{root}: {META_FILE} not found")
    meta = read_json(root / META_FILE)
    try:
        k = Intrinsics.from_dict(meta['intrinsics'])
        scenario = ScenarioKind.from_dict(meta['scenario'])
        timestamps = [float(t) for t in meta['timestamps_ms']]
        markers = MarkerSet.from_dict(meta['markers']) if meta.get('markers') else None
        object_id = str(meta['object_id'])
    except (KeyError, TypeError, ValueError, ValidationError) as e:
        raise ParseError(f"{root / META_FILE}: {e}")
    if len(timestamps) != len(numbers):
        raise ParseError(f"{root}: {len(numbers)} depth frames but {len(timestamps)} timestamps")

    def load(i: int) -> Frame:
        depth = _read_png(root / DEPTH_DIR / FRAME_PATTERN.format(i), cv2.IMREAD_UNCHANGED)
        if depth.dtype != np.uint16 or depth.ndim != 2:
            raise ParseError(f"Depth frame {i} of {root} is not a single-channel 16-bit image")
        depth = depth.astype(np.float32)
        if correction is not None:
            depth = correction.apply(depth)
        rgb_path = root / RGB_DIR / FRAME_PATTERN.format(i)
        rgb = _read_png(rgb_path, cv2.IMREAD_COLOR) if rgb_path.is_file() else None
        return Frame(depth, k, timestamps[i], poses[i], i, rgb)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            frames = list(pool.map(load, numbers))
    else:
        frames = [load(i) for i in numbers]
    return Sequence(tuple(frames), scenario, object_id, k, markers,
                    str(meta.get('sequence_id', root.name)))


# ==================== MESHES ====================

MESH_SUFFIXES = ('.ply', '.obj')

# trimesh's loaders surface malformed input as whichever builtin error the
# failing numpy/struct call raised
_MESH_READ_ERRORS = (ValueError, IndexError, KeyError, TypeError, AttributeError, EOFError, NotImplementedError)


def _as_trimesh(loaded: Any, path: Path) -> trimesh.Trimesh:
    if isinstance(loaded, trimesh.Scene):
        parts = [g for g in loaded.geometry.values() if isinstance(g, trimesh.Trimesh)]
        if not parts:
            raise EmptyMeshError(f"{path}: mesh has no faces")
        loaded = parts[0] if len(parts) == 1 else trimesh.util.concatenate(parts)
    if not isinstance(loaded, trimesh.Trimesh) or len(loaded.faces) == 0:
        raise EmptyMeshError(f"{path}: mesh has no faces")
    return loaded


def load_mesh(path: PathLike) -> Mesh:
    """
    Read an ASCII/binary PLY or an OBJ mesh (units: mm).

    Polygons are triangulated by trimesh; vertex order is kept.

    Raises:
        ParseError: missing file, unknown extension, malformed or truncated file
        EmptyMeshError: the file holds no faces
    """
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"Mesh file not found: {path}")
    suffix = path.suffix.lower()
    if suffix not in MESH_SUFFIXES:
        raise ParseError(f"Unsupported mesh format '{suffix}' (expected .ply or .obj)")
    try:
        loaded = trimesh.load(str(path), file_type=suffix[1:], process=False)
    except _MESH_READ_ERRORS as e:
        raise ParseError(f"{path}: malformed mesh ({type(e).__name__}: {e})")
    tm = _as_trimesh(loaded, path)
    vertices = np.asarray(tm.vertices, dtype=np.float64)
    faces = np.asarray(tm.faces, dtype=np.int64)
    if faces.min() < 0 or faces.max() >= len(vertices):
        raise ParseError(f"{path}: face index out of range")
    try:
        mesh = Mesh(vertices, faces)
    except ValidationError as e:
        raise ParseError(f"{path}: {e}")
    logger.debug("Loaded %s: %d vertices, %d triangles", path, len(mesh.vertices), len(mesh.triangles))
    return mesh


def save_mesh_ply(mesh: Mesh, path: PathLike, binary: bool = False) -> Path:
    """Write a triangle mesh as PLY through trimesh (ASCII unless ``binary``)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tm = trimesh.Trimesh(vertices=mesh.vertices, faces=mesh.triangles, process=False)
    tm.export(str(path), file_type='ply', encoding='binary' if binary else 'ascii')
    return path


# ==================== CSV INPUTS ====================

def _load_table(path: PathLike, columns: int) -> NDArray[np.float64]:
    path = Path(path)
    try:
        with open(path) as fh:
            first = fh.readline()
        skip = 0
        try:
            [float(v) for v in first.split(',') if v.strip()]
        except ValueError:
            skip = 1
        data = np.loadtxt(path, delimiter=',', comments='#', skiprows=skip, ndmin=2)
    except (OSError, ValueError) as e:
        raise ParseError(f"{path}: {e}")
    if data.shape[1] < columns:
        raise ParseError(f"{path}: expected {columns} columns, got {data.shape[1]}")
    return data[:, :columns]


def read_points_csv(path: PathLike) -> NDArray[np.float64]:
    """(N, 3) points from a ``x,y,z`` CSV (optional header)."""
    return _load_table(path, 3)


def read_marker_set(path: PathLike, diameter: float = 3.0) -> MarkerSet:
    """Marker set from a ``x,y,z`` CSV in the object frame."""
    return MarkerSet(read_points_csv(path), diameter)


def read_correspondences_csv(path: PathLike) -> List[Correspondence2D3D]:
    """2D-3D pairs from a ``u,v,x,y,z`` CSV."""
    data = _load_table(path, 5)
    return [Correspondence2D3D(row[:2].copy(), row[2:5].copy()) for row in data]


def read_timed_points_csv(path: PathLike, dims: int) -> TimedPoints:
    """
    Timestamped marker tracks from a ``t_ms,marker,c1..c<dims>`` CSV.

    Every timestamp must list the same markers; rows are grouped by
    timestamp and ordered by marker id.
    """
    data = _load_table(path, 2 + dims)
    times = np.unique(data[:, 0])
    markers = np.unique(data[:, 1])
    points = np.full((len(times), len(markers), dims), np.nan)
    ti = np.searchsorted(times, data[:, 0])
    mi = np.searchsorted(markers, data[:, 1])
    points[ti, mi] = data[:, 2:2 + dims]
    if np.isnan(points).any():
        raise ParseError(f"{path}: every timestamp must list all {len(markers)} markers")
    return TimedPoints(times, points)


# ==================== MANIFEST ====================

@dataclass
class ObjectEntry:
    name: str
    mesh: str
    max_dimension_mm: float


@dataclass
class SequenceEntry:
    path: str
    scenario: ScenarioKind
    object: str


@dataclass
class DatasetManifest:
    """
    Dataset index.

    ``breakdown`` is the expected number of sequences per object and
    scenario family.
    """

    objects: List[ObjectEntry] = field(default_factory=list)
    sequences: List[SequenceEntry] = field(default_factory=list)
    breakdown: Dict[str, int] = field(default_factory=lambda: dict(DEFAULT_BREAKDOWN))
    root: Path = field(default=Path('.'), compare=False)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'objects': [{'name': o.name, 'mesh': o.mesh, 'max_dimension_mm': o.max_dimension_mm}
                        for o in self.objects],
            'sequences': [{'path': s.path, 'scenario': s.scenario.to_dict(), 'object': s.object}
                          for s in self.sequences],
            'breakdown': dict(self.breakdown)
        }

    def object(self, name: str) -> ObjectEntry:
        for o in self.objects:
            if o.name == name:
                return o
        raise ValidationError(f"Object '{name}' is not listed in the manifest")

    def sequence_dirs(self, family: Optional[str] = None) -> List[Tuple[SequenceEntry, Path]]:
        return [(s, self.root / s.path) for s in self.sequences
                if family is None or s.scenario.family == family]


def load_manifest(path: PathLike) -> DatasetManifest:
    """Read a manifest file (or the ``manifest.json`` inside a directory)."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_FILE
    if not path.is_file():
        raise ParseError(f"Manifest not found: {path}")
    data = read_json(path)
    try:
        return DatasetManifest(
            objects=[ObjectEntry(str(o['name']), str(o['mesh']), float(o['max_dimension_mm']))
                     for o in data['objects']],
            sequences=[SequenceEntry(str(s['path']), ScenarioKind.from_dict(s['scenario']), str(s['object']))
                       for s in data['sequences']],
            breakdown={str(k): int(v) for k, v in data.get('breakdown', DEFAULT_BREAKDOWN).items()},
            root=path.parent
        )
    except (KeyError, TypeError, ValueError, ValidationError) as e:
        raise ParseError(f"{path}: {e}")


def save_manifest(manifest: DatasetManifest, path: Optional[PathLike] = None) -> Path:
    path = Path(path) if path is not None else manifest.root / MANIFEST_FILE
    return write_json(path, manifest.to_dict())


def validate_manifest(manifest: DatasetManifest, check_frames: bool = False) -> List[str]:
    """
    List every violation found in ``manifest`` (empty when well formed).

    Checks: mesh and sequence paths exist, sequences reference declared
    objects, and every object has the declared number of sequences per
    scenario family. With ``check_frames`` each sequence is also loaded.
    """
    violations = []
    names = [o.name for o in manifest.objects]
    for name in sorted({n for n in names if names.count(n) > 1}):
        violations.append(f"object '{name}' declared more than once")
    for o in manifest.objects:
        if not (manifest.root / o.mesh).is_file():
            violations.append(f"object '{o.name}': mesh not found at {o.mesh}")
        if not o.max_dimension_mm > 0:
            violations.append(f"object '{o.name}': max_dimension_mm must be positive")
    counts: Dict[str, Dict[str, int]] = {n: {f: 0 for f in FAMILIES} for n in names}
    for s in manifest.sequences:
        if s.object not in counts:
            violations.append(f"sequence {s.path}: unknown object '{s.object}'")
        else:
            counts[s.object][s.scenario.family] += 1
        directory = manifest.root / s.path
        if not directory.is_dir():
            violations.append(f"sequence {s.path}: directory not found")
        elif check_frames:
            try:
                load_sequence(directory)
            except (MissingFrameError, PoseCountMismatchError, ParseError) as e:
                violations.append(f"sequence {s.path}: {e}")
    for name in sorted(counts):
        for family, expected in sorted(manifest.breakdown.items()):
            found = counts[name].get(family, 0)
            if found != expected:
                violations.append(f"object '{name}': {found} {family} sequences, expected {expected}")
    return violations


# ==================== POSE TRACES ====================

def write_pose_trace(path: PathLike, records: Iterable[Tuple[str, int, Pose]]) -> Path:
    """JSON lines ``{"sequence_id", "frame", "pose"}`` for offline replay."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as fh:
        for sequence_id, frame, pose in records:
            fh.write(json.dumps({'sequence_id': sequence_id, 'frame': int(frame),
                                 'pose': pose.to_list()}, sort_keys=True) + '\n')
    return path


def read_pose_trace(path: PathLike) -> Dict[str, Dict[int, Pose]]:
    """Pose trace grouped by sequence id, then frame index."""
    trace: Dict[str, Dict[int, Pose]] = {}
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                trace.setdefault(str(rec['sequence_id']), {})[int(rec['frame'])] = Pose.from_list(rec['pose'])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError, ValidationError) as e:
                raise ParseError(f"{path}:{line_no}: invalid trace record ({e})")
    return trace
