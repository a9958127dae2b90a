"""
Command-line front end.

Usage:
    python -m sixdof_eval <command> [options]

Commands:
    calibrate-sphere  fit the probe-tip sphere to tracked points
    calibrate-pnp     camera pose from 2D-3D correspondences
    sync              clock offset between motion capture and camera
    inpaint           remove marker artifacts from a sequence
    gen-pairs         stream synthetic training pose pairs
    gen-sequence      render a synthetic sequence (or a whole dataset with --suite)
    eval              run a tracker over a dataset
    report            merge evaluation reports into comparison tables
    validate          check a dataset manifest

Exit codes: 0 success, 1 domain error, 2 usage error.
"""

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence as SequenceType, Tuple

import cv2
import numpy as np

from . import __version__
from .calibration import PnpParams, SyncParams, estimate_time_offset, fit_sphere, solve_pnp
from .camera import Intrinsics
from .config import LOG_LEVELS, Settings
from .dataset_io import (
    Sequence,
    dumps_json,
    load_manifest,
    load_mesh,
    load_sequence,
    read_correspondences_csv,
    read_json,
    read_marker_set,
    read_points_csv,
    read_pose_trace,
    read_timed_points_csv,
    save_sequence,
    validate_manifest,
    write_json,
    write_pose_trace
)
from .exceptions import ParseError, SixDofError, ValidationError
from .harness import BIN_SETS, FAMILIES, EvalConfig, EvalReport, aggregate, evaluate_sequence
from .marker_repair import RepairParams, repair_sequence
from .sampler import MODES, PerturbationConfig, default_base_poses, generate_pairs, manifest_record
from .se3 import Pose
from .synth_gen import KINDS, ORIENTATIONS, OccluderSpec, TrajectorySpec, generate_sequence, write_suite
from .tracking import TRACKERS, IcpParams, make_tracker

logger = logging.getLogger(__name__)

DEFAULT_INTRINSICS = Intrinsics(525.0, 525.0, 320.0, 240.0, 640, 480)
REPORT_FILE = 'repair_report.json'
# Flags that change how a run executes but not what it produces
_UNHASHED = ('func', 'jobs', 'log_level')


# ==================== HELPERS ====================

def config_hash(args: argparse.Namespace, seed: int) -> str:
    """sha256 of the canonical (sorted, stringified) flags plus the seed."""
    flags = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k not in _UNHASHED}
    flags['seed'] = seed
    return hashlib.sha256(json.dumps(flags, sort_keys=True, default=str).encode()).hexdigest()


def reproducibility(args: argparse.Namespace, settings: Settings) -> Dict[str, Any]:
    return {'version': __version__, 'seed': settings.seed, 'config_hash': config_hash(args, settings.seed)}


def load_intrinsics(path: Optional[Path]) -> Intrinsics:
    """Intrinsics from a JSON file (bare record or a sequence ``meta.json``); default camera when None."""
    if path is None:
        return DEFAULT_INTRINSICS
    data = read_json(path)
    if isinstance(data, dict) and 'intrinsics' in data:
        data = data['intrinsics']
    return Intrinsics.from_dict(data)


def load_pose(path: Path) -> Pose:
    """Pose from a JSON file holding a 4x4 matrix or 16 row-major numbers."""
    data = read_json(path)
    try:
        values = np.asarray(data, dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise ParseError(f"{path}: not a pose ({e})")
    if values.shape == (4, 4):
        return Pose.from_matrix(values)
    return Pose.from_list(values.reshape(-1))


def emit(data: Dict[str, Any], out: Optional[Path]) -> None:
    """Write JSON to ``out`` or standard output."""
    if out is None:
        sys.stdout.write(dumps_json(data))
    else:
        write_json(out, data)
        logger.info("Wrote %s", out)


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _non_negative(text: str) -> float:
    value = float(text)
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return value


# ==================== CALIBRATION ====================

def cmd_calibrate_sphere(args: argparse.Namespace, settings: Settings) -> int:
    points = read_points_csv(args.points)
    fit = fit_sphere(points)
    logger.info("Sphere radius %.3f mm from %d points (RMS %.3f mm)", fit.radius, len(points), fit.rms_residual)
    emit({'reproducibility': reproducibility(args, settings), 'sphere': fit.to_dict()}, args.out)
    return 0


def cmd_calibrate_pnp(args: argparse.Namespace, settings: Settings) -> int:
    correspondences = read_correspondences_csv(args.correspondences)
    params = PnpParams(max_mean_error_px=args.max_error_px)
    result = solve_pnp(correspondences, load_intrinsics(args.intrinsics), params)
    emit({'reproducibility': reproducibility(args, settings), 'pnp': result.to_dict()}, args.out)
    return 0


def cmd_sync(args: argparse.Namespace, settings: Settings) -> int:
    mocap = read_timed_points_csv(args.mocap, 3)
    detections = read_timed_points_csv(args.detections, 2)
    params = SyncParams(window_ms=args.window_ms, step_ms=args.step_ms)
    result = estimate_time_offset(mocap, detections, load_intrinsics(args.intrinsics),
                                  load_pose(args.extrinsics), params)
    emit({'reproducibility': reproducibility(args, settings), 'sync': result.to_dict()}, args.out)
    return 0


# ==================== INPAINTING ====================

def cmd_inpaint(args: argparse.Namespace, settings: Settings) -> int:
    seq = load_sequence(args.sequence, jobs=settings.jobs)
    mesh = load_mesh(args.mesh)
    markers = read_marker_set(args.markers) if args.markers is not None else seq.markers
    if markers is None:
        raise ValidationError("No marker set: pass --markers or store markers in the sequence metadata")
    references = None
    if args.reference is not None:
        reference = load_sequence(args.reference, jobs=settings.jobs)
        references = [f.depth for f in reference.frames]

    depths = [f.depth for f in seq.frames]
    repaired, report = repair_sequence(depths, seq.gt_poses, mesh, markers, seq.intrinsics, args.sigma,
                                       settings.seed, references, RepairParams(window_px=args.window),
                                       jobs=settings.jobs)
    frames = tuple(replace(f, depth=d) for f, d in zip(seq.frames, repaired))
    out = args.out or args.sequence.parent / f'{args.sequence.name}_repaired'
    save_sequence(Sequence(frames, seq.scenario, seq.object_id, seq.intrinsics, markers, seq.sequence_id), out)
    write_json(out / REPORT_FILE, {'reproducibility': reproducibility(args, settings),
                                   'frames': len(frames), 'report': report.to_dict()})
    logger.info("Repaired sequence written to %s", out)
    return 0


# ==================== SYNTHETIC DATA ====================

def _write_depth_png(path: Path, depth: np.ndarray) -> None:
    if not cv2.imwrite(str(path), np.round(np.clip(depth, 0, 65535)).astype(np.uint16)):
        raise ValidationError(f"Could not write {path}")


def cmd_gen_pairs(args: argparse.Namespace, settings: Settings) -> int:
    if args.render and args.mesh is None:
        raise ValidationError("--render needs --mesh")
    cfg = PerturbationConfig(args.delta_t, args.delta_r, args.mode)
    mesh = load_mesh(args.mesh) if args.mesh is not None else None
    k = load_intrinsics(args.intrinsics)
    rng = np.random.default_rng(settings.seed)
    base_poses = default_base_poses(args.base_poses, args.distance, rng)

    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    header = manifest_record(cfg, settings.seed, args.n, args.render)
    header['reproducibility'] = reproducibility(args, settings)
    write_json(out / 'manifest.json', header)
    if args.render:
        (out / 'crops').mkdir(exist_ok=True)

    with open(out / 'pairs.jsonl', 'w') as fh:
        for i, pair in enumerate(generate_pairs(mesh, base_poses, cfg, args.n, rng, k, args.render)):
            record = pair.to_dict()
            record['index'] = i
            fh.write(json.dumps(record, sort_keys=True) + '\n')
            if args.render:
                _write_depth_png(out / 'crops' / f'{i:06d}_pred.png', pair.crop_pred)
                _write_depth_png(out / 'crops' / f'{i:06d}_gt.png', pair.crop_gt)
    logger.info("Wrote %d pairs to %s", args.n, out)
    return 0


def cmd_gen_sequence(args: argparse.Namespace, settings: Settings) -> int:
    mesh = load_mesh(args.mesh)
    k = load_intrinsics(args.intrinsics)
    if args.suite:
        manifest = write_suite(mesh, args.object_id, k, args.out, settings.seed, settings.jobs,
                               noise_sigma_mm=args.noise)
        logger.info("Suite of %d sequences written to %s", len(manifest.sequences), args.out)
        return 0

    spec = TrajectorySpec(args.kind, args.length, args.distance, args.deg_per_frame, args.speed_t,
                          args.speed_r, settings.seed)
    occluder = OccluderSpec(args.occluder, args.orientation) if args.occluder > 0 else None
    seq = generate_sequence(mesh, spec, occluder, args.noise, k, settings.seed, object_id=args.object_id,
                            sequence_id=args.out.name, jobs=settings.jobs)
    save_sequence(seq, args.out)
    write_json(args.out / 'spec.json', {
        'reproducibility': reproducibility(args, settings),
        'scenario': seq.scenario.to_dict(),
        'trajectory': spec.to_dict(),
        'occluder': occluder.to_dict() if occluder is not None else None,
        'noise_sigma_mm': args.noise
    })
    logger.info("Sequence of %d frames written to %s", len(seq), args.out)
    return 0


# ==================== EVALUATION ====================

def _evaluate_one(sequence_dir: str, mesh_path: str, tracker_name: str, label: Optional[str],
                  cfg: EvalConfig, icp: IcpParams, trace: Optional[Dict[int, Pose]]) -> EvalReport:
    """Worker: load one sequence and evaluate it (top level so it can run in a process pool)."""
    seq = load_sequence(sequence_dir)
    tracker = make_tracker(tracker_name, icp, trace)
    report = evaluate_sequence(seq, tracker, load_mesh(mesh_path), cfg)
    if label:
        report.tracker = label
    return report


def _per_frame_csv(reports: SequenceType[EvalReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator='\n')
    writer.writerow(['tracker', 'sequence_id', 'scenario', 'frame_index', 'err_t_mm', 'err_r_deg',
                     'gt_speed_t_mm', 'gt_speed_r_deg', 'was_reset', 'failure'])
    for report in reports:
        for rec in report.per_frame:
            writer.writerow([report.tracker, report.sequence_id, report.scenario.label, rec.frame_index,
                             f'{rec.err_t_mm:.6f}', f'{rec.err_r_deg:.6f}', f'{rec.gt_speed_t_mm:.6f}',
                             f'{rec.gt_speed_r_deg:.6f}', int(rec.was_reset), int(rec.failure)])
    return buf.getvalue()


def cmd_eval(args: argparse.Namespace, settings: Settings) -> int:
    manifest = load_manifest(args.dataset)
    family = None if args.scenario == 'all' else args.scenario
    entries = manifest.sequence_dirs(family)
    if not entries:
        raise ValidationError(f"No {args.scenario} sequences listed in {args.dataset}")
    if args.tracker == 'playback' and args.trace is None:
        raise ValidationError("--tracker playback needs --trace")
    traces = read_pose_trace(args.trace) if args.trace is not None else {}

    cfg = EvalConfig(reset_interval=args.reset_interval, bins=args.bins)
    icp = IcpParams(seed=settings.seed, strict=args.strict)
    jobs: List[Tuple[Any, ...]] = []
    for entry, directory in entries:
        mesh_path = manifest.root / manifest.object(entry.object).mesh
        sequence_id = read_json(directory / 'meta.json').get('sequence_id', directory.name)
        trace = traces.get(sequence_id, {}) if args.tracker == 'playback' else None
        jobs.append((str(directory), str(mesh_path), args.tracker, args.label, cfg, icp, trace))
    logger.info("Evaluating %d sequences with %s on %d worker(s)", len(jobs), args.tracker, settings.jobs)

    if settings.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(settings.jobs, len(jobs))) as pool:
            reports = list(pool.map(_evaluate_one, *zip(*jobs)))
    else:
        reports = [_evaluate_one(*job) for job in jobs]

    summary = aggregate(reports, cfg.bin_set)
    out: Path = args.out
    write_json(out, {
        'reproducibility': reproducibility(args, settings),
        'summary': summary.to_dict(),
        'reports': [r.to_dict() for r in reports]
    })
    out.with_suffix('.csv').write_text(_per_frame_csv(reports))
    summary.write_dat(out.parent)
    write_pose_trace(out.with_name(f'{out.stem}_trace.jsonl'),
                     ((r.sequence_id, rec.frame_index, rec.estimate)
                      for r in reports for rec in r.per_frame if rec.estimate is not None))
    logger.info("Report written to %s", out)
    sys.stdout.write(summary.to_text())
    return 0


def load_reports(path: Path) -> List[EvalReport]:
    """Reports from an ``eval`` output file, or a single serialized report."""
    data = read_json(path)
    if isinstance(data, dict) and 'reports' in data:
        return [EvalReport.from_dict(r) for r in data['reports']]
    if isinstance(data, dict) and 'per_frame' in data:
        return [EvalReport.from_dict(data)]
    raise ParseError(f"{path}: not an evaluation report")


def cmd_report(args: argparse.Namespace, settings: Settings) -> int:
    reports = [r for path in args.inputs for r in load_reports(path)]
    summary = aggregate(reports, BIN_SETS[args.bins] if args.bins else None)
    if args.format == 'csv':
        text = summary.to_csv()
    elif args.format == 'json':
        data = summary.to_dict()
        data['reproducibility'] = reproducibility(args, settings)
        text = dumps_json(data)
    else:
        text = summary.to_text()
    if args.out is None:
        sys.stdout.write(text)
    else:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text)
    return 0


def cmd_validate(args: argparse.Namespace, settings: Settings) -> int:
    manifest = load_manifest(args.dataset)
    violations = validate_manifest(manifest, check_frames=args.check_frames)
    for v in violations:
        sys.stderr.write(f'{v}\n')
    if violations:
        logger.error("%d problem(s) in %s", len(violations), args.dataset)
        return 1
    sys.stdout.write(f'OK: {len(manifest.objects)} objects, {len(manifest.sequences)} sequences\n')
    return 0


# ==================== PARSER ====================

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, default=None, help='master seed (default: SIXDOF_SEED or 0)')
    common.add_argument('--jobs', type=_positive_int, default=None, help='workers (default: SIXDOF_JOBS or cores)')
    common.add_argument('--log-level', choices=LOG_LEVELS, default=None, type=str.upper)

    parser = argparse.ArgumentParser(prog='sixdof_eval', description='6-DOF object tracking evaluation')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    sub = parser.add_subparsers(dest='command', required=True, metavar='command')

    p = sub.add_parser('calibrate-sphere', parents=[common], help='fit the probe-tip sphere')
    p.add_argument('--points', type=Path, required=True, help='x,y,z CSV of tracked probe positions')
    p.add_argument('--out', type=Path)
    p.set_defaults(func=cmd_calibrate_sphere)

    p = sub.add_parser('calibrate-pnp', parents=[common], help='camera pose from 2D-3D correspondences')
    p.add_argument('--correspondences', type=Path, required=True, help='u,v,x,y,z CSV')
    p.add_argument('--intrinsics', type=Path)
    p.add_argument('--max-error-px', type=float, default=2.0)
    p.add_argument('--out', type=Path)
    p.set_defaults(func=cmd_calibrate_pnp)

    p = sub.add_parser('sync', parents=[common], help='clock offset between motion capture and camera')
    p.add_argument('--mocap', type=Path, required=True, help='t_ms,marker,x,y,z CSV')
    p.add_argument('--detections', type=Path, required=True, help='t_ms,marker,u,v CSV')
    p.add_argument('--extrinsics', type=Path, required=True, help='JSON 4x4 tracking-to-camera pose')
    p.add_argument('--intrinsics', type=Path)
    p.add_argument('--window-ms', type=float, default=500.0)
    p.add_argument('--step-ms', type=float, default=1.0)
    p.add_argument('--out', type=Path)
    p.set_defaults(func=cmd_sync)

    p = sub.add_parser('inpaint', parents=[common], help='remove marker artifacts from depth')
    p.add_argument('--sequence', type=Path, required=True)
    p.add_argument('--mesh', type=Path, required=True)
    p.add_argument('--markers', type=Path, help='x,y,z CSV (default: markers stored with the sequence)')
    p.add_argument('--sigma', type=_non_negative, default=2.0, help='patch noise std in mm')
    p.add_argument('--window', type=_positive_int, default=10, help='patch size in px')
    p.add_argument('--reference', type=Path, help='clean sequence for RMSE figures')
    p.add_argument('--out', type=Path)
    p.set_defaults(func=cmd_inpaint)

    p = sub.add_parser('gen-pairs', parents=[common], help='stream synthetic training pairs')
    p.add_argument('--n', type=_positive_int, required=True)
    p.add_argument('--delta-t', type=_non_negative, default=30.0, help='translation scale in mm')
    p.add_argument('--delta-r', type=_non_negative, default=15.0, help='rotation scale in degrees')
    p.add_argument('--mode', choices=MODES, default='spherical')
    p.add_argument('--base-poses', type=_positive_int, default=64)
    p.add_argument('--distance', type=float, default=1000.0, help='object distance in mm')
    p.add_argument('--mesh', type=Path)
    p.add_argument('--intrinsics', type=Path)
    p.add_argument('--render', action='store_true', help='also write depth crops')
    p.add_argument('--out', type=Path, required=True)
    p.set_defaults(func=cmd_gen_pairs)

    p = sub.add_parser('gen-sequence', parents=[common], help='render a synthetic sequence')
    p.add_argument('--mesh', type=Path, required=True)
    p.add_argument('--out', type=Path, required=True)
    p.add_argument('--object-id', default='object')
    p.add_argument('--suite', action='store_true', help='write the full 27-sequence dataset of the object')
    p.add_argument('--kind', choices=KINDS, default='static')
    p.add_argument('--length', type=_positive_int, default=30)
    p.add_argument('--distance', type=float, default=1000.0)
    p.add_argument('--deg-per-frame', type=float, default=0.0)
    p.add_argument('--speed-t', type=_non_negative, default=0.0, help='mm per frame')
    p.add_argument('--speed-r', type=_non_negative, default=0.0, help='degrees per frame')
    p.add_argument('--occluder', type=_non_negative, default=0.0, help='occluded fraction in [0, 1)')
    p.add_argument('--orientation', choices=ORIENTATIONS, default='horizontal')
    p.add_argument('--noise', type=_non_negative, default=2.0, help='depth noise std in mm')
    p.add_argument('--intrinsics', type=Path)
    p.set_defaults(func=cmd_gen_sequence)

    p = sub.add_parser('eval', parents=[common], help='evaluate a tracker on a dataset')
    p.add_argument('--scenario', choices=FAMILIES + ('all',), default='all')
    p.add_argument('--tracker', choices=TRACKERS, required=True)
    p.add_argument('--dataset', type=Path, required=True)
    p.add_argument('--out', type=Path, required=True, help='report JSON path')
    p.add_argument('--label', help='name of the tracker in the report tables')
    p.add_argument('--trace', type=Path, help='pose trace for the playback tracker')
    p.add_argument('--bins', choices=sorted(BIN_SETS), default='speed')
    p.add_argument('--reset-interval', type=_positive_int, default=15)
    p.add_argument('--strict', action='store_true', help='fail on ICP low overlap')
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser('report', parents=[common], help='merge evaluation reports')
    p.add_argument('--in', dest='inputs', type=Path, nargs='+', required=True)
    p.add_argument('--format', choices=('csv', 'json', 'text'), default='text')
    p.add_argument('--bins', choices=sorted(BIN_SETS))
    p.add_argument('--out', type=Path)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser('validate', parents=[common], help='check a dataset manifest')
    p.add_argument('--dataset', type=Path, required=True)
    p.add_argument('--check-frames', action='store_true', help='also load every sequence')
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: Optional[SequenceType[str]] = None) -> int:
    """Run one command; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2

    try:
        settings = Settings(seed=args.seed, jobs=args.jobs, log_level=args.log_level)
        settings.configure_logging()
        logger.info("%s: seed %d, config %s", args.command, settings.seed,
                    config_hash(args, settings.seed)[:12])
        return args.func(args, settings)
    except SixDofError as e:
        logger.error("%s: %s", type(e).__name__, e)
        sys.stderr.write(f'error: {e}\n')
        return 1
    except OSError as e:
        logger.error("%s: %s", type(e).__name__, e)
        sys.stderr.write(f'error: {e.strerror or e}: {e.filename or ""}\n')
        return 1


if __name__ == '__main__':
    sys.exit(main())
