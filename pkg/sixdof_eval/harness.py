"""
Evaluation protocols and metric aggregation.

Three scenarios are supported:

- stability: static object; reports the jitter between consecutive
  *estimated* poses, no resets.
- occlusion: turntable object behind a panel; reports the error to ground
  truth, resetting the tracker to ground truth every ``reset_interval``
  frames.
- interaction: hand-held object; as occlusion, with errors binned by the
  ground-truth inter-frame speed. ``free_hard`` sequences are not reset
  periodically: a failure (error above threshold for more than
  ``fail_window`` consecutive frames) is counted and triggers the reset.

Reset frames are flagged in the per-frame records and left out of every
aggregate.
"""

import io
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import SequenceTooShortError, ValidationError
from .se3 import Pose, pose_errors
from .tracking import Tracker

if TYPE_CHECKING:
    from .dataset_io import Sequence as FrameSequence
    from .render import Mesh

logger = logging.getLogger(__name__)

STABILITY_VARIANTS = ('near', 'far', 'occluded')
OCCLUSION_PERCENTS = (0, 15, 30, 45, 60, 75)
OCCLUDER_ORIENTATIONS = ('horizontal', 'vertical')
INTERACTION_VARIANTS = ('translation_only', 'rotation_only', 'free_slow', 'free_hard')
FAMILIES = ('stability', 'occlusion', 'interaction')


# ==================== SCENARIOS ====================

@dataclass(frozen=True)
class ScenarioKind:
    """
    Scenario annotation of a sequence.

    ``variant`` is the stability variant, the occluder orientation or the
    interaction variant; ``percent`` is only set for occlusion.
    """

    family: str
    variant: str
    percent: Optional[int] = None

    def __post_init__(self):
        if self.family == 'stability':
            allowed = STABILITY_VARIANTS
        elif self.family == 'occlusion':
            allowed = OCCLUDER_ORIENTATIONS
            if self.percent not in OCCLUSION_PERCENTS:
                raise ValidationError(
                    f"Occlusion percent must be one of {OCCLUSION_PERCENTS}, got {self.percent}"
                )
        elif self.family == 'interaction':
            allowed = INTERACTION_VARIANTS
        else:
            raise ValidationError(f"Unknown scenario family '{self.family}'. Expected one of {FAMILIES}")
        if self.variant not in allowed:
            raise ValidationError(f"Unknown {self.family} variant '{self.variant}'. Expected one of {allowed}")
        if self.family != 'occlusion' and self.percent is not None:
            raise ValidationError("Only occlusion scenarios carry a percent")

    @classmethod
    def stability(cls, variant: str) -> 'ScenarioKind':
        return cls('stability', variant)

    @classmethod
    def occlusion(cls, percent: int, occluder: str = 'horizontal') -> 'ScenarioKind':
        return cls('occlusion', occluder, percent)

    @classmethod
    def interaction(cls, variant: str) -> 'ScenarioKind':
        return cls('interaction', variant)

    @property
    def label(self) -> str:
        if self.family == 'occlusion':
            return f'occlusion/{self.percent}/{self.variant}'
        return f'{self.family}/{self.variant}'

    def to_dict(self) -> Dict[str, Any]:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ScenarioKind':
        try:
            percent = data.get('percent')
            return cls(str(data['family']), str(data['variant']),
                       None if percent is None else int(percent))
        except (KeyError, TypeError, ValueError) as e:
            raise ValidationError(f"Invalid scenario record {data}: {e}")

    @classmethod
    def parse(cls, label: str) -> 'ScenarioKind':
        """Inverse of ``label``."""
        parts = label.split('/')
        if len(parts) == 3 and parts[0] == 'occlusion':
            try:
                return cls('occlusion', parts[2], int(parts[1]))
            except ValueError:
                pass
        elif len(parts) == 2:
            return cls(parts[0], parts[1])
        raise ValidationError(f"Cannot parse scenario label '{label}'")


# ==================== CONFIGURATION ====================

@dataclass(frozen=True)
class BinSet:
    """Upper-closed speed bins: (e0, e1], (e1, e2], ...; speed 0 falls in the first bin."""

    name: str
    t_edges_mm: Tuple[float, ...]
    r_edges_deg: Tuple[float, ...]

    def t_bins(self) -> List[Tuple[float, float]]:
        return list(zip(self.t_edges_mm[:-1], self.t_edges_mm[1:]))

    def r_bins(self) -> List[Tuple[float, float]]:
        return list(zip(self.r_edges_deg[:-1], self.r_edges_deg[1:]))


SPEED_BINS = BinSet('speed', (0.0, 10.0, 20.0, 30.0, 40.0), (0.0, 4.0, 8.0, 12.0, 16.0))
COMPARISON_BINS = BinSet('comparison', (0.0, 12.5, 25.0, 37.5, 50.0), (0.0, 19.0, 37.0, 56.0, 75.0))
BIN_SETS = {b.name: b for b in (SPEED_BINS, COMPARISON_BINS)}


@dataclass(frozen=True)
class EvalConfig:
    """Protocol constants."""

    reset_interval: int = 15
    fail_t_mm: float = 30.0
    fail_r_deg: float = 20.0
    fail_window: int = 7
    bins: str = 'speed'

    def __post_init__(self):
        if self.reset_interval <= 0 or self.fail_window <= 0:
            raise ValidationError("reset_interval and fail_window must be positive")
        if self.fail_t_mm <= 0 or self.fail_r_deg <= 0:
            raise ValidationError("Failure thresholds must be positive")
        if self.bins not in BIN_SETS:
            raise ValidationError(f"Unknown bin set '{self.bins}'. Available: {', '.join(BIN_SETS)}")

    @property
    def bin_set(self) -> BinSet:
        return BIN_SETS[self.bins]


# ==================== REPORTS ====================

@dataclass
class FrameRecord:
    """
    Per-frame outcome.

    For stability ``err_*`` is the jitter to the previous estimate; otherwise
    it is the error to ground truth of the tracker's own estimate (taken
    before any reset of that frame).
    """

    frame_index: int
    err_t_mm: float
    err_r_deg: float
    gt_speed_t_mm: float
    gt_speed_r_deg: float
    was_reset: bool = False
    failure: bool = False
    estimate: Optional[Pose] = field(default=None, repr=False, compare=False)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'frame_index': self.frame_index,
            'err_t_mm': self.err_t_mm,
            'err_r_deg': self.err_r_deg,
            'gt_speed_t_mm': self.gt_speed_t_mm,
            'gt_speed_r_deg': self.gt_speed_r_deg,
            'was_reset': self.was_reset,
            'failure': self.failure
        }


@dataclass
class EvalReport:
    """Result of evaluating one tracker on one sequence."""

    sequence_id: str
    scenario: 'ScenarioKind'
    tracker: str
    per_frame: List[FrameRecord]
    failures: int = 0
    config: EvalConfig = field(default_factory=EvalConfig)
    object_id: str = ''

    @property
    def aggregates(self) -> Dict[str, Any]:
        """Per-cell statistics of this report alone (see ``aggregate``)."""
        return aggregate([self], self.config.bin_set).to_dict()['rows']

    def to_dict(self) -> Dict[str, Any]:
        return {
            'sequence_id': self.sequence_id,
            'object_id': self.object_id,
            'scenario': self.scenario.to_dict(),
            'tracker': self.tracker,
            'failures': self.failures,
            'config': asdict(self.config),
            'per_frame': [r.to_dict() for r in self.per_frame]
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'EvalReport':
        try:
            return cls(
                sequence_id=str(data['sequence_id']),
                scenario=ScenarioKind.from_dict(data['scenario']),
                tracker=str(data['tracker']),
                per_frame=[FrameRecord(**r) for r in data['per_frame']],
                failures=int(data.get('failures', 0)),
                config=EvalConfig(**data.get('config', {})),
                object_id=str(data.get('object_id', ''))
            )
        except (KeyError, TypeError) as e:
            raise ValidationError(f"Invalid evaluation report: {e}")


# ==================== FAILURE RULE ====================

class FailureDetector:
    """
    Consecutive-violation counter.

    A frame violates when ``err_t > fail_t_mm`` or ``err_r > fail_r_deg``.
    ``step`` returns True on the violating frame that makes the run longer
    than ``fail_window`` frames; the counter then clears.
    """

    def __init__(self, cfg: EvalConfig):
        self.cfg = cfg
        self.run = 0
        self.failures = 0

    def step(self, err_t: float, err_r: float) -> bool:
        if err_t > self.cfg.fail_t_mm or err_r > self.cfg.fail_r_deg:
            self.run += 1
        else:
            self.run = 0
        if self.run > self.cfg.fail_window:
            self.failures += 1
            self.run = 0
            return True
        return False


def count_failures(errors: Iterable[Tuple[float, float]], cfg: EvalConfig = EvalConfig()) -> int:
    """Failures in an (err_t, err_r) stream, as counted during free-hard evaluation."""
    detector = FailureDetector(cfg)
    for err_t, err_r in errors:
        detector.step(err_t, err_r)
    return detector.failures


# ==================== PROTOCOLS ====================

def _check_sequence(seq: 'FrameSequence', family: str) -> None:
    if len(seq.frames) < 2:
        raise SequenceTooShortError(
            f"Sequence '{seq.sequence_id}' has {len(seq.frames)} frame(s); at least 2 are needed"
        )
    if seq.scenario.family != family:
        logger.warning("Evaluating %s sequence '%s' with the %s protocol",
                       seq.scenario.family, seq.sequence_id, family)
    for frame in seq.frames:
        if frame.gt_pose is None:
            raise ValidationError(f"Frame {frame.index} of '{seq.sequence_id}' has no ground-truth pose")


def _feed(tracker: Tracker, frame) -> Pose:
    return tracker.update(frame if tracker.reads_ground_truth else frame.observation())


def _gt_speed(seq: 'FrameSequence', i: int) -> Tuple[float, float]:
    return pose_errors(seq.frames[i - 1].gt_pose, seq.frames[i].gt_pose)


def eval_stability(seq: 'FrameSequence', tracker: Tracker, mesh: 'Mesh',
                   cfg: EvalConfig = EvalConfig()) -> EvalReport:
    """
    Jitter between consecutive estimated poses.

    The tracker is initialised at the ground truth of frame 0 (which counts
    as estimate 0) and never reset.

    Raises:
        SequenceTooShortError: fewer than 2 frames
    """
    _check_sequence(seq, 'stability')
    tracker.init(mesh, seq.frames[0].gt_pose)
    previous = tracker.current_pose
    records = []
    for i in range(1, len(seq.frames)):
        estimate = _feed(tracker, seq.frames[i])
        err_t, err_r = pose_errors(previous, estimate)
        speed_t, speed_r = _gt_speed(seq, i)
        records.append(FrameRecord(i, err_t, err_r, speed_t, speed_r, estimate=estimate))
        previous = estimate
    return EvalReport(seq.sequence_id, seq.scenario, tracker.name, records, 0, cfg, seq.object_id)


def _eval_tracking(seq: 'FrameSequence', tracker: Tracker, mesh: 'Mesh', cfg: EvalConfig,
                   periodic_reset: bool) -> EvalReport:
    tracker.init(mesh, seq.frames[0].gt_pose)
    detector = None if periodic_reset else FailureDetector(cfg)
    records = []
    for i in range(1, len(seq.frames)):
        frame = seq.frames[i]
        estimate = _feed(tracker, frame)
        err_t, err_r = pose_errors(frame.gt_pose, estimate)
        speed_t, speed_r = _gt_speed(seq, i)
        if detector is not None:
            failed = detector.step(err_t, err_r)
            reset = failed
        else:
            failed = False
            reset = i % cfg.reset_interval == 0
        if reset:
            tracker.reset(frame.gt_pose)
        if failed:
            logger.info("Tracking failure at frame %d of '%s'", i, seq.sequence_id)
        records.append(FrameRecord(i, err_t, err_r, speed_t, speed_r, reset, failed, estimate))
    failures = detector.failures if detector is not None else 0
    return EvalReport(seq.sequence_id, seq.scenario, tracker.name, records, failures, cfg, seq.object_id)


def eval_occlusion(seq: 'FrameSequence', tracker: Tracker, mesh: 'Mesh',
                   cfg: EvalConfig = EvalConfig()) -> EvalReport:
    """
    Error to ground truth with a ground-truth reset every ``reset_interval`` frames.

    Frame ``i`` is estimated from the tracker's previous state; when
    ``i % reset_interval == 0`` the tracker is then overwritten with the
    ground truth of frame ``i`` and the record is flagged.

    Raises:
        SequenceTooShortError: fewer than 2 frames
    """
    _check_sequence(seq, 'occlusion')
    return _eval_tracking(seq, tracker, mesh, cfg, periodic_reset=True)


def eval_interaction(seq: 'FrameSequence', tracker: Tracker, mesh: 'Mesh',
                     cfg: EvalConfig = EvalConfig()) -> EvalReport:
    """
    Error to ground truth as a function of the ground-truth speed.

    ``free_hard`` sequences use the failure rule instead of periodic resets.

    Raises:
        SequenceTooShortError: fewer than 2 frames
    """
    _check_sequence(seq, 'interaction')
    return _eval_tracking(seq, tracker, mesh, cfg,
                          periodic_reset=seq.scenario.variant != 'free_hard')


def evaluate_sequence(seq: 'FrameSequence', tracker: Tracker, mesh: 'Mesh',
                      cfg: EvalConfig = EvalConfig()) -> EvalReport:
    """Dispatch on the scenario family of ``seq``."""
    protocol = {
        'stability': eval_stability,
        'occlusion': eval_occlusion,
        'interaction': eval_interaction
    }[seq.scenario.family]
    report = protocol(seq, tracker, mesh, cfg)
    logger.info("Evaluated '%s' (%s) with %s: %d frames, %d failures",
                seq.sequence_id, seq.scenario.label, tracker.name, len(report.per_frame), report.failures)
    return report


# ==================== AGGREGATION ====================

@dataclass
class SummaryRow:
    """
    Statistics of one table cell.

    ``metric`` is ``t`` (mm), ``r`` (degrees) or ``fail`` (count in ``count``).
    """

    tracker: str
    family: str
    cell: str
    metric: str
    count: int
    mean: Optional[float] = None
    median: Optional[float] = None
    p95: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _stats(values: Sequence[float]) -> Tuple[float, float, float]:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(np.median(arr)), float(np.percentile(arr, 95))


def _bin_label(lo: float, hi: float) -> str:
    return f'({lo:g},{hi:g}]'


def _bin_of(value: float, edges: Sequence[float]) -> Optional[int]:
    """Index of the (lo, hi] bin holding ``value``; None past the top edge."""
    if value <= edges[0]:
        return 0
    idx = int(np.searchsorted(edges, value, side='left')) - 1
    return idx if idx < len(edges) - 1 else None


@dataclass
class Summary:
    """Aggregated table over several reports."""

    rows: List[SummaryRow]
    bin_set: BinSet

    def to_dict(self) -> Dict[str, Any]:
        return {'bins': self.bin_set.name, 'rows': [r.to_dict() for r in self.rows]}

    def to_csv(self) -> str:
        columns = ['tracker', 'family', 'cell', 'metric', 'count', 'mean', 'median', 'p95']
        buf = io.StringIO()
        buf.write(','.join(columns) + '\n')
        for row in self.rows:
            values = row.to_dict()
            buf.write(','.join('' if values[c] is None else
                               (f'{values[c]:.6f}' if isinstance(values[c], float) else str(values[c]))
                               for c in columns) + '\n')
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"{'tracker':<10} {'family':<12} {'cell':<22} {'metric':<6} {'n':>6} "
                 f"{'mean':>9} {'median':>9} {'p95':>9}"]
        for row in self.rows:
            fmt = [f'{v:9.3f}' if v is not None else f"{'-':>9}" for v in (row.mean, row.median, row.p95)]
            lines.append(f'{row.tracker:<10} {row.family:<12} {row.cell:<22} {row.metric:<6} '
                         f'{row.count:>6} {fmt[0]} {fmt[1]} {fmt[2]}')
        return '\n'.join(lines) + '\n'

    def write_dat(self, out_dir: Path) -> List[Path]:
        """
        gnuplot-ready interaction bin tables, one file per tracker and metric.

        Columns: bin_low bin_high count mean median p95 (empty bins absent).
        """
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        edges = {'t': self.bin_set.t_bins(), 'r': self.bin_set.r_bins()}
        for tracker in sorted({r.tracker for r in self.rows}):
            for metric in ('t', 'r'):
                rows = {r.cell: r for r in self.rows
                        if r.tracker == tracker and r.family == 'interaction' and r.metric == metric}
                lines = [f'# {tracker} interaction delta_{metric} by ground-truth speed ({self.bin_set.name} bins)',
                         '# bin_low bin_high count mean median p95']
                for lo, hi in edges[metric]:
                    row = rows.get(_bin_label(lo, hi))
                    if row is not None:
                        lines.append(f'{lo:g} {hi:g} {row.count} {row.mean:.6f} {row.median:.6f} {row.p95:.6f}')
                path = out_dir / f'{tracker}_interaction_{metric}.dat'
                path.write_text('\n'.join(lines) + '\n')
                written.append(path)
        return written


def aggregate(reports: Sequence[EvalReport], bin_set: Optional[BinSet] = None) -> Summary:
    """
    Merge reports into per-cell statistics.

    Cells: stability variant, occlusion percent, interaction speed bin
    (translation errors by translation speed, rotation errors by rotation
    speed, speeds above the top edge in an ``overflow`` cell) and the
    free-hard failure total. Frames are pooled across reports, so means are
    frame-weighted; reset frames are skipped and cells without frames are
    not emitted.

    Raises:
        ValidationError: no reports
    """
    if not reports:
        raise ValidationError("Nothing to aggregate: no reports given")
    bin_set = bin_set or reports[0].config.bin_set
    pools: Dict[Tuple[str, str, str, str], List[float]] = {}
    failures: Dict[str, int] = {}

    def add(key, value):
        pools.setdefault(key, []).append(value)

    t_bins, r_bins = bin_set.t_bins(), bin_set.r_bins()
    for report in sorted(reports, key=lambda r: (r.tracker, r.sequence_id)):
        sc = report.scenario
        if sc.family == 'interaction' and sc.variant == 'free_hard':
            failures[report.tracker] = failures.get(report.tracker, 0) + report.failures
        for rec in report.per_frame:
            if rec.was_reset:
                continue
            if sc.family == 'stability':
                cell = sc.variant
                add((report.tracker, sc.family, cell, 't'), rec.err_t_mm)
                add((report.tracker, sc.family, cell, 'r'), rec.err_r_deg)
            elif sc.family == 'occlusion':
                cell = f'{sc.percent}%'
                add((report.tracker, sc.family, cell, 't'), rec.err_t_mm)
                add((report.tracker, sc.family, cell, 'r'), rec.err_r_deg)
            else:
                bt = _bin_of(rec.gt_speed_t_mm, bin_set.t_edges_mm)
                br = _bin_of(rec.gt_speed_r_deg, bin_set.r_edges_deg)
                add((report.tracker, sc.family, 'overflow' if bt is None else _bin_label(*t_bins[bt]), 't'),
                    rec.err_t_mm)
                add((report.tracker, sc.family, 'overflow' if br is None else _bin_label(*r_bins[br]), 'r'),
                    rec.err_r_deg)

    order = {'stability': 0, 'occlusion': 1, 'interaction': 2}

    def cell_key(cell: str, family: str):
        if family == 'stability':
            return STABILITY_VARIANTS.index(cell) if cell in STABILITY_VARIANTS else 99
        if family == 'occlusion':
            return int(cell.rstrip('%'))
        if cell == 'overflow':
            return float('inf')
        return float(cell[1:].split(',')[0])

    rows = []
    for (tracker, family, cell, metric) in sorted(
            pools, key=lambda k: (k[0], order[k[1]], k[3], cell_key(k[2], k[1]))):
        values = pools[(tracker, family, cell, metric)]
        rows.append(SummaryRow(tracker, family, cell, metric, len(values), *_stats(values)))
    for tracker in sorted(failures):
        rows.append(SummaryRow(tracker, 'interaction', 'free_hard', 'fail', failures[tracker]))
    return Summary(rows, bin_set)
