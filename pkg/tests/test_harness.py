"""
Unit Tests for the Evaluation Harness

Tests the three protocols, the reset and failure rules, and the aggregation
into speed bins.
"""

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import dataclasses
import tempfile
import unittest
from pathlib import Path

import numpy as np

from sixdof_eval.camera import Intrinsics
from sixdof_eval.exceptions import SequenceTooShortError, ValidationError
from sixdof_eval.harness import (
    SPEED_BINS,
    EvalConfig,
    EvalReport,
    FailureDetector,
    FrameRecord,
    ScenarioKind,
    aggregate,
    count_failures,
    eval_interaction,
    eval_occlusion,
    eval_stability,
    evaluate_sequence
)
from sixdof_eval.render import Mesh
from sixdof_eval.synth_gen import TrajectorySpec, generate_sequence
from sixdof_eval.tracking import EchoTracker, FrozenTracker, IcpTracker

K_SMALL = Intrinsics(262.5, 262.5, 160.0, 120.0, 320, 240)
K = Intrinsics(525.0, 525.0, 320.0, 240.0, 640, 480)
MESH = Mesh.box(120.0, 80.0, 60.0)
VIEW = (-25.0, 30.0, 0.0)


def turntable(length, deg, scenario, k=K_SMALL, noise=0.0):
    spec = TrajectorySpec('turntable', length, 800.0, deg_per_frame=deg, view_euler_deg=VIEW)
    return generate_sequence(MESH, spec, None, noise, k, scenario=scenario, quantize=noise > 0)


def static(length, k=K_SMALL, noise=0.0, seed=0):
    spec = TrajectorySpec('static', length, 800.0, view_euler_deg=VIEW)
    return generate_sequence(MESH, spec, None, noise, k, seed=seed, scenario=ScenarioKind.stability('near'))


def record(i, err_t, err_r, speed_t, speed_r, reset=False):
    return FrameRecord(i, err_t, err_r, speed_t, speed_r, reset)


class TestScenarioKind(unittest.TestCase):
    """Test scenario annotations."""

    def test_labels_parse_back(self):
        """Test parse inverts label for every family."""
        for kind in (ScenarioKind.stability('far'), ScenarioKind.occlusion(45, 'vertical'),
                     ScenarioKind.interaction('free_hard')):
            self.assertEqual(ScenarioKind.parse(kind.label), kind)

    def test_dict_round_trip(self):
        """Test the JSON form restores the scenario."""
        kind = ScenarioKind.occlusion(30)
        self.assertEqual(ScenarioKind.from_dict(kind.to_dict()), kind)

    def test_invalid_percent(self):
        """Test an occlusion level outside the grid is rejected."""
        with self.assertRaises(ValidationError):
            ScenarioKind.occlusion(20)

    def test_invalid_variant(self):
        """Test an unknown variant is rejected."""
        with self.assertRaises(ValidationError):
            ScenarioKind.interaction('juggling')

    def test_unparseable_label(self):
        """Test a malformed label is rejected."""
        with self.assertRaises(ValidationError):
            ScenarioKind.parse('occlusion')


class TestFailureRule(unittest.TestCase):
    """Test the consecutive-violation failure counter."""

    def test_seven_violations_are_not_a_failure(self):
        """Test a run of exactly fail_window violations does not fail."""
        self.assertEqual(count_failures([(31.0, 0.0)] * 7), 0)

    def test_eighth_violation_fails(self):
        """Test the frame that makes the run longer than 7 is the failure."""
        detector = FailureDetector(EvalConfig())
        flags = [detector.step(0.0, 25.0) for _ in range(8)]
        self.assertEqual(flags, [False] * 7 + [True])

    def test_counter_clears_after_failure(self):
        """Test 16 consecutive violations give two failures."""
        self.assertEqual(count_failures([(50.0, 50.0)] * 16), 2)

    def test_good_frame_breaks_run(self):
        """Test a frame under both thresholds restarts the run."""
        stream = [(40.0, 0.0)] * 7 + [(1.0, 1.0)] + [(40.0, 0.0)] * 7
        self.assertEqual(count_failures(stream), 0)

    def test_thresholds_are_strict(self):
        """Test errors equal to the thresholds are not violations."""
        self.assertEqual(count_failures([(30.0, 20.0)] * 20), 0)

    def test_config_validation(self):
        """Test invalid protocol constants are rejected."""
        with self.assertRaises(ValidationError):
            EvalConfig(reset_interval=0)
        with self.assertRaises(ValidationError):
            EvalConfig(bins='log')


class TestStability(unittest.TestCase):
    """Test the stability protocol."""

    def test_echo_has_zero_jitter(self):
        """Test echo on a static sequence reports zero jitter everywhere."""
        report = eval_stability(static(10), EchoTracker(), MESH)
        self.assertEqual(len(report.per_frame), 9)
        self.assertTrue(all(r.err_t_mm == 0.0 and r.err_r_deg < 1e-9 for r in report.per_frame))
        self.assertEqual(report.failures, 0)

    def test_frozen_has_zero_jitter(self):
        """Test a tracker that never moves has zero jitter."""
        report = eval_stability(static(5), FrozenTracker(), MESH)
        self.assertTrue(all(r.err_t_mm == 0.0 for r in report.per_frame))

    def test_no_resets(self):
        """Test stability never resets."""
        report = eval_stability(static(20), EchoTracker(), MESH)
        self.assertFalse(any(r.was_reset for r in report.per_frame))

    def test_single_frame(self):
        """Test a one-frame sequence is too short."""
        seq = static(2)
        with self.assertRaises(SequenceTooShortError):
            eval_stability(dataclasses.replace(seq, frames=seq.frames[:1]), EchoTracker(), MESH)

    def test_icp_jitter_on_noisy_static(self):
        """Test ICP jitter under 2 mm sensor noise stays below 1 mm and 0.5 degrees."""
        report = eval_stability(static(10, K, noise=2.0, seed=3), IcpTracker(), MESH)
        self.assertLess(np.median([r.err_t_mm for r in report.per_frame]), 1.0)
        self.assertLess(np.median([r.err_r_deg for r in report.per_frame]), 0.5)


class TestOcclusion(unittest.TestCase):
    """Test the periodic-reset protocol."""

    def test_frozen_drift_and_resets(self):
        """Test the frozen error grows 2 degrees per frame and restarts after each reset."""
        seq = turntable(35, 2.0, ScenarioKind.occlusion(0))
        report = eval_occlusion(seq, FrozenTracker(), MESH)
        by_index = {r.frame_index: r for r in report.per_frame}
        self.assertAlmostEqual(by_index[14].err_r_deg, 28.0, delta=1e-6)
        self.assertAlmostEqual(by_index[15].err_r_deg, 30.0, delta=1e-6)
        self.assertTrue(by_index[15].was_reset)
        self.assertAlmostEqual(by_index[16].err_r_deg, 2.0, delta=1e-6)
        self.assertTrue(by_index[30].was_reset)
        self.assertEqual([r.frame_index for r in report.per_frame if r.was_reset], [15, 30])

    def test_reset_frames_left_out_of_aggregates(self):
        """Test the flagged frames are not counted."""
        seq = turntable(31, 2.0, ScenarioKind.occlusion(0))
        report = eval_occlusion(seq, FrozenTracker(), MESH)
        row = next(r for r in aggregate([report]).rows if r.metric == 'r')
        self.assertEqual(row.cell, '0%')
        self.assertEqual(row.count, 28)

    def test_icp_turntable_accuracy(self):
        """Test ICP on a noiseless 1 degree/frame turntable stays under 5 mm and 3 degrees."""
        seq = turntable(31, 1.0, ScenarioKind.occlusion(0), k=K)
        report = eval_occlusion(seq, IcpTracker(), MESH)
        self.assertLess(np.mean([r.err_t_mm for r in report.per_frame]), 5.0)
        self.assertLess(np.mean([r.err_r_deg for r in report.per_frame]), 3.0)


class TestInteraction(unittest.TestCase):
    """Test the interaction protocol and the free-hard failure rule."""

    def test_free_hard_counts_failures(self):
        """Test frozen on a 5 degree/frame motion fails at frames 12 and 24."""
        seq = turntable(30, 5.0, ScenarioKind.interaction('free_hard'))
        report = eval_interaction(seq, FrozenTracker(), MESH)
        self.assertEqual(report.failures, 2)
        self.assertEqual([r.frame_index for r in report.per_frame if r.failure], [12, 24])
        self.assertEqual([r.frame_index for r in report.per_frame if r.was_reset], [12, 24])

    def test_slow_variants_reset_periodically(self):
        """Test non-hard variants reset every 15 frames and never count failures."""
        seq = turntable(30, 5.0, ScenarioKind.interaction('rotation_only'))
        report = eval_interaction(seq, FrozenTracker(), MESH)
        self.assertEqual(report.failures, 0)
        self.assertEqual([r.frame_index for r in report.per_frame if r.was_reset], [15])

    def test_records_ground_truth_speed(self):
        """Test each record carries the inter-frame ground-truth speed."""
        seq = turntable(5, 3.0, ScenarioKind.interaction('rotation_only'))
        report = evaluate_sequence(seq, EchoTracker(), MESH)
        for r in report.per_frame:
            self.assertAlmostEqual(r.gt_speed_r_deg, 3.0, delta=1e-6)
            self.assertAlmostEqual(r.gt_speed_t_mm, 0.0, delta=1e-9)


class TestAggregation(unittest.TestCase):
    """Test per-cell statistics."""

    def interaction_report(self, records, tracker='icp', variant='free_slow', failures=0):
        return EvalReport('seq', ScenarioKind.interaction(variant), tracker, records, failures)

    def test_bin_edges(self):
        """Test speed 0 and an exact edge land in the lower bin, larger speeds overflow."""
        report = self.interaction_report([
            record(1, 1.0, 1.0, 0.0, 0.0),
            record(2, 2.0, 2.0, 10.0, 4.0),
            record(3, 3.0, 3.0, 10.5, 4.5),
            record(4, 4.0, 4.0, 45.0, 20.0)
        ])
        cells = {(r.metric, r.cell): r for r in aggregate([report], SPEED_BINS).rows}
        self.assertEqual(cells[('t', '(0,10]')].count, 2)
        self.assertEqual(cells[('t', '(10,20]')].count, 1)
        self.assertEqual(cells[('t', 'overflow')].count, 1)
        self.assertEqual(cells[('r', '(0,4]')].count, 2)
        self.assertEqual(cells[('r', 'overflow')].count, 1)

    def test_statistics(self):
        """Test mean, median and p95 of a cell."""
        report = EvalReport('s', ScenarioKind.stability('near'), 'icp',
                            [record(i, float(i), 0.0, 0.0, 0.0) for i in range(1, 101)])
        row = next(r for r in aggregate([report]).rows if r.metric == 't')
        self.assertEqual(row.count, 100)
        self.assertAlmostEqual(row.mean, 50.5)
        self.assertAlmostEqual(row.median, 50.5)
        self.assertAlmostEqual(row.p95, float(np.percentile(np.arange(1, 101), 95)))

    def test_frames_pool_across_reports(self):
        """Test means are weighted by frames, not by sequences."""
        a = EvalReport('a', ScenarioKind.stability('near'), 'icp', [record(1, 1.0, 0.0, 0, 0)])
        b = EvalReport('b', ScenarioKind.stability('near'), 'icp', [record(i, 4.0, 0.0, 0, 0) for i in range(3)])
        row = next(r for r in aggregate([a, b]).rows if r.metric == 't')
        self.assertAlmostEqual(row.mean, 13.0 / 4.0)

    def test_failure_totals(self):
        """Test free-hard failures are summed per tracker."""
        reports = [self.interaction_report([record(1, 0, 0, 0, 0)], variant='free_hard', failures=n)
                   for n in (2, 3)]
        row = next(r for r in aggregate(reports).rows if r.metric == 'fail')
        self.assertEqual((row.cell, row.count), ('free_hard', 5))

    def test_empty(self):
        """Test aggregating nothing is rejected."""
        with self.assertRaises(ValidationError):
            aggregate([])

    def test_report_round_trip(self):
        """Test a report survives its JSON form."""
        report = self.interaction_report([record(1, 1.5, 0.5, 3.0, 1.0, True)], failures=1)
        back = EvalReport.from_dict(report.to_dict())
        self.assertEqual(back.per_frame, report.per_frame)
        self.assertEqual(back.scenario, report.scenario)
        self.assertEqual(back.failures, 1)

    def test_csv_and_dat(self):
        """Test the CSV header and the gnuplot tables."""
        report = self.interaction_report([record(1, 1.0, 1.0, 5.0, 2.0)])
        summary = aggregate([report])
        self.assertTrue(summary.to_csv().startswith('tracker,family,cell,metric,count,mean,median,p95\n'))
        self.assertIn('(0,10]', summary.to_text())
        with tempfile.TemporaryDirectory() as tmp:
            paths = summary.write_dat(Path(tmp))
            self.assertEqual(sorted(p.name for p in paths), ['icp_interaction_r.dat', 'icp_interaction_t.dat'])
            lines = (Path(tmp) / 'icp_interaction_t.dat').read_text().splitlines()
            self.assertEqual(lines[-1], '0 10 1 1.000000 1.000000 1.000000')


if __name__ == '__main__':
    unittest.main()
