"""
Unit Tests for Synthetic Sequence Generation

Tests trajectories, the occluder panel, reproducibility and the suite plan.
"""

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import tempfile
import unittest
from collections import Counter
from pathlib import Path

import numpy as np

from sixdof_eval.camera import Intrinsics
from sixdof_eval.dataset_io import load_manifest, validate_manifest
from sixdof_eval.exceptions import ValidationError
from sixdof_eval.harness import OCCLUSION_PERCENTS, ScenarioKind
from sixdof_eval.render import Mesh
from sixdof_eval.se3 import pose_errors
from sixdof_eval.synth_gen import (
    FRAME_PERIOD_MS,
    OccluderSpec,
    TrajectorySpec,
    generate_sequence,
    measure_occlusion,
    occluder_region,
    render_frame,
    suite_plan,
    trajectory_poses,
    write_suite
)

K = Intrinsics(262.5, 262.5, 160.0, 120.0, 320, 240)
K_FULL = Intrinsics(525.0, 525.0, 320.0, 240.0, 640, 480)
MESH = Mesh.box(120.0, 80.0, 60.0)


class TestTrajectories(unittest.TestCase):
    """Test ground-truth motion."""

    def test_static(self):
        """Test a static trajectory repeats one pose centred on the optical axis."""
        poses = trajectory_poses(MESH, TrajectorySpec('static', 5, 900.0))
        self.assertEqual(len(poses), 5)
        np.testing.assert_allclose(poses[0].transform_points(MESH.centroid()), [0.0, 0.0, 900.0], atol=1e-9)
        self.assertTrue(all(p.allclose(poses[0]) for p in poses))

    def test_turntable_step(self):
        """Test consecutive turntable poses differ by the step and keep the centre fixed."""
        poses = trajectory_poses(MESH, TrajectorySpec('turntable', 10, 1000.0, deg_per_frame=2.0,
                                                      view_euler_deg=(-10.0, 0.0, 0.0)))
        for a, b in zip(poses, poses[1:]):
            err_t, err_r = pose_errors(a, b)
            self.assertAlmostEqual(err_r, 2.0, delta=1e-6)
            self.assertAlmostEqual(err_t, 0.0, delta=1e-9)

    def test_smooth_random_speed(self):
        """Test smooth random motion stays within its speed limits."""
        spec = TrajectorySpec('smooth_random', 60, 1000.0, speed_t_mm_per_frame=8.0, speed_r_deg_per_frame=3.0,
                              seed=4)
        poses = trajectory_poses(MESH, spec)
        centres = np.array([p.transform_points(MESH.centroid()) for p in poses])
        steps = np.linalg.norm(np.diff(centres, axis=0), axis=1)
        self.assertTrue(np.all(steps <= 8.0 + 1e-9))
        self.assertTrue(np.all(steps >= 0.9 * 8.0 - 1e-9))
        for a, b in zip(poses, poses[1:]):
            self.assertLessEqual(pose_errors(a, b)[1], 3.0 + 1e-6)

    def test_smooth_random_seeded(self):
        """Test the motion seed fixes the trajectory."""
        spec = TrajectorySpec('smooth_random', 20, 1000.0, speed_t_mm_per_frame=5.0, seed=9)
        a, b = trajectory_poses(MESH, spec), trajectory_poses(MESH, spec)
        self.assertTrue(all(p.allclose(q) for p, q in zip(a, b)))

    def test_spec_validation(self):
        """Test too-short, unknown and negative-speed specs are rejected."""
        with self.assertRaises(ValidationError):
            TrajectorySpec('static', 1)
        with self.assertRaises(ValidationError):
            TrajectorySpec('orbit', 10)
        with self.assertRaises(ValidationError):
            TrajectorySpec('turntable', 10, deg_per_frame=-1.0)


class TestOccluder(unittest.TestCase):
    """Test the occluding panel."""

    def test_fraction_grid(self):
        """Test only the six occlusion levels are accepted."""
        with self.assertRaises(ValidationError):
            OccluderSpec(0.2)
        with self.assertRaises(ValidationError):
            OccluderSpec(0.3, 'diagonal')

    def test_panel_in_front(self):
        """Test the panel sits between the camera and the object."""
        pose = trajectory_poses(MESH, TrajectorySpec('static', 2, 900.0))[0]
        region, z_panel = occluder_region(MESH, pose, OccluderSpec(0.45), K)
        self.assertTrue(region.any())
        self.assertLess(z_panel, pose.transform_points(MESH.vertices)[:, 2].min())

    def test_zero_fraction_hides_nothing(self):
        """Test a 0% panel leaves the frame clean."""
        pose = trajectory_poses(MESH, TrajectorySpec('static', 2, 900.0))[0]
        depth = render_frame(MESH, pose, K, OccluderSpec(0.0), quantize=False)
        self.assertAlmostEqual(measure_occlusion(depth, MESH, pose, K), 0.0)

    def test_measured_fraction_matches_target(self):
        """Test every level and orientation hides its target fraction within 0.07."""
        spec = TrajectorySpec('static', 2, 800.0, view_euler_deg=(-10.0, 20.0, 0.0))
        pose = trajectory_poses(MESH, spec)[0]
        for percent in OCCLUSION_PERCENTS[1:]:
            for orientation in ('horizontal', 'vertical'):
                depth = render_frame(MESH, pose, K_FULL, OccluderSpec(percent / 100.0, orientation), quantize=False)
                measured = measure_occlusion(depth, MESH, pose, K_FULL)
                self.assertAlmostEqual(measured, percent / 100.0, delta=0.07, msg=f'{percent}% {orientation}')


class TestSequences(unittest.TestCase):
    """Test rendered sequences."""

    def test_timestamps_and_indices(self):
        """Test frames are 30 Hz and numbered from 0."""
        seq = generate_sequence(MESH, TrajectorySpec('static', 4, 900.0), None, 0.0, K)
        self.assertEqual([f.index for f in seq.frames], [0, 1, 2, 3])
        np.testing.assert_allclose(seq.timestamps_ms, np.arange(4) * FRAME_PERIOD_MS)

    def test_seed_reproducible_and_jobs_independent(self):
        """Test the same seed gives identical frames whatever the job count."""
        spec = TrajectorySpec('turntable', 5, 900.0, deg_per_frame=2.0)
        a = generate_sequence(MESH, spec, OccluderSpec(0.3), 2.0, K, seed=11)
        b = generate_sequence(MESH, spec, OccluderSpec(0.3), 2.0, K, seed=11, jobs=3)
        c = generate_sequence(MESH, spec, OccluderSpec(0.3), 2.0, K, seed=12)
        for fa, fb in zip(a.frames, b.frames):
            np.testing.assert_array_equal(fa.depth, fb.depth)
        self.assertFalse(np.array_equal(a.frames[0].depth, c.frames[0].depth))

    def test_quantized_noise(self):
        """Test noisy depth is whole millimetres scattered around the clean render."""
        spec = TrajectorySpec('static', 2, 900.0)
        clean = generate_sequence(MESH, spec, None, 0.0, K, quantize=False).frames[0].depth
        noisy = generate_sequence(MESH, spec, None, 2.0, K, seed=1).frames[0].depth
        valid = clean > 0
        np.testing.assert_array_equal(noisy, np.round(noisy))
        self.assertAlmostEqual(float(np.std(noisy[valid] - clean[valid])), 2.0, delta=0.3)
        self.assertFalse(noisy[~valid].any())

    def test_default_scenarios(self):
        """Test the scenario derived from the trajectory."""
        turntable = generate_sequence(MESH, TrajectorySpec('turntable', 2, deg_per_frame=1.0),
                                      OccluderSpec(0.6, 'vertical'), 0.0, K)
        self.assertEqual(turntable.scenario, ScenarioKind.occlusion(60, 'vertical'))
        static = generate_sequence(MESH, TrajectorySpec('static', 2), None, 0.0, K)
        self.assertEqual(static.scenario, ScenarioKind.stability('near'))

    def test_negative_noise(self):
        """Test a negative noise level is rejected."""
        with self.assertRaises(ValidationError):
            generate_sequence(MESH, TrajectorySpec('static', 2), None, -1.0, K)


class TestSuite(unittest.TestCase):
    """Test the per-object suite."""

    def test_plan_breakdown(self):
        """Test the plan holds 12 stability, 11 occlusion and 4 interaction sequences."""
        plan = suite_plan()
        self.assertEqual(len(plan), 27)
        self.assertEqual(Counter(item.scenario.family for item in plan),
                         {'stability': 12, 'occlusion': 11, 'interaction': 4})
        self.assertEqual(len({item.name for item in plan}), 27)
        self.assertEqual(len({item.seed for item in plan}), 27)

    def test_plan_depends_on_seed(self):
        """Test the master seed changes every sequence seed."""
        self.assertTrue(all(a.seed != b.seed for a, b in zip(suite_plan(0), suite_plan(1))))

    def test_write_suite(self):
        """Test a written suite validates against its manifest."""
        with tempfile.TemporaryDirectory() as tmp:
            manifest = write_suite(MESH, 'box', K, Path(tmp), seed=2, stability_length=2,
                                   occlusion_length=2, interaction_length=2)
            self.assertEqual(len(manifest.sequences), 27)
            self.assertEqual(validate_manifest(load_manifest(tmp)), [])
            self.assertTrue((Path(tmp) / 'box' / 'occlusion_45_vertical' / 'spec.json').is_file())


if __name__ == '__main__':
    unittest.main()
