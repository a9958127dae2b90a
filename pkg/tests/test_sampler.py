"""
Unit Tests for Pose-Perturbation Sampling

Tests the direction sampler, both perturbation modes, the label convention
and the rendered crops.
"""

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import inspect
import itertools
import time
import unittest

import numpy as np
from scipy import stats

from sixdof_eval.camera import Intrinsics
from sixdof_eval.exceptions import ValidationError
from sixdof_eval.render import Mesh
from sixdof_eval.sampler import (
    CROP_SIZE_PX,
    PerturbationConfig,
    apply_label,
    crop_depth,
    default_base_poses,
    generate_pairs,
    manifest_record,
    pose_label,
    sample_direction,
    sample_perturbation
)
from sixdof_eval.se3 import Pose, delta_R, rot_x

K = Intrinsics(525.0, 525.0, 320.0, 240.0, 640, 480)
MESH = Mesh.box(100.0, 60.0, 40.0)
BASE = [Pose(rot_x(20.0), [0.0, 0.0, 700.0])]


class TestDirections(unittest.TestCase):
    """Test uniform directions on the sphere."""

    @classmethod
    def setUpClass(cls):
        cls.dirs = sample_direction(np.random.default_rng(0), size=1_000_000)

    def test_unit_length(self):
        """Test every direction has unit length."""
        np.testing.assert_allclose(np.linalg.norm(self.dirs, axis=1), 1.0, atol=1e-12)

    def test_octants_balanced(self):
        """Test each of the 8 octants holds 1/8 of 10^6 samples within 0.003."""
        codes = (self.dirs > 0).astype(int) @ np.array([1, 2, 4])
        fractions = np.bincount(codes, minlength=8) / len(self.dirs)
        np.testing.assert_allclose(fractions, 0.125, atol=0.003)

    def test_mean_direction_near_zero(self):
        """Test the mean of 10^6 directions has norm below 0.01."""
        self.assertLess(float(np.linalg.norm(self.dirs.mean(axis=0))), 0.01)

    def test_z_uniform(self):
        """Test the z component is uniform on [-1, 1]."""
        result = stats.kstest(self.dirs[:50000, 2], 'uniform', args=(-1.0, 2.0))
        self.assertGreater(result.pvalue, 0.001)

    def test_azimuth_uniform(self):
        """Test the azimuth histogram passes a chi-square test."""
        azimuth = np.arctan2(self.dirs[:, 1], self.dirs[:, 0])
        counts, _ = np.histogram(azimuth, bins=36, range=(-np.pi, np.pi))
        self.assertGreater(stats.chisquare(counts).pvalue, 0.001)

    def test_forced_pole(self):
        """Test x = 1 gives the +z pole for any azimuth."""
        rng = np.random.default_rng(1)
        np.testing.assert_allclose(sample_direction(rng, x=1.0), [0.0, 0.0, 1.0], atol=1e-12)
        np.testing.assert_allclose(sample_direction(rng, x=-1.0, theta=0.3), [0.0, 0.0, -1.0], atol=1e-12)


class TestPerturbations(unittest.TestCase):
    """Test both sampling modes."""

    def test_spherical_magnitudes(self):
        """Test translation and rotation magnitudes follow half-normal laws."""
        cfg = PerturbationConfig(30.0, 15.0, 'spherical')
        rng = np.random.default_rng(2)
        deltas = [sample_perturbation(cfg, rng) for _ in range(5000)]
        t = np.array([np.linalg.norm(d.translation) for d in deltas])
        r = np.array([delta_R(np.eye(3), d.rotation) for d in deltas])
        self.assertGreater(stats.kstest(t, 'halfnorm', args=(0.0, 30.0)).pvalue, 0.001)
        self.assertGreater(stats.kstest(r, 'halfnorm', args=(0.0, 15.0)).pvalue, 0.001)

    def test_spherical_translation_magnitude_large_sample(self):
        """Test 50000 translation magnitudes against the half-normal law."""
        cfg = PerturbationConfig(30.0, 15.0, 'spherical')
        rng = np.random.default_rng(13)
        t = np.array([np.linalg.norm(sample_perturbation(cfg, rng).translation) for _ in range(50000)])
        self.assertGreater(stats.kstest(t, 'halfnorm', args=(0.0, 30.0)).pvalue, 0.001)
        self.assertAlmostEqual(float(np.median(t)), 30.0 * stats.halfnorm.ppf(0.5), delta=0.5)

    def test_uniform_component_histograms(self):
        """Test each of the six label components is uniform over its half-width."""
        cfg = PerturbationConfig(10.0, 5.0, 'uniform_component')
        pairs = generate_pairs(None, BASE, cfg, 20000, np.random.default_rng(14))
        labels = np.array([p.label for p in pairs])
        for column, half in zip(range(6), (10.0, 10.0, 10.0, 5.0, 5.0, 5.0)):
            counts, _ = np.histogram(labels[:, column], bins=20, range=(-half, half))
            self.assertEqual(counts.sum(), len(labels))
            self.assertGreater(stats.chisquare(counts).pvalue, 1e-4, msg=f"component {column}")

    def test_uniform_component_bounds(self):
        """Test every component stays inside its half-width."""
        cfg = PerturbationConfig(10.0, 5.0, 'uniform_component')
        pairs = list(generate_pairs(None, BASE, cfg, 2000, np.random.default_rng(3)))
        labels = np.array([p.label for p in pairs])
        self.assertTrue(np.all(np.abs(labels[:, :3]) <= 10.0))
        self.assertTrue(np.all(np.abs(labels[:, 3:]) <= 5.0 + 1e-9))
        self.assertGreater(np.abs(labels[:, :3]).max(), 9.0)

    def test_zero_scales(self):
        """Test zero scales leave the prediction unchanged."""
        pair = next(generate_pairs(None, BASE, PerturbationConfig(0.0, 0.0), 1, np.random.default_rng(4)))
        self.assertTrue(pair.pose_gt.allclose(pair.pose_pred))
        np.testing.assert_allclose(pair.label, 0.0, atol=1e-12)

    def test_config_validation(self):
        """Test negative scales and unknown modes are rejected."""
        with self.assertRaises(ValidationError):
            PerturbationConfig(-1.0, 5.0)
        with self.assertRaises(ValidationError):
            PerturbationConfig(1.0, 5.0, 'gaussian')


class TestLabels(unittest.TestCase):
    """Test the label convention R_gt = R_pred @ R_d, t_gt = t_pred + t_d."""

    def test_label_reconstructs_ground_truth(self):
        """Test applying each label to its prediction gives the ground truth."""
        rng = np.random.default_rng(5)
        bases = default_base_poses(16, 800.0, rng)
        for pair in generate_pairs(None, bases, PerturbationConfig(30.0, 15.0), 1000, rng):
            self.assertTrue(apply_label(pair.pose_pred, pair.label).allclose(pair.pose_gt, atol=1e-6))

    def test_pose_label_matches_sampled_label(self):
        """Test the label recovered from the two poses equals the stored one."""
        rng = np.random.default_rng(6)
        for pair in generate_pairs(None, BASE, PerturbationConfig(20.0, 10.0, 'uniform_component'), 500, rng):
            np.testing.assert_allclose(pose_label(pair.pose_pred, pair.pose_gt), pair.label, atol=1e-6)

    def test_rotation_composes_on_the_right(self):
        """Test the perturbation acts in the object frame."""
        pred = Pose(rot_x(90.0), np.zeros(3))
        gt = apply_label(pred, [0, 0, 0, 0, 0, 30.0])
        np.testing.assert_allclose(gt.rotation, pred.rotation @ np.array(
            [[np.cos(np.radians(30)), -np.sin(np.radians(30)), 0.0],
             [np.sin(np.radians(30)), np.cos(np.radians(30)), 0.0],
             [0.0, 0.0, 1.0]]), atol=1e-12)

    def test_label_shape(self):
        """Test a label must have six values."""
        with self.assertRaises(ValidationError):
            apply_label(BASE[0], [1.0, 2.0, 3.0])


class TestPairStream(unittest.TestCase):
    """Test the pair generator."""

    def test_is_lazy(self):
        """Test pairs are streamed, not built up front."""
        stream = generate_pairs(None, BASE, PerturbationConfig(), 200_000, np.random.default_rng(7))
        self.assertTrue(inspect.isgenerator(stream))
        self.assertEqual(sum(1 for _ in itertools.islice(stream, 100)), 100)

    def test_streams_full_run(self):
        """Test all 200000 pairs of a training run stream through in bounded time."""
        start = time.perf_counter()
        count, largest = 0, 0.0
        for pair in generate_pairs(None, BASE, PerturbationConfig(), 200_000, np.random.default_rng(15)):
            count += 1
            largest = max(largest, abs(float(pair.label[0])))
        self.assertEqual(count, 200_000)
        self.assertGreater(largest, 0.0)
        self.assertLess(time.perf_counter() - start, 180.0)

    def test_cycles_base_poses(self):
        """Test pair i uses base pose i mod len(bases)."""
        bases = default_base_poses(3, 900.0, np.random.default_rng(8))
        pairs = list(generate_pairs(None, bases, PerturbationConfig(), 7, np.random.default_rng(9)))
        for i, pair in enumerate(pairs):
            self.assertIs(pair.pose_pred, bases[i % 3])

    def test_deterministic(self):
        """Test the same seed gives the same pairs."""
        a = [p.to_dict() for p in generate_pairs(None, BASE, PerturbationConfig(), 50, np.random.default_rng(10))]
        b = [p.to_dict() for p in generate_pairs(None, BASE, PerturbationConfig(), 50, np.random.default_rng(10))]
        self.assertEqual(a, b)

    def test_invalid_arguments(self):
        """Test n < 1, no base poses and rendering without a mesh are rejected."""
        rng = np.random.default_rng(11)
        with self.assertRaises(ValidationError):
            next(generate_pairs(None, BASE, PerturbationConfig(), 0, rng))
        with self.assertRaises(ValidationError):
            next(generate_pairs(None, [], PerturbationConfig(), 5, rng))
        with self.assertRaises(ValidationError):
            next(generate_pairs(None, BASE, PerturbationConfig(), 5, rng, K, render=True))

    def test_rendered_crops(self):
        """Test both crops share the predicted window and differ only by the perturbation."""
        cfg = PerturbationConfig(0.0, 0.0)
        pair = next(generate_pairs(MESH, BASE, cfg, 1, np.random.default_rng(12), K, render=True))
        self.assertEqual(pair.crop_pred.shape, (CROP_SIZE_PX, CROP_SIZE_PX))
        np.testing.assert_array_equal(pair.crop_pred, pair.crop_gt)
        center = pair.crop_pred[CROP_SIZE_PX // 2, CROP_SIZE_PX // 2]
        self.assertGreater(center, 600.0)
        self.assertLess(center, 800.0)

    def test_crop_behind_camera(self):
        """Test a crop around a point behind the camera is empty."""
        crop = crop_depth(np.ones(K.shape, dtype=np.float32), Pose.from_translation(0, 0, -500),
                          np.zeros(3), 100.0, K)
        self.assertFalse(crop.any())

    def test_manifest_record(self):
        """Test the stream header records the sigma convention."""
        record = manifest_record(PerturbationConfig(mode='uniform_component'), 3, 100, False)
        self.assertEqual(record['sigma_convention'], 'half-width')
        self.assertEqual(record['perturbation']['mode'], 'uniform_component')


if __name__ == '__main__':
    unittest.main()
