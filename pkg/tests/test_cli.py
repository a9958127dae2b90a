"""
Unit Tests for the Command-Line Front End

Runs the commands end to end on a small synthetic dataset.
"""

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import io
import json
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import numpy as np

from sixdof_eval import __version__
from sixdof_eval.camera import Intrinsics
from sixdof_eval.cli import config_hash, build_parser, main
from sixdof_eval.dataset_io import (
    Sequence,
    load_sequence,
    read_json,
    read_pose_trace,
    save_mesh_ply,
    save_sequence,
    write_json
)
from sixdof_eval.marker_repair import MarkerSet
from sixdof_eval.render import Mesh
from sixdof_eval.synth_gen import TrajectorySpec, generate_sequence, write_suite

K = Intrinsics(262.5, 262.5, 160.0, 120.0, 320, 240)
MESH = Mesh.box(120.0, 80.0, 60.0)
ENV = {'SIXDOF_SEED': '', 'SIXDOF_JOBS': '1', 'SIXDOF_LOG_LEVEL': 'WARNING'}


def run(*argv):
    """Run the CLI; returns (exit code, stdout, stderr)."""
    out, err = io.StringIO(), io.StringIO()
    with patch.dict(os.environ, ENV), patch('sys.stdout', out), patch('sys.stderr', err), \
            patch('sixdof_eval.config.load_dotenv'):
        code = main([str(a) for a in argv])
    return code, out.getvalue(), err.getvalue()


class TestParser(unittest.TestCase):
    """Test argument handling and exit codes."""

    def test_no_command(self):
        """Test a missing command is a usage error."""
        self.assertEqual(run()[0], 2)

    def test_unknown_option(self):
        """Test an unknown flag is a usage error."""
        self.assertEqual(run('validate', '--dataset', '.', '--bogus')[0], 2)

    def test_version(self):
        """Test --version prints the version and succeeds."""
        code, out, _ = run('--version')
        self.assertEqual(code, 0)
        self.assertIn(__version__, out)

    def test_negative_noise_rejected(self):
        """Test a negative noise level is a usage error."""
        self.assertEqual(run('gen-sequence', '--mesh', 'm.ply', '--out', 'o', '--noise', '-1')[0], 2)

    def test_config_hash_ignores_jobs(self):
        """Test the job count does not change the configuration hash."""
        parser = build_parser()
        a = parser.parse_args(['validate', '--dataset', 'd', '--jobs', '1'])
        b = parser.parse_args(['validate', '--dataset', 'd', '--jobs', '8'])
        c = parser.parse_args(['validate', '--dataset', 'e'])
        self.assertEqual(config_hash(a, 0), config_hash(b, 0))
        self.assertNotEqual(config_hash(a, 0), config_hash(c, 0))
        self.assertNotEqual(config_hash(a, 0), config_hash(a, 1))

    def test_domain_error_exit_code(self):
        """Test a missing manifest exits with 1 and a message on stderr."""
        with tempfile.TemporaryDirectory() as tmp:
            code, _, err = run('validate', '--dataset', tmp)
        self.assertEqual(code, 1)
        self.assertIn('error:', err)

    def test_missing_input_file_exit_code(self):
        """Test a report input that does not exist exits with 1 instead of a traceback."""
        with tempfile.TemporaryDirectory() as tmp:
            missing = Path(tmp) / 'missing.json'
            code, _, err = run('report', '--in', missing)
        self.assertEqual(code, 1)
        self.assertIn('error:', err)
        self.assertIn('missing.json', err)


class TestCalibrationCommands(unittest.TestCase):
    """Test calibrate-sphere."""

    def test_sphere(self):
        """Test the fitted radius and centre are printed as JSON."""
        rng = np.random.default_rng(0)
        dirs = rng.normal(size=(50, 3))
        points = np.array([1.0, 2.0, 3.0]) + 50.0 * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'points.csv'
            np.savetxt(path, points, delimiter=',', header='x,y,z', comments='')
            code, out, _ = run('calibrate-sphere', '--points', path, '--seed', '5')
        self.assertEqual(code, 0)
        data = json.loads(out)
        self.assertAlmostEqual(data['sphere']['radius_mm'], 50.0, places=6)
        np.testing.assert_allclose(data['sphere']['center_mm'], [1.0, 2.0, 3.0], atol=1e-6)
        self.assertEqual(data['reproducibility']['seed'], 5)
        self.assertEqual(data['reproducibility']['version'], __version__)


class TestDatasetCommands(unittest.TestCase):
    """Test generation, validation, evaluation and reporting on one small dataset."""

    @classmethod
    def setUpClass(cls):
        cls._tmp = tempfile.TemporaryDirectory()
        cls.root = Path(cls._tmp.name)
        cls.dataset = cls.root / 'data'
        write_suite(MESH, 'box', K, cls.dataset, seed=1, stability_length=4, occlusion_length=4,
                    interaction_length=4)
        cls.intrinsics = write_json(cls.root / 'intrinsics.json', K.to_dict())

    @classmethod
    def tearDownClass(cls):
        cls._tmp.cleanup()

    def test_validate(self):
        """Test a generated dataset validates."""
        code, out, _ = run('validate', '--dataset', self.dataset, '--check-frames')
        self.assertEqual(code, 0)
        self.assertIn('1 objects, 27 sequences', out)

    def test_validate_reports_violations(self):
        """Test an incomplete dataset exits with 1 and lists the problems."""
        manifest = read_json(self.dataset / 'manifest.json')
        manifest['sequences'] = manifest['sequences'][1:]
        broken = write_json(self.root / 'broken' / 'manifest.json', manifest)
        code, _, err = run('validate', '--dataset', broken)
        self.assertEqual(code, 1)
        self.assertIn('11 stability sequences, expected 12', err)

    def test_eval_echo_stability(self):
        """Test the echo tracker has zero jitter and every output file is written."""
        out = self.root / 'echo' / 'report.json'
        code, stdout, _ = run('eval', '--scenario', 'stability', '--tracker', 'echo',
                              '--dataset', self.dataset, '--out', out)
        self.assertEqual(code, 0)
        data = read_json(out)
        self.assertEqual(len(data['reports']), 12)
        for row in data['summary']['rows']:
            self.assertLess(row['p95'], 1e-9)
        self.assertTrue(out.with_suffix('.csv').read_text().startswith('tracker,sequence_id,scenario,'))
        trace = read_pose_trace(out.with_name('report_trace.jsonl'))
        self.assertEqual(len(trace), 12)
        self.assertIn('echo', stdout)

    def test_eval_is_reproducible_across_jobs(self):
        """Test one and two workers give byte-identical reports."""
        a, b = self.root / 'j1' / 'r.json', self.root / 'j2' / 'r.json'
        args = ('eval', '--scenario', 'occlusion', '--tracker', 'frozen', '--dataset', self.dataset)
        self.assertEqual(run(*args, '--out', a, '--jobs', '1')[0], 0)
        self.assertEqual(run(*args, '--out', b, '--jobs', '2')[0], 0)
        self.assertEqual(a.read_bytes(), b.read_bytes())
        self.assertEqual(a.with_suffix('.csv').read_bytes(), b.with_suffix('.csv').read_bytes())

    def test_playback_replays_trace(self):
        """Test playing back the echo trace reproduces the echo errors."""
        echo = self.root / 'pb_echo' / 'r.json'
        run('eval', '--scenario', 'interaction', '--tracker', 'echo', '--dataset', self.dataset, '--out', echo)
        replay = self.root / 'pb' / 'r.json'
        code, _, _ = run('eval', '--scenario', 'interaction', '--tracker', 'playback', '--label', 'replay',
                         '--trace', echo.with_name('r_trace.jsonl'), '--dataset', self.dataset, '--out', replay)
        self.assertEqual(code, 0)
        for report in read_json(replay)['reports']:
            self.assertEqual(report['tracker'], 'replay')
            self.assertTrue(all(r['err_t_mm'] < 1e-9 for r in report['per_frame']))

    def test_playback_needs_trace(self):
        """Test playback without --trace is a domain error."""
        code, _, _ = run('eval', '--tracker', 'playback', '--dataset', self.dataset,
                         '--out', self.root / 'x' / 'r.json')
        self.assertEqual(code, 1)

    def test_report_formats(self):
        """Test report merges eval outputs as CSV and JSON."""
        first = self.root / 'rep' / 'frozen.json'
        run('eval', '--scenario', 'occlusion', '--tracker', 'frozen', '--dataset', self.dataset, '--out', first)
        code, out, _ = run('report', '--in', first, '--format', 'csv')
        self.assertEqual(code, 0)
        self.assertTrue(out.startswith('tracker,family,cell,metric,count,mean,median,p95\n'))
        self.assertIn('frozen,occlusion,75%,t', out)
        target = self.root / 'rep' / 'summary.json'
        self.assertEqual(run('report', '--in', first, '--format', 'json', '--out', target)[0], 0)
        self.assertEqual(read_json(target)['bins'], 'speed')

    def test_report_rejects_other_json(self):
        """Test a JSON file that is not a report is a domain error."""
        self.assertEqual(run('report', '--in', self.dataset / 'manifest.json')[0], 1)


class TestGenerationCommands(unittest.TestCase):
    """Test gen-sequence, gen-pairs and inpaint."""

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.root = Path(self._tmp.name)
        self.mesh = save_mesh_ply(MESH, self.root / 'box.ply')
        self.intrinsics = write_json(self.root / 'intrinsics.json', K.to_dict())

    def tearDown(self):
        self._tmp.cleanup()

    def test_gen_sequence(self):
        """Test a rendered sequence is written with its generator parameters."""
        out = self.root / 'turn'
        code, _, _ = run('gen-sequence', '--mesh', self.mesh, '--out', out, '--kind', 'turntable',
                         '--length', '3', '--deg-per-frame', '2', '--occluder', '0.3',
                         '--intrinsics', self.intrinsics, '--seed', '4')
        self.assertEqual(code, 0)
        seq = load_sequence(out)
        self.assertEqual(len(seq), 3)
        self.assertEqual(seq.scenario.label, 'occlusion/30/horizontal')
        spec = read_json(out / 'spec.json')
        self.assertEqual(spec['trajectory']['deg_per_frame'], 2.0)
        self.assertEqual(spec['reproducibility']['seed'], 4)

    def test_gen_sequence_same_seed_same_bytes(self):
        """Test regenerating with the same seed gives identical depth files."""
        for name in ('a', 'b'):
            run('gen-sequence', '--mesh', self.mesh, '--out', self.root / name, '--length', '2',
                '--intrinsics', self.intrinsics, '--seed', '9')
        for frame in ('000000.png', '000001.png'):
            self.assertEqual((self.root / 'a' / 'depth' / frame).read_bytes(),
                             (self.root / 'b' / 'depth' / frame).read_bytes())

    def test_gen_pairs(self):
        """Test pairs and crops are streamed to disk."""
        out = self.root / 'pairs'
        code, _, _ = run('gen-pairs', '--n', '4', '--mesh', self.mesh, '--intrinsics', self.intrinsics,
                         '--distance', '700', '--render', '--out', out)
        self.assertEqual(code, 0)
        lines = (out / 'pairs.jsonl').read_text().splitlines()
        self.assertEqual([json.loads(line)['index'] for line in lines], [0, 1, 2, 3])
        self.assertTrue((out / 'crops' / '000003_gt.png').is_file())
        self.assertEqual(read_json(out / 'manifest.json')['n'], 4)

    def test_gen_pairs_render_needs_mesh(self):
        """Test --render without --mesh is a domain error."""
        self.assertEqual(run('gen-pairs', '--n', '2', '--render', '--out', self.root / 'p')[0], 1)

    def test_inpaint(self):
        """Test inpainting writes a repaired sequence and its report."""
        spec = TrajectorySpec('static', 2, 800.0, view_euler_deg=(0.0, 0.0, 0.0))
        seq = generate_sequence(MESH, spec, None, 0.0, K)
        markers = MarkerSet([[0.0, 0.0, -30.0], [20.0, 10.0, -30.0]])
        seq = Sequence(seq.frames, seq.scenario, seq.object_id, K, markers, 'box_static')
        save_sequence(seq, self.root / 'seq')
        code, _, _ = run('inpaint', '--sequence', self.root / 'seq', '--mesh', self.mesh, '--sigma', '0')
        self.assertEqual(code, 0)
        out = self.root / 'seq_repaired'
        report = read_json(out / 'repair_report.json')
        self.assertEqual(report['frames'], 2)
        self.assertEqual(report['report']['markers_patched'], 4)
        repaired = load_sequence(out)
        np.testing.assert_array_equal(repaired.frames[0].depth, seq.frames[0].depth)

    def test_inpaint_needs_markers(self):
        """Test a sequence without markers and no --markers is a domain error."""
        seq = generate_sequence(MESH, TrajectorySpec('static', 2, 800.0), None, 0.0, K)
        save_sequence(seq, self.root / 'seq')
        self.assertEqual(run('inpaint', '--sequence', self.root / 'seq', '--mesh', self.mesh)[0], 1)


if __name__ == '__main__':
    unittest.main()
