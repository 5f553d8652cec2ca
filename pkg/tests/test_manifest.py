"""
Tests for run manifests
"""

import json
import os
import shutil
import tempfile
import unittest
from types import SimpleNamespace
from unittest.mock import patch

import pytest

from dymgnn.manifest import MANIFEST_NAME, RunManifest
from dymgnn.utils import file_digest
from dymgnn.version import version_string


@pytest.mark.unit
class TestRunManifest(unittest.TestCase):
    """Test manifest contents and writing"""

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        self.input_path = os.path.join(self.temp_dir, 'panel.csv')
        with open(self.input_path, 'w') as f:
            f.write('loan_id,period\nL1,2013-01\n')

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_inputs_and_outputs(self):
        """Test input digests and de-duplicated outputs"""
        manifest = RunManifest('build', config={'seed': '0'})
        manifest.add_input(self.input_path)
        manifest.add_input(os.path.join(self.temp_dir, 'absent.csv'))
        manifest.add_output('a.csv')
        manifest.add_output('a.csv')

        self.assertEqual(manifest.inputs, {self.input_path: file_digest(self.input_path)})
        self.assertEqual(manifest.outputs, ['a.csv'])

    def test_finish_ok(self):
        """Test a successful run"""
        manifest = RunManifest('synth')
        manifest.time('generate', 0.1234567891)
        manifest.finish()

        self.assertEqual(manifest.status, 'ok')
        self.assertEqual(manifest.failure, '')
        self.assertEqual(manifest.timings['generate'], 0.123457)
        self.assertGreaterEqual(manifest.timings['total'], 0.0)
        self.assertGreater(manifest.resources['peak_rss_mb'], 0.0)
        self.assertGreaterEqual(manifest.resources['cpu_seconds'], 0.0)

    def test_finish_failed(self):
        """Test the failure is recorded with its type"""
        manifest = RunManifest('train')
        manifest.finish(ValueError('bad window'))
        self.assertEqual(manifest.status, 'failed')
        self.assertEqual(manifest.failure, 'ValueError: bad window')

    def test_peak_rss_never_decreases(self):
        """Test the peak keeps the largest sample"""
        manifest = RunManifest('eval')
        manifest.resources['peak_rss_mb'] = 1e9
        manifest.sample_resources()
        self.assertEqual(manifest.resources['peak_rss_mb'], 1e9)

    def test_peak_rss_is_largest_sample(self):
        """Test a mid-run sample larger than the final one is the recorded peak"""
        manifest = RunManifest('train')
        mb = 1024.0 * 1024.0
        samples = [SimpleNamespace(rss=900 * mb), SimpleNamespace(rss=300 * mb)]
        with patch.object(manifest._process, 'memory_info', side_effect=samples):
            manifest.time('train', 1.0)
            manifest.finish()
        self.assertEqual(manifest.resources['peak_rss_mb'], 900.0)

    def test_outputs_are_sampled(self):
        manifest = RunManifest('build')
        with patch.object(manifest, 'sample_resources') as sample:
            manifest.add_output('windows')
            manifest.time('build', 0.5)
        self.assertEqual(sample.call_count, 2)

    def test_write(self):
        """Test the manifest is written as JSON"""
        manifest = RunManifest('explain', config={'samples': '50'})
        manifest.add_input(self.input_path)
        manifest.finish()
        path = manifest.write(self.temp_dir)

        self.assertEqual(path, os.path.join(self.temp_dir, MANIFEST_NAME))
        with open(path) as f:
            data = json.load(f)
        self.assertEqual(data['command'], 'explain')
        self.assertEqual(data['status'], 'ok')
        self.assertEqual(data['config'], {'samples': '50'})
        self.assertEqual(data['versions']['dymgnn'], version_string())
        self.assertIn(self.input_path, data['inputs'])
        self.assertNotIn('_started', data)


if __name__ == '__main__':
    unittest.main()
