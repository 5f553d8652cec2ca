"""
End-to-end tests for the dymgnn command line
"""

import json
import logging
import os
import shutil
import tempfile
import unittest
from unittest.mock import patch

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

from dymgnn.cli import (
    CHECKPOINT_FILE,
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_LOCKED,
    RESOLVED_CONFIG,
    cli,
)
from dymgnn.lock_manager import RunLockManager
from dymgnn.manifest import MANIFEST_NAME
from dymgnn.utils import shift_period

CONFIG_TEMPLATE = """\
[DEFAULT]
output_root = {root}
ledger_url = sqlite:///{root}/runs.db
log_level = WARNING

[synth]
n_loans = 120
months = 8
n_areas = 5
n_companies = 3
base_rate = 0.2
horizon = 6
seed = 1

[build]
input = synth/panel.csv
window_len = 3
horizon = 6

[train]
train_data = windows
model = gcn-lstm-att
embedding_size = 4
epochs = 3
early_stop = 2
learning_rate = 0.01
dropout = 0.0

[eval]
checkpoints = model
data = windows
resamples = 20

[explain]
checkpoint = model
data = windows
samples = 2
top_k = 2
"""


def read_manifest(directory):
    with open(os.path.join(directory, MANIFEST_NAME)) as f:
        return json.load(f)


class CliTestCase(unittest.TestCase):
    """Temporary output root and config file shared by the CLI tests"""

    def setUp(self):
        self.root = tempfile.mkdtemp()
        self.config_path = os.path.join(self.root, 'dymgnn.conf')
        with open(self.config_path, 'w') as f:
            f.write(CONFIG_TEMPLATE.format(root=self.root))
        self.env = patch.dict(os.environ, {}, clear=False)
        self.env.start()
        for key in ('DYMGNN_OUTPUT_ROOT', 'DYMGNN_LOG_LEVEL', 'DYMGNN_LOG_FORMAT',
                    'DYMGNN_LEDGER_URL', 'DYMGNN_N_JOBS', 'DYMGNN_CONFIG'):
            os.environ.pop(key, None)
        self.saved_handlers = list(logging.getLogger().handlers)
        self.saved_level = logging.getLogger().level
        self.runner = CliRunner()

    def tearDown(self):
        root = logging.getLogger()
        for handler in list(root.handlers):
            root.removeHandler(handler)
        for handler in self.saved_handlers:
            root.addHandler(handler)
        root.setLevel(self.saved_level)
        self.env.stop()
        shutil.rmtree(self.root)

    def invoke(self, *args):
        return self.runner.invoke(cli, ['--config', self.config_path] + list(args))

    def path(self, *parts):
        return os.path.join(self.root, *parts)


@pytest.mark.integration
class TestPipeline(CliTestCase):
    """Test synth, build, train, eval and explain in sequence"""

    def test_pipeline(self):
        """Test every command succeeds and writes its outputs"""
        result = self.invoke('synth')
        self.assertEqual(result.exit_code, 0, result.output)
        panel = pd.read_csv(self.path('synth', 'panel.csv'), dtype={'zipcode': str})
        self.assertEqual(panel['loan_id'].nunique(), 120)
        self.assertEqual(read_manifest(self.path('synth'))['status'], 'ok')
        self.assertTrue(os.path.exists(self.path('synth', RESOLVED_CONFIG)))

        result = self.invoke('build')
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertRegex(result.output, r'Built \d+ windows')
        self.assertTrue(os.path.exists(self.path('windows', 'manifest.txt')))
        build_manifest = read_manifest(self.path('windows'))
        self.assertIn(self.path('synth', 'panel.csv'), build_manifest['inputs'])
        with open(self.path('windows', 'feature_spec.json')) as f:
            fitted = json.load(f)
        self.assertEqual(fitted['fit_end'], shift_period(panel['period'].max(), -2))

        result = self.invoke('train')
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertTrue(os.path.exists(self.path('model', CHECKPOINT_FILE)))
        log = pd.read_csv(self.path('model', 'training_log.csv'))
        self.assertEqual(list(log['epoch']), [1, 2, 3])
        runtime = pd.read_csv(self.path('model', 'runtime.csv'))
        self.assertEqual(list(runtime['model']), ['gcn-lstm-att'])
        self.assertEqual(runtime['normalized'].tolist(), [1.0])
        self.assertIn('train', read_manifest(self.path('model'))['timings'])

        result = self.invoke('eval')
        self.assertEqual(result.exit_code, 0, result.output)
        metrics = pd.read_csv(self.path('eval', 'metrics.csv'))
        self.assertEqual(list(metrics['model']), ['gcn-lstm-att'])
        row = metrics.iloc[0]
        self.assertTrue(0.0 <= row['auc_lower'] <= row['auc'] <= row['auc_upper'] <= 1.0)
        self.assertTrue(0.0 <= row['f1'] <= 1.0)
        self.assertGreater(row['train_seconds'], 0.0)
        self.assertTrue(os.path.exists(self.path('eval', 'summary.txt')))

        result = self.invoke('explain')
        self.assertEqual(result.exit_code, 0, result.output)
        importance = pd.read_csv(self.path('explain', 'importance.csv'))
        self.assertEqual(list(importance.columns), ['feature', 'mean_abs_attribution'])
        self.assertTrue(importance['mean_abs_attribution'].is_monotonic_decreasing)
        attention = pd.read_csv(self.path('explain', 'attention.csv'))
        self.assertEqual(list(attention['snapshot']), [1, 2, 3])
        self.assertTrue(np.isclose(attention['score'].sum(), 1.0))
        dependency = pd.read_csv(self.path('explain', 'dependency.csv'))
        self.assertEqual(dependency['feature'].nunique(), 2)
        attributions = pd.read_csv(self.path('explain', 'attributions.csv'))
        self.assertEqual(len(attributions), len(importance) * attributions['loan_id'].nunique())

        result = self.runner.invoke(cli, ['--config', self.config_path, 'runtimes',
                                          '--format', 'csv'])
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertIn('gcn-lstm-att', result.output)


@pytest.mark.integration
class TestCommandVariants(CliTestCase):
    """Test determinism, multi-checkpoint reports and attention-free models"""

    def test_synth_is_deterministic(self):
        """Test the same seed writes a byte-identical panel"""
        for output in ('first', 'second'):
            result = self.invoke('synth', '--n-loans', '40', '--output', output)
            self.assertEqual(result.exit_code, 0, result.output)
        with open(self.path('first', 'panel.csv'), 'rb') as f:
            first = f.read()
        with open(self.path('second', 'panel.csv'), 'rb') as f:
            second = f.read()
        self.assertEqual(first, second)

    def test_two_checkpoints_without_attention(self):
        """Test eval reports one row per checkpoint and explain skips attention"""
        self.assertEqual(self.invoke('synth').exit_code, 0)
        self.assertEqual(self.invoke('build', '--layers', 'area').exit_code, 0)
        for model in ('logreg', 'gcn-gru'):
            result = self.invoke('train', '--model', model, '--output', model)
            self.assertEqual(result.exit_code, 0, result.output)

        result = self.invoke('eval', '--checkpoints', 'logreg,gcn-gru')
        self.assertEqual(result.exit_code, 0, result.output)
        metrics = pd.read_csv(self.path('eval', 'metrics.csv'))
        self.assertEqual(list(metrics['model']), ['logreg', 'gcn-gru'])

        result = self.invoke('explain', '--checkpoint', 'gcn-gru')
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertIn('attention export skipped', result.output)
        self.assertFalse(os.path.exists(self.path('explain', 'attention.csv')))

        runtime = pd.read_csv(self.path('gcn-gru', 'runtime.csv'))
        self.assertEqual(sorted(runtime['model']), ['gcn-gru', 'logreg'])
        self.assertEqual(runtime['normalized'].min(), 1.0)


@pytest.mark.integration
class TestExitCodes(CliTestCase):
    """Test failures map to distinct exit codes"""

    def test_missing_config_file(self):
        """Test a missing --config file is a configuration error"""
        result = self.runner.invoke(cli, ['--config', self.path('absent.conf'), 'synth'])
        self.assertEqual(result.exit_code, EXIT_CONFIG)

    def test_unknown_setting(self):
        """Test an unknown key in a command section"""
        with open(self.config_path, 'w') as f:
            f.write(f"[DEFAULT]\noutput_root = {self.root}\n\n[train]\nepoch = 3\n")
        result = self.invoke('train')
        self.assertEqual(result.exit_code, EXIT_CONFIG)
        self.assertIn('epoch', result.output)

    def test_invalid_synth_setting(self):
        """Test a rejected generator setting fails with a config code and a manifest"""
        result = self.invoke('synth', '--base-rate', '1.5', '--output', 'bad-synth')
        self.assertEqual(result.exit_code, EXIT_CONFIG)
        manifest = read_manifest(self.path('bad-synth'))
        self.assertEqual(manifest['status'], 'failed')
        self.assertIn('ConfigException', manifest['failure'])

    def test_missing_input(self):
        """Test a missing panel is a data error"""
        result = self.invoke('build', '--input', self.path('nowhere.csv'))
        self.assertEqual(result.exit_code, EXIT_DATA)
        self.assertEqual(read_manifest(self.path('windows'))['status'], 'failed')

    def test_locked_output(self):
        """Test a held output directory fails fast without a manifest"""
        output = self.path('locked')
        holder = RunLockManager(output)

        def quick_lock(directory):
            return RunLockManager(directory, timeout=0.2)

        with holder.acquire_lock('train'):
            with patch('dymgnn.cli.RunLockManager', side_effect=quick_lock):
                result = self.invoke('synth', '--output', 'locked')
        self.assertEqual(result.exit_code, EXIT_LOCKED)
        self.assertFalse(os.path.exists(os.path.join(output, MANIFEST_NAME)))


if __name__ == '__main__':
    unittest.main()
