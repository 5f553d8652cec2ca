"""
Unit tests for classification metrics and bootstrap intervals.
"""

import unittest

import numpy as np
import pytest

from dymgnn.evaluation import (
    auc,
    bootstrap_ci,
    confusion_counts,
    evaluate_scores,
    f1,
    precision_recall,
)
from dymgnn.exceptions import DataException


@pytest.mark.unit
class TestMetrics(unittest.TestCase):
    """Test AUC and F1 on hand-checked examples"""

    def test_auc_examples(self):
        self.assertEqual(auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]), 1.0)
        self.assertEqual(auc([0.5, 0.5, 0.5, 0.5], [0, 1, 0, 1]), 0.5)
        self.assertEqual(auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]), 0.75)
        self.assertEqual(auc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]), 0.0)

    def test_auc_matches_pair_count(self):
        """Test the rank formula against counting concordant pairs"""
        rng = np.random.default_rng(0)
        scores = np.round(rng.random(60), 1)
        labels = (rng.random(60) < 0.3).astype(int)
        pos, neg = scores[labels == 1], scores[labels == 0]
        pairs = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
        self.assertAlmostEqual(auc(scores, labels), pairs / (len(pos) * len(neg)))

    def test_auc_single_class(self):
        with self.assertRaises(DataException):
            auc([0.1, 0.9], [1, 1])

    def test_labels_must_be_binary(self):
        with self.assertRaises(DataException):
            auc([0.1, 0.9], [0, 2])

    def test_length_mismatch(self):
        with self.assertRaises(DataException):
            f1([0.1, 0.9, 0.3], [0, 1])

    def test_f1_examples(self):
        self.assertAlmostEqual(f1([0.9, 0.8, 0.6, 0.2], [1, 1, 0, 1]), 2.0 / 3.0)
        self.assertAlmostEqual(f1([0.9, 0.8, 0.3, 0.2], [1, 0, 1, 0]), 0.5)

    def test_f1_without_positive_predictions(self):
        self.assertEqual(f1([0.1, 0.2], [0, 1]), 0.0)

    def test_threshold_is_inclusive(self):
        self.assertEqual(confusion_counts([0.5, 0.49], [1, 0]),
                         {'tp': 1, 'fp': 0, 'fn': 0, 'tn': 1})
        self.assertEqual(precision_recall([0.5, 0.49], [1, 0], threshold=0.6), (0.0, 0.0))


@pytest.mark.unit
class TestBootstrap(unittest.TestCase):
    """Test bootstrap confidence intervals"""

    def setUp(self):
        rng = np.random.default_rng(1)
        self.labels = (rng.random(120) < 0.3).astype(float)
        self.scores = np.clip(0.3 * self.labels + rng.normal(0.4, 0.2, size=120), 0, 1)

    def test_interval_contains_point(self):
        interval = bootstrap_ci(auc, self.scores, self.labels, resamples=200, seed=3)
        self.assertLessEqual(interval.lower, interval.point)
        self.assertLessEqual(interval.point, interval.upper)
        self.assertLess(interval.upper - interval.lower, 0.5)

    def test_same_seed_same_interval(self):
        first = bootstrap_ci(auc, self.scores, self.labels, resamples=100, seed=5)
        second = bootstrap_ci(auc, self.scores, self.labels, resamples=100, seed=5)
        self.assertEqual(first, second)

    def test_worker_count_does_not_change_result(self):
        serial = bootstrap_ci(auc, self.scores, self.labels, resamples=50, seed=5, n_jobs=1)
        parallel = bootstrap_ci(auc, self.scores, self.labels, resamples=50, seed=5, n_jobs=2)
        self.assertEqual(serial, parallel)

    def test_rare_positive_is_redrawn(self):
        """Test resamples without a positive are redrawn instead of failing"""
        labels = np.zeros(30)
        labels[4] = 1
        scores = np.linspace(0, 1, 30)
        interval = bootstrap_ci(auc, scores, labels, resamples=50, seed=0)
        self.assertTrue(0.0 <= interval.lower <= interval.upper <= 1.0)

    def test_single_class_sample(self):
        with self.assertRaises(DataException):
            bootstrap_ci(auc, [0.1, 0.2, 0.3], [0, 0, 0], resamples=10)

    def test_report_row(self):
        report = evaluate_scores('gat-lstm-att', self.scores, self.labels, resamples=50, seed=2)
        row = report.row()
        self.assertEqual(row['model'], 'gat-lstm-att')
        self.assertEqual(row['n_nodes'], 120)
        self.assertAlmostEqual(row['auc'], auc(self.scores, self.labels))
        self.assertAlmostEqual(row['f1'], f1(self.scores, self.labels))
        for key in ('auc_lower', 'auc_upper', 'f1_lower', 'f1_upper', 'train_seconds'):
            self.assertIn(key, row)


if __name__ == '__main__':
    unittest.main()
