"""
Unit tests for model configuration, forward passes, loss and training.
"""

import math
import unittest
from dataclasses import replace
from unittest.mock import patch

import numpy as np
import pytest

from dymgnn.exceptions import ConfigException, DataException, DimensionException
from dymgnn.model import (
    ModelConfig,
    ParameterStore,
    TrainingHyper,
    bce_loss,
    bind_config,
    forward_window,
    predict,
    predict_window,
    static_snapshot,
    train,
    window_loss,
)
from dymgnn.tensor_core import DenseMatrix
from tests.gradcheck import max_relative_error
from tests.windows import make_window, make_windows

SMALL = dict(embedding_size=3, decoder_hidden=3, gat_heads=2)


def bound(name: str, windows, **kwargs) -> ModelConfig:
    return bind_config(ModelConfig.from_name(name, **dict(SMALL, **kwargs)), windows,
                       behavioural_columns=(0, 1))


@pytest.mark.unit
class TestModelConfig(unittest.TestCase):
    """Test model names and validation"""

    def test_parse_names(self):
        cases = {
            'gat-lstm-att': ('gat', 'lstm', True, 'none'),
            'gcn-gru': ('gcn', 'gru', False, 'none'),
            'static-gat': ('gat', 'static', False, 'none'),
            'logreg': (None, None, False, 'logreg'),
            'MLP': (None, None, False, 'mlp'),
        }
        for name, (topological, temporal, attention, baseline) in cases.items():
            with self.subTest(name=name):
                config = ModelConfig.from_name(name)
                self.assertEqual(config.attention, attention)
                self.assertEqual(config.baseline, baseline)
                if baseline == 'none':
                    self.assertEqual((config.topological, config.temporal), (topological, temporal))
                self.assertEqual(config.name, name.lower())

    def test_bad_names(self):
        for name in ('gat', 'gcn-lstm-attn', 'static-lstm', 'gin-gru', 'gat-static-att'):
            with self.subTest(name=name):
                with self.assertRaises(ConfigException):
                    ModelConfig.from_name(name)

    def test_attention_needs_recurrence(self):
        with self.assertRaises(ConfigException):
            ModelConfig(temporal='static', attention=True)

    def test_invalid_values(self):
        for kwargs in ({'dropout': 1.0}, {'penalty': 'l3'}, {'embedding_size': 0},
                       {'pooling': 'max'}, {'penalty_strength': -1.0}):
            with self.subTest(**kwargs):
                with self.assertRaises(ConfigException):
                    ModelConfig(**kwargs)

    def test_flat_form_restores_config(self):
        config = ModelConfig.from_name('gcn-gru-att', embedding_size=8, leaky_slope=0.1,
                                       behavioural_columns=(3, 5), input_dim=16, max_nodes=40)
        self.assertEqual(ModelConfig.from_flat(config.to_flat()), config)

    def test_flat_form_rejects_unknown_key(self):
        with self.assertRaises(ConfigException):
            ModelConfig.from_flat({'mystery': '1'})


@pytest.mark.unit
class TestParameterStore(unittest.TestCase):
    """Test parameter initialization"""

    def test_same_seed_same_parameters(self):
        config = bound('gat-lstm-att', make_windows(1))
        first, second = ParameterStore.initialize(config), ParameterStore.initialize(config)
        self.assertEqual(first.names(), second.names())
        for name in first.names():
            np.testing.assert_array_equal(first[name], second[name])

    def test_groups_present(self):
        config = bound('gat-gru-att', make_windows(1), gnn_depth=2)
        store = ParameterStore.initialize(config)
        for name in ('gnn.0.head0.W', 'gnn.1.head1.a', 'gru.W_ui', 'att.a_h', 'dec.W2'):
            self.assertIn(name, store)
        self.assertEqual(store['att.a_h'].shape, (1, 12))
        self.assertEqual(store['gnn.0.head0.W'].shape, (3, 4))

    def test_requires_bound_input_dim(self):
        with self.assertRaises(ConfigException):
            ParameterStore.initialize(ModelConfig())

    def test_attention_requires_max_nodes(self):
        with self.assertRaises(ConfigException):
            ParameterStore.initialize(ModelConfig(input_dim=4))

    def test_replaced_rejects_shape_change(self):
        store = ParameterStore({'w': np.zeros((2, 2))})
        with self.assertRaises(DimensionException):
            store.replaced({'w': np.zeros((3, 2))})
        with self.assertRaises(DimensionException):
            store.replaced({'other': np.zeros((2, 2))})


@pytest.mark.unit
class TestForward(unittest.TestCase):
    """Test forward passes of every model family"""

    def setUp(self):
        self.window = make_window()

    def test_dynamic_models(self):
        for name in ('gcn-lstm', 'gcn-gru-att', 'gat-lstm-att', 'gat-gru'):
            with self.subTest(name=name):
                config = bound(name, [self.window])
                scores, beta = predict_window(config, ParameterStore.initialize(config), self.window)
                self.assertEqual(scores.shape, (6,))
                self.assertTrue(np.all((scores > 0) & (scores < 1)))
                if config.attention:
                    self.assertEqual(beta.shape, (3,))
                    self.assertAlmostEqual(float(beta.sum()), 1.0)
                else:
                    self.assertIsNone(beta)

    def test_static_and_baseline_models(self):
        for name in ('static-gcn', 'static-gat', 'logreg', 'mlp'):
            with self.subTest(name=name):
                config = bound(name, [self.window])
                scores, beta = predict_window(config, ParameterStore.initialize(config), self.window)
                self.assertEqual(scores.shape, (6,))
                self.assertIsNone(beta)

    def test_logreg_starts_at_one_half(self):
        config = bound('logreg', [self.window])
        scores, _ = predict_window(config, ParameterStore.initialize(config), self.window)
        np.testing.assert_allclose(scores, 0.5)

    def test_static_forward_rejects_sequences(self):
        config = bound('static-gcn', [self.window])
        with self.assertRaises(DimensionException):
            forward_window(config, ParameterStore.initialize(config).bind(), self.window.sequence)

    def test_feature_width_checked(self):
        config = bound('gcn-lstm', [self.window])
        other = make_window(d=5)
        with self.assertRaises(DimensionException):
            predict(config, ParameterStore.initialize(config).bind(), other.sequence)

    def test_static_snapshot_averages_behavioural_columns(self):
        config = bound('static-gcn', [self.window])
        snapshot = static_snapshot(config, self.window.sequence)
        stacked = np.stack(self.window.sequence.features)
        self.assertEqual(snapshot.tau, 1)
        np.testing.assert_allclose(snapshot.features[0][:, :2], stacked[:, :, :2].mean(axis=0))
        np.testing.assert_array_equal(snapshot.features[0][:, 2:], stacked[-1][:, 2:])

    def test_attention_handles_smaller_window(self):
        """Test a model bound to a larger network still predicts on a smaller one"""
        config = bound('gat-lstm-att', [make_window(n=8)])
        store = ParameterStore.initialize(config)
        scores, beta = predict_window(config, store, self.window)
        self.assertEqual(scores.shape, (6,))

    def test_full_model_gradients(self):
        config = bound('gcn-gru-att', [self.window], dropout=0.0)
        values = ParameterStore.initialize(config).values
        sequence, labels = self.window.sequence, self.window.labels
        error = max_relative_error(lambda p: window_loss(config, p, sequence, labels), values)
        self.assertLess(error, 1e-6)


@pytest.mark.unit
class TestLoss(unittest.TestCase):
    """Test the loss"""

    def test_bce_at_one_half(self):
        loss = bce_loss([0, 1, 1, 0], DenseMatrix(np.full((4, 1), 0.5)))
        self.assertAlmostEqual(loss.item(), math.log(2.0))

    def test_bce_clamps_extremes(self):
        loss = bce_loss([1, 0], DenseMatrix([[0.0], [1.0]]))
        self.assertAlmostEqual(loss.item(), -math.log(1e-7), places=6)

    def test_bce_count_mismatch(self):
        with self.assertRaises(DimensionException):
            bce_loss([0, 1, 1], DenseMatrix(np.full((4, 1), 0.5)))

    def test_penalty_added_for_baselines(self):
        window = make_window()
        plain = bound('mlp', [window])
        penalized = replace(plain, penalty_strength=0.1)
        params = ParameterStore.initialize(plain).bind()
        base = window_loss(plain, params, window.sequence, window.labels).item()
        extra = window_loss(penalized, params, window.sequence, window.labels).item()
        self.assertGreater(extra, base)


@pytest.mark.unit
class TestTraining(unittest.TestCase):
    """Test the training loop"""

    def setUp(self):
        self.windows = make_windows(3)
        self.validation = make_window(seed=9, index=3)

    def test_training_lowers_loss(self):
        config = bound('gcn-lstm', self.windows, dropout=0.0)
        hyper = TrainingHyper(epochs=30, early_stop=100, learning_rate=0.01)
        checkpoint, run = train(config, self.windows, self.validation, hyper)
        self.assertEqual(run.epochs_run, 30)
        self.assertEqual(run.stop_reason, 'max_epochs')
        self.assertLess(run.train_loss[-1], run.train_loss[0])
        self.assertEqual(run.best_epoch, int(np.argmin(run.validation_loss)) + 1)
        self.assertEqual(len(run.rows()), 30)
        self.assertEqual(run.rows()[0]['epoch'], 1)

    def test_best_parameters_are_returned(self):
        config = bound('gcn-gru', self.windows)
        checkpoint, run = train(config, self.windows, self.validation,
                                TrainingHyper(epochs=5, early_stop=100, learning_rate=0.01))
        scores, _ = predict_window(config, checkpoint.params, self.validation)
        loss = bce_loss(self.validation.labels, DenseMatrix(scores.reshape(-1, 1))).item()
        self.assertAlmostEqual(loss, min(run.validation_loss), places=10)

    def test_early_stopping(self):
        """Test training stops early_stop epochs after the last improvement"""
        config = bound('logreg', self.windows)
        losses = iter([1.0] + [2.0] * 500)
        with patch('dymgnn.model.evaluate_loss', side_effect=lambda *a: next(losses)):
            _, run = train(config, self.windows, self.validation,
                           TrainingHyper(epochs=200, early_stop=50))
        self.assertEqual(run.epochs_run, 51)
        self.assertEqual(run.best_epoch, 1)
        self.assertEqual(run.stop_reason, 'early_stop')

    def test_epoch_callback(self):
        """Test the callback sees every completed epoch"""
        seen = []
        _, run = train(bound('logreg', self.windows), self.windows, self.validation,
                       TrainingHyper(epochs=4, early_stop=100), on_epoch=seen.append)
        self.assertEqual(seen, [1, 2, 3, 4])
        self.assertEqual(run.epochs_run, 4)

    def test_training_is_deterministic(self):
        config = bound('gat-lstm-att', self.windows)
        hyper = TrainingHyper(epochs=3, early_stop=10, learning_rate=0.01)
        first, run_a = train(config, self.windows, self.validation, hyper)
        second, run_b = train(config, self.windows, self.validation, hyper)
        self.assertEqual(run_a.train_loss, run_b.train_loss)
        for name in first.params.names():
            np.testing.assert_array_equal(first.params[name], second.params[name])

    def test_isolation_per_epoch(self):
        windows = make_windows(2, isolate=0.5)
        config = bound('gcn-lstm', windows)
        hyper = TrainingHyper(epochs=2, early_stop=10, isolate_per_epoch=True)
        _, run = train(config, windows, self.validation, hyper)
        self.assertEqual(run.epochs_run, 2)

    def test_needs_training_windows(self):
        config = bound('gcn-lstm', self.windows)
        with self.assertRaises(DataException):
            train(config, [], self.validation)

    def test_baseline_needs_both_classes(self):
        window = make_window()
        single = window.__class__(sequence=window.sequence, labels=np.zeros(6),
                                  node_ids=window.node_ids)
        config = bound('logreg', [single])
        with self.assertRaises(DataException):
            train(config, [single], self.validation)


@pytest.mark.unit
class TestBindConfig(unittest.TestCase):
    """Test binding a configuration to data"""

    def test_binds_sizes(self):
        windows = [make_window(n=5), make_window(n=7)]
        config = bind_config(ModelConfig(), windows, behavioural_columns=[1])
        self.assertEqual(config.input_dim, 4)
        self.assertEqual(config.max_nodes, 14)
        self.assertEqual(config.window_len, 3)
        self.assertEqual(config.behavioural_columns, (1,))

    def test_rejects_mixed_widths(self):
        with self.assertRaises(DimensionException):
            bind_config(ModelConfig(), [make_window(d=3), make_window(d=4)])

    def test_rejects_empty(self):
        with self.assertRaises(DataException):
            bind_config(ModelConfig(), [])


if __name__ == '__main__':
    unittest.main()
