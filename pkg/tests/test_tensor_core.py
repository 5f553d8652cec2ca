"""
Unit tests for the tensor core: operations, reverse pass, sparse products and Adam.
"""

import unittest

import numpy as np
import pytest

from dymgnn.exceptions import (
    ConfigException,
    DimensionException,
    DYMInternalError,
    NumericException,
)
from dymgnn.tensor_core import (
    AdamState,
    DenseMatrix,
    SparseBinaryMatrix,
    Tape,
    activation,
    adam_step,
    add,
    backward,
    clamp,
    concat_cols,
    concat_rows,
    constant,
    dropout,
    gather_rows,
    hadamard,
    log,
    matmul,
    mean_all,
    segment_softmax,
    slice_cols,
    slice_rows,
    softmax_column,
    spmm,
    sub,
    sum_all,
    transpose,
)
from tests.gradcheck import max_relative_error

TOLERANCE = 1e-6


def weighted_sum(out: DenseMatrix, seed: int = 7) -> DenseMatrix:
    """Scalar loss that gives every output entry a distinct weight."""
    weights = np.random.default_rng(seed).uniform(0.5, 1.5, size=out.shape)
    return sum_all(hadamard(out, constant(weights)))


@pytest.mark.unit
class TestDenseMatrix(unittest.TestCase):
    """Test matrix construction"""

    def test_values_are_read_only(self):
        """Test stored values cannot be modified in place"""
        m = DenseMatrix([[1.0, 2.0]])
        with self.assertRaises(ValueError):
            m.values[0, 0] = 5.0

    def test_rejects_non_finite(self):
        """Test NaN entries raise NumericException"""
        with self.assertRaises(NumericException):
            DenseMatrix([[1.0, np.nan]])

    def test_rejects_non_2d(self):
        """Test vectors are not accepted"""
        with self.assertRaises(DimensionException):
            DenseMatrix([1.0, 2.0])

    def test_item_requires_scalar(self):
        self.assertEqual(DenseMatrix([[3.5]]).item(), 3.5)
        with self.assertRaises(DimensionException):
            DenseMatrix([[1.0, 2.0]]).item()


@pytest.mark.unit
class TestGradients(unittest.TestCase):
    """Test analytic gradients against central differences over many seeds"""

    SEEDS = range(20)

    def assertGradientsMatch(self, loss_fn, make_values):
        for seed in self.SEEDS:
            with self.subTest(seed=seed):
                values = make_values(np.random.default_rng(seed))
                self.assertLess(max_relative_error(loss_fn, values), TOLERANCE)

    def test_matmul(self):
        self.assertGradientsMatch(
            lambda p: weighted_sum(matmul(p['a'], p['b'])),
            lambda rng: {'a': rng.normal(size=(3, 4)), 'b': rng.normal(size=(4, 2))},
        )

    def test_broadcast_elementwise(self):
        """Test row, column and scalar broadcasting in add, sub and hadamard"""
        def loss(p):
            out = add(p['a'], p['row'])
            out = sub(out, p['col'])
            out = hadamard(out, p['k'])
            return weighted_sum(hadamard(out, p['a']))

        self.assertGradientsMatch(loss, lambda rng: {
            'a': rng.normal(size=(3, 4)),
            'row': rng.normal(size=(1, 4)),
            'col': rng.normal(size=(3, 1)),
            'k': rng.normal(size=(1, 1)),
        })

    def test_activations(self):
        for kind in ('sigmoid', 'tanh', 'leaky_relu', 'relu'):
            self.assertGradientsMatch(
                lambda p, kind=kind: weighted_sum(activation(kind, p['a'])),
                lambda rng: {'a': rng.normal(size=(4, 3))},
            )

    def test_sigmoid_of_linear_map(self):
        """Test sum(sigmoid(Xw)) against finite differences in X and w"""
        self.assertGradientsMatch(
            lambda p: sum_all(activation('sigmoid', matmul(p['x'], p['w']))),
            lambda rng: {'x': rng.normal(size=(8, 5)), 'w': rng.normal(size=(5, 1))},
        )

    def test_segment_softmax(self):
        ids = np.array([0, 0, 1, 1, 1, 2, 2])
        self.assertGradientsMatch(
            lambda p: weighted_sum(segment_softmax(p['s'], ids, 3)),
            lambda rng: {'s': rng.normal(size=(7, 1))},
        )

    def test_weighted_spmm(self):
        """Test gradients flow into both the dense operand and the entry weights"""
        s = SparseBinaryMatrix(4, 3, [0, 1, 1, 2, 3], [0, 0, 2, 1, 2])
        self.assertGradientsMatch(
            lambda p: weighted_sum(spmm(s, p['d'], p['w'])),
            lambda rng: {'d': rng.normal(size=(3, 2)), 'w': rng.normal(size=(5, 1))},
        )

    def test_shape_ops(self):
        def loss(p):
            stacked = concat_rows([p['a'], p['b']])
            picked = gather_rows(stacked, [5, 0, 0, 3])
            wide = concat_cols([picked, transpose(slice_cols(transpose(stacked), 0, 4))])
            return weighted_sum(slice_rows(wide, 1, 3))

        self.assertGradientsMatch(
            loss, lambda rng: {'a': rng.normal(size=(4, 3)), 'b': rng.normal(size=(2, 3))}
        )

    def test_slice_out_of_range(self):
        with self.assertRaises(DimensionException):
            slice_cols(DenseMatrix(np.ones((2, 3))), 0, 4)

    def test_log_and_mean(self):
        self.assertGradientsMatch(
            lambda p: mean_all(log(p['a'])),
            lambda rng: {'a': rng.uniform(0.5, 2.0, size=(3, 3))},
        )

    def test_softmax_column(self):
        self.assertGradientsMatch(
            lambda p: weighted_sum(softmax_column(p['s'])),
            lambda rng: {'s': rng.normal(size=(5, 1))},
        )


@pytest.mark.unit
class TestBackward(unittest.TestCase):
    """Test the reverse pass"""

    def test_unreached_parameter_gets_zeros(self):
        tape = Tape()
        a = tape.parameter('a', [[1.0, 2.0]])
        tape.parameter('unused', np.ones((2, 2)))
        grads = backward(sum_all(a), tape)
        np.testing.assert_array_equal(grads['a'], [[1.0, 1.0]])
        np.testing.assert_array_equal(grads['unused'], np.zeros((2, 2)))

    def test_reused_input_accumulates(self):
        """Test a matrix used twice receives the sum of both gradients"""
        tape = Tape()
        a = tape.parameter('a', [[3.0]])
        grads = backward(hadamard(a, a), tape)
        self.assertAlmostEqual(grads['a'][0, 0], 6.0)

    def test_loss_must_be_scalar(self):
        tape = Tape()
        a = tape.parameter('a', [[1.0, 2.0]])
        with self.assertRaises(DimensionException):
            backward(a, tape)

    def test_duplicate_parameter(self):
        tape = Tape()
        tape.parameter('a', [[1.0]])
        with self.assertRaises(DYMInternalError):
            tape.parameter('a', [[2.0]])

    def test_mixed_tapes_rejected(self):
        a = Tape().parameter('a', [[1.0]])
        b = Tape().parameter('b', [[1.0]])
        with self.assertRaises(DYMInternalError):
            add(a, b)

    def test_constants_are_not_recorded(self):
        tape = Tape()
        out = add(tape.constant([[1.0]]), tape.constant([[2.0]]))
        self.assertEqual(len(tape), 0)
        self.assertFalse(out.requires_grad)


@pytest.mark.unit
class TestSparse(unittest.TestCase):
    """Test the sparse matrix type and spmm"""

    def test_spmm_matches_ascending_column_sum(self):
        """Test spmm equals a row-by-row ascending-column accumulation bit for bit"""
        rng = np.random.default_rng(3)
        for case in range(200):
            n_rows, n_cols = rng.integers(1, 33, size=2)
            mask = rng.random((n_rows, n_cols)) < rng.uniform(0.05, 0.6)
            rows, cols = np.nonzero(mask)
            weights = rng.normal(size=rows.shape[0])
            s = SparseBinaryMatrix(n_rows, n_cols, rows, cols, weights=weights)
            d = rng.normal(size=(n_cols, int(rng.integers(1, 6))))

            expected = np.zeros((n_rows, d.shape[1]))
            dense = s.densify()
            for r in range(n_rows):
                for c in range(n_cols):
                    if mask[r, c]:
                        expected[r] += dense[r, c] * d[c]
            with self.subTest(case=case):
                np.testing.assert_array_equal(spmm(s, DenseMatrix(d)).values, expected)

    def test_duplicates_collapse(self):
        s = SparseBinaryMatrix(3, 3, [2, 0, 2], [1, 1, 1])
        self.assertEqual(s.nnz, 2)
        self.assertEqual(s.pairs(), [(0, 1), (2, 1)])

    def test_out_of_range_index(self):
        with self.assertRaises(DimensionException):
            SparseBinaryMatrix(2, 2, [0, 2], [0, 1])

    def test_symmetric_flag_checked(self):
        SparseBinaryMatrix.from_pairs(2, 2, [(0, 1), (1, 0)], symmetric=True)
        with self.assertRaises(DimensionException):
            SparseBinaryMatrix.from_pairs(2, 2, [(0, 1)], symmetric=True)

    def test_identity(self):
        np.testing.assert_array_equal(SparseBinaryMatrix.identity(3).densify(), np.eye(3))

    def test_spmm_shape_mismatch(self):
        s = SparseBinaryMatrix.identity(3)
        with self.assertRaises(DimensionException):
            spmm(s, DenseMatrix(np.ones((2, 2))))
        with self.assertRaises(DimensionException):
            spmm(s, DenseMatrix(np.ones((3, 2))), weights=DenseMatrix(np.ones((2, 1))))


@pytest.mark.unit
class TestMiscOps(unittest.TestCase):
    """Test remaining operation contracts"""

    def test_segment_softmax_sums_to_one(self):
        ids = np.array([1, 0, 1, 1, 0])
        y = segment_softmax(DenseMatrix([[1.0], [2.0], [3.0], [900.0], [-5.0]]), ids, 2).values
        self.assertAlmostEqual(y[[1, 4], 0].sum(), 1.0)
        self.assertAlmostEqual(y[[0, 2, 3], 0].sum(), 1.0)

    def test_segment_softmax_closed_form(self):
        """Test scores (0, ln 3) give (0.25, 0.75)"""
        y = segment_softmax(DenseMatrix([[0.0], [np.log(3.0)]]), [0, 0], 1).values
        np.testing.assert_allclose(y[:, 0], [0.25, 0.75], atol=1e-12)

    def test_segment_softmax_shift_invariant(self):
        """Test adding a constant within one segment leaves every output unchanged"""
        rng = np.random.default_rng(11)
        ids = np.array([0, 1, 0, 2, 1, 1, 2, 0])
        scores = rng.normal(size=(8, 1))
        shifted = scores + np.where(ids == 1, 250.0, 0.0)[:, None]
        before = segment_softmax(DenseMatrix(scores), ids, 3).values
        after = segment_softmax(DenseMatrix(shifted), ids, 3).values
        np.testing.assert_allclose(after, before, atol=1e-12)
        for segment in range(3):
            self.assertAlmostEqual(after[ids == segment, 0].sum(), 1.0, delta=1e-12)

    def test_sigmoid_symmetry(self):
        """Test sigmoid(x) + sigmoid(-x) = 1"""
        x = np.random.default_rng(5).normal(scale=10.0, size=(50, 4))
        total = activation('sigmoid', DenseMatrix(x)).values + \
            activation('sigmoid', DenseMatrix(-x)).values
        np.testing.assert_allclose(total, 1.0, rtol=0, atol=1e-12)

    def test_segment_softmax_empty_segment(self):
        with self.assertRaises(DYMInternalError):
            segment_softmax(DenseMatrix([[1.0]]), [0], 2)

    def test_log_of_zero(self):
        with self.assertRaises(NumericException):
            log(DenseMatrix([[0.0]]))

    def test_clamp_blocks_gradient_outside(self):
        tape = Tape()
        a = tape.parameter('a', [[-1.0, 0.5, 2.0]])
        grads = backward(sum_all(clamp(a, 0.0, 1.0)), tape)
        np.testing.assert_array_equal(grads['a'], [[0.0, 1.0, 0.0]])

    def test_dropout_identity_outside_training(self):
        a = DenseMatrix(np.ones((3, 3)))
        self.assertIs(dropout(a, 0.5, training=False, seed=1), a)
        self.assertIs(dropout(a, 0.0, training=True, seed=1), a)

    def test_dropout_is_seeded(self):
        a = DenseMatrix(np.ones((10, 10)))
        first = dropout(a, 0.5, training=True, seed=4).values
        second = dropout(a, 0.5, training=True, seed=4).values
        np.testing.assert_array_equal(first, second)
        self.assertTrue(set(np.unique(first)) <= {0.0, 2.0})

    def test_dropout_keep_fraction(self):
        """Test half of 10^4 entries are zeroed and the mean is preserved"""
        a = DenseMatrix(np.ones((100, 100)))
        for seed in range(10):
            out = dropout(a, 0.5, training=True, seed=seed).values
            with self.subTest(seed=seed):
                self.assertLess(abs(np.mean(out == 0.0) - 0.5), 0.02)
                self.assertLess(abs(out.mean() - 1.0), 0.04)

    def test_dropout_rejects_bad_probability(self):
        with self.assertRaises(ConfigException):
            dropout(DenseMatrix([[1.0]]), 1.0, training=True, seed=0)


@pytest.mark.unit
class TestAdam(unittest.TestCase):
    """Test the Adam update"""

    def test_first_step_moves_by_learning_rate(self):
        """Test the bias-corrected first step is lr times the gradient sign"""
        params = {'w': np.array([[1.0, -1.0, 0.5]])}
        grads = {'w': np.array([[2.0, -3.0, 0.1]])}
        new_params, state = adam_step(params, grads, AdamState(lr=0.01))
        np.testing.assert_allclose(new_params['w'], [[0.99, -0.99, 0.49]], atol=1e-6)
        self.assertEqual(state.step, 1)

    def test_zero_gradient_is_fixed_point(self):
        params = {'w': np.array([[0.3, -0.7]])}
        new_params, _ = adam_step(params, {'w': np.zeros((1, 2))}, AdamState())
        np.testing.assert_array_equal(new_params['w'], params['w'])

    def test_quadratic_descent(self):
        """Test 100 default steps on (w - 2)^2 from 0 move w toward 2"""
        params, state = {'w': np.zeros((1, 1))}, AdamState()
        for _ in range(100):
            grads = {'w': 2.0 * (params['w'] - 2.0)}
            params, state = adam_step(params, grads, state)
        self.assertEqual(state.step, 100)
        self.assertLess(abs(params['w'][0, 0] - 2.0), 2.0)
        self.assertGreater(params['w'][0, 0], 0.05)

    def test_state_not_modified(self):
        state = AdamState()
        adam_step({'w': np.ones((1, 1))}, {'w': np.ones((1, 1))}, state)
        self.assertEqual(state.step, 0)
        self.assertEqual(state.m, {})

    def test_missing_gradient(self):
        with self.assertRaises(DimensionException):
            adam_step({'w': np.ones((1, 1))}, {}, AdamState())

    def test_shape_mismatch(self):
        with self.assertRaises(DimensionException):
            adam_step({'w': np.ones((1, 2))}, {'w': np.ones((2, 1))}, AdamState())


if __name__ == '__main__':
    unittest.main()
