"""
Finite-difference gradient checking for tape-recorded functions.
"""

from typing import Callable, Dict, Mapping

import numpy as np

from dymgnn.tensor_core import DenseMatrix, Tape, backward

EPSILON = 1e-5
TOLERANCE = 1e-6


def numeric_gradients(loss_fn: Callable[[Mapping[str, DenseMatrix]], DenseMatrix],
                      values: Mapping[str, np.ndarray],
                      eps: float = EPSILON) -> Dict[str, np.ndarray]:
    """Central differences of loss_fn with respect to every entry of every value."""
    base = {name: np.array(v, dtype=np.float64) for name, v in values.items()}
    grads = {}
    for name, value in base.items():
        grad = np.zeros_like(value)
        for index in np.ndindex(value.shape):
            for sign in (1.0, -1.0):
                shifted = dict(base)
                moved = np.array(value)
                moved[index] += sign * eps
                shifted[name] = moved
                bound = {k: DenseMatrix(v) for k, v in shifted.items()}
                grad[index] += sign * loss_fn(bound).item()
            grad[index] /= 2.0 * eps
        grads[name] = grad
    return grads


def analytic_gradients(loss_fn: Callable[[Mapping[str, DenseMatrix]], DenseMatrix],
                       values: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
    tape = Tape()
    bound = {name: tape.parameter(name, v) for name, v in values.items()}
    return backward(loss_fn(bound), tape)


def max_relative_error(loss_fn, values, eps: float = EPSILON) -> float:
    """
    Largest |analytic - numeric| / max(1, |analytic|, |numeric|) over all entries.
    """
    analytic = analytic_gradients(loss_fn, values)
    numeric = numeric_gradients(loss_fn, values, eps)
    worst = 0.0
    for name in values:
        a, n = analytic[name], numeric[name]
        scale = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
        worst = max(worst, float(np.max(np.abs(a - n) / scale)))
    return worst
