"""
Matrix arithmetic with tape-based reverse-mode differentiation.

Every numeric value in a model forward pass is a DenseMatrix: an immutable
2-D float64 array. Operations on matrices that belong to a Tape are recorded
in execution order; backward() replays the records in reverse and returns
gradients keyed by parameter name.

Sparse operands are SparseBinaryMatrix instances (sorted coordinate list with
a CSR index built on first use). spmm runs on scipy's CSR kernel, which sums
each output row in ascending column order.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.special import expit

from dymgnn.exceptions import (
    ConfigException,
    DimensionException,
    DYMInternalError,
    NumericException,
)

logger = logging.getLogger(__name__)

DTYPE = np.float64

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


def _freeze(values: np.ndarray) -> np.ndarray:
    values.setflags(write=False)
    return values


class DenseMatrix:
    """
    Immutable rows x cols matrix of 64-bit floats.

    Attributes:
        values: read-only ndarray of shape (rows, cols)
        tape: Tape the matrix is recorded on (None for plain constants)
        name: parameter name for tape leaves
        node_id: position on the tape (None when not differentiable)
    """

    __slots__ = ('values', 'tape', 'name', 'node_id')

    def __init__(self, values, tape: Optional['Tape'] = None, name: Optional[str] = None,
                 copy: bool = True):
        array = np.array(values, dtype=DTYPE, copy=True) if copy else values
        if array.ndim != 2:
            raise DimensionException(f"DenseMatrix needs a 2-D array, got shape {array.shape}")
        if not np.all(np.isfinite(array)):
            raise NumericException(f"Non-finite entries in matrix {name or ''}".strip())
        self.values = _freeze(array)
        self.tape = tape
        self.name = name
        self.node_id: Optional[int] = None

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    @property
    def requires_grad(self) -> bool:
        return self.node_id is not None

    def to_numpy(self) -> np.ndarray:
        return np.array(self.values)

    def item(self) -> float:
        if self.shape != (1, 1):
            raise DimensionException(f"item() needs a 1x1 matrix, got {self.shape}")
        return float(self.values[0, 0])

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"<DenseMatrix {self.rows}x{self.cols}{label}>"


@dataclass
class TapeRecord:
    output_id: int
    input_ids: Tuple[Optional[int], ...]
    backward_fn: BackwardFn
    op: str


class Tape:
    """
    Ordered record of differentiable operations for one forward pass.

    A tape is confined to one thread. Records are appended as operations run,
    so inputs always precede their consumers.
    """

    def __init__(self):
        self.records: List[TapeRecord] = []
        self.parameters: Dict[str, DenseMatrix] = {}
        self._next_id = 0

    def _new_id(self) -> int:
        node_id = self._next_id
        self._next_id += 1
        return node_id

    def parameter(self, name: str, values) -> DenseMatrix:
        """Register a named leaf that receives a gradient."""
        if name in self.parameters:
            raise DYMInternalError(f"Parameter {name} registered twice on one tape")
        leaf = DenseMatrix(values, tape=self, name=name)
        leaf.node_id = self._new_id()
        self.parameters[name] = leaf
        return leaf

    def constant(self, values, name: Optional[str] = None) -> DenseMatrix:
        return DenseMatrix(values, tape=self, name=name)

    def record(self, output: DenseMatrix, inputs: Sequence[DenseMatrix],
               backward_fn: BackwardFn, op: str):
        output.tape = self
        output.node_id = self._new_id()
        self.records.append(TapeRecord(
            output_id=output.node_id,
            input_ids=tuple(x.node_id for x in inputs),
            backward_fn=backward_fn,
            op=op,
        ))

    def __len__(self):
        return len(self.records)


def constant(values, name: Optional[str] = None) -> DenseMatrix:
    return DenseMatrix(values, name=name)


def _common_tape(inputs: Sequence[DenseMatrix]) -> Optional[Tape]:
    tape = None
    for x in inputs:
        if x.tape is None:
            continue
        if tape is None:
            tape = x.tape
        elif x.tape is not tape:
            raise DYMInternalError("Operands are recorded on different tapes")
    return tape


def _emit(values: np.ndarray, inputs: Sequence[DenseMatrix], backward_fn: BackwardFn,
          op: str) -> DenseMatrix:
    if not np.all(np.isfinite(values)):
        raise NumericException(f"{op} produced non-finite values")
    out = DenseMatrix(values, copy=False)
    tape = _common_tape(inputs)
    if tape is not None and any(x.requires_grad for x in inputs):
        tape.record(out, inputs, backward_fn, op)
    else:
        out.tape = tape
    return out


def backward(loss: DenseMatrix, tape: Optional[Tape] = None) -> Dict[str, np.ndarray]:
    """
    Reverse pass from a scalar loss.

    Args:
        loss: 1x1 matrix produced on the tape
        tape: tape to replay (defaults to loss.tape)

    Returns:
        dict of parameter name -> gradient array; parameters the loss never
        reached get zeros

    Raises:
        DimensionException: if loss is not 1x1
    """
    if loss.shape != (1, 1):
        raise DimensionException(f"Loss must be a 1x1 matrix, got {loss.shape}")
    tape = tape or loss.tape
    if tape is None:
        raise DYMInternalError("Loss is not recorded on a tape")

    grads: Dict[int, np.ndarray] = {}
    if loss.node_id is not None:
        grads[loss.node_id] = np.ones((1, 1), dtype=DTYPE)

    for record in reversed(tape.records):
        g = grads.pop(record.output_id, None)
        if g is None:
            continue
        input_grads = record.backward_fn(g)
        for input_id, input_grad in zip(record.input_ids, input_grads):
            if input_id is None or input_grad is None:
                continue
            if input_id in grads:
                grads[input_id] = grads[input_id] + input_grad
            else:
                grads[input_id] = input_grad

    result = {}
    for name, leaf in tape.parameters.items():
        grad = grads.get(leaf.node_id)
        result[name] = np.zeros(leaf.shape, dtype=DTYPE) if grad is None else np.asarray(grad)
    return result


class SparseBinaryMatrix:
    """
    Sparse matrix stored as a sorted, deduplicated coordinate list.

    Entries default to 1.0; an optional per-entry weight vector turns the
    matrix into a weighted one (e.g. a normalized adjacency). The CSR index is
    built on first use and cached.
    """

    def __init__(self, n_rows: int, n_cols: int, rows, cols, weights=None,
                 symmetric: bool = False):
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        if rows.shape != cols.shape:
            raise DimensionException("Row and column index lists differ in length")
        if rows.size and (rows.min() < 0 or rows.max() >= n_rows
                          or cols.min() < 0 or cols.max() >= n_cols):
            raise DimensionException(
                f"Sparse index out of range for a {n_rows}x{n_cols} matrix"
            )

        entry_count = rows.shape[0]
        keys = rows * n_cols + cols
        keys, first = np.unique(keys, return_index=True)
        self.n_rows = int(n_rows)
        self.n_cols = int(n_cols)
        self.rows = _freeze(keys // max(n_cols, 1))
        self.cols = _freeze(keys % max(n_cols, 1))
        if weights is None:
            self.weights = None
        else:
            weights = np.asarray(weights, dtype=DTYPE).ravel()
            if weights.shape[0] != entry_count:
                raise DimensionException("Weight vector length does not match entry count")
            self.weights = _freeze(np.array(weights[first]))
        self.symmetric = symmetric
        self._indptr: Optional[np.ndarray] = None
        if symmetric and not self.is_symmetric():
            raise DimensionException("Matrix flagged symmetric has asymmetric entries")

    @classmethod
    def from_pairs(cls, n_rows: int, n_cols: int, pairs, symmetric: bool = False):
        pairs = np.asarray(list(pairs), dtype=np.int64).reshape(-1, 2)
        return cls(n_rows, n_cols, pairs[:, 0], pairs[:, 1], symmetric=symmetric)

    @classmethod
    def identity(cls, n: int) -> 'SparseBinaryMatrix':
        idx = np.arange(n)
        return cls(n, n, idx, idx, symmetric=True)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return int(self.rows.shape[0])

    def entry_values(self) -> np.ndarray:
        if self.weights is None:
            return np.ones(self.nnz, dtype=DTYPE)
        return np.array(self.weights)

    def pairs(self) -> List[Tuple[int, int]]:
        return list(zip(self.rows.tolist(), self.cols.tolist()))

    def is_symmetric(self) -> bool:
        forward = self.rows * self.n_cols + self.cols
        mirrored = np.sort(self.cols * self.n_cols + self.rows)
        if self.n_rows != self.n_cols or not np.array_equal(forward, mirrored):
            return False
        if self.weights is None:
            return True
        order = np.argsort(self.cols * self.n_cols + self.rows, kind='stable')
        return bool(np.array_equal(self.weights, self.weights[order]))

    def densify(self) -> np.ndarray:
        dense = np.zeros(self.shape, dtype=DTYPE)
        dense[self.rows, self.cols] = self.entry_values()
        return dense

    def indptr(self) -> np.ndarray:
        if self._indptr is None:
            counts = np.bincount(self.rows, minlength=self.n_rows)
            indptr = np.zeros(self.n_rows + 1, dtype=np.int64)
            np.cumsum(counts, out=indptr[1:])
            self._indptr = _freeze(indptr)
        return self._indptr

    def csr(self, data: Optional[np.ndarray] = None) -> sparse.csr_matrix:
        """CSR view sharing this matrix's index arrays."""
        data = self.entry_values() if data is None else np.asarray(data, dtype=DTYPE).ravel()
        matrix = sparse.csr_matrix(
            (data, np.array(self.cols), np.array(self.indptr())),
            shape=self.shape,
        )
        matrix.has_sorted_indices = True
        return matrix

    def with_weights(self, weights) -> 'SparseBinaryMatrix':
        return SparseBinaryMatrix(self.n_rows, self.n_cols, self.rows, self.cols,
                                  weights=weights, symmetric=False)

    def __repr__(self):
        return f"<SparseBinaryMatrix {self.n_rows}x{self.n_cols} nnz={self.nnz}>"


def matmul(a: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    if a.cols != b.rows:
        raise DimensionException(f"matmul shape mismatch: {a.shape} x {b.shape}")
    av, bv = a.values, b.values

    def grad(g):
        return (g @ bv.T, av.T @ g)

    return _emit(av @ bv, (a, b), grad, 'matmul')


def spmm(s: SparseBinaryMatrix, d: DenseMatrix,
         weights: Optional[DenseMatrix] = None) -> DenseMatrix:
    """
    Sparse x dense product.

    Args:
        s: sparse left operand
        d: dense right operand (s.n_cols rows)
        weights: optional nnz x 1 matrix replacing the entry values of s;
            differentiable, used for attention coefficients

    Returns:
        s.n_rows x d.cols matrix
    """
    if s.n_cols != d.rows:
        raise DimensionException(f"spmm shape mismatch: {s.shape} x {d.shape}")
    if weights is not None and weights.shape != (s.nnz, 1):
        raise DimensionException(
            f"spmm weights must be {s.nnz}x1, got {weights.shape}"
        )

    data = s.entry_values() if weights is None else weights.values[:, 0]
    csr = s.csr(data)
    dv = d.values
    out = np.asarray(csr @ dv)

    def grad(g):
        grad_d = np.asarray(csr.T @ g)
        if weights is None:
            return (grad_d,)
        grad_w = np.sum(g[s.rows] * dv[s.cols], axis=1, keepdims=True)
        return (grad_d, grad_w)

    inputs = (d,) if weights is None else (d, weights)
    return _emit(out, inputs, grad, 'spmm')


def _unbroadcast(g: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    for axis in (0, 1):
        if shape[axis] == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


ELEMENTWISE_OPS = ('add', 'sub', 'hadamard')


def elementwise(op: str, a: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    """
    Entrywise add, sub or hadamard product.

    Either operand may be a 1 x cols row, rows x 1 column or 1 x 1 scalar
    broadcast against the other.
    """
    if op not in ELEMENTWISE_OPS:
        raise DYMInternalError(f"Unknown elementwise op {op}")
    try:
        out_shape = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionException(f"{op}: incompatible shapes {a.shape} and {b.shape}")
    if out_shape not in (a.shape, b.shape):
        raise DimensionException(f"{op}: incompatible shapes {a.shape} and {b.shape}")

    av, bv = a.values, b.values
    if op == 'add':
        out = av + bv

        def grad(g):
            return (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))
    elif op == 'sub':
        out = av - bv

        def grad(g):
            return (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))
    else:
        out = av * bv

        def grad(g):
            return (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape))

    return _emit(out, (a, b), grad, op)


def add(a: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    return elementwise('add', a, b)


def sub(a: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    return elementwise('sub', a, b)


def hadamard(a: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    return elementwise('hadamard', a, b)


ACTIVATIONS = ('sigmoid', 'tanh', 'leaky_relu', 'relu')


def activation(kind: str, a: DenseMatrix, slope: float = 0.2) -> DenseMatrix:
    """
    Entrywise activation.

    Args:
        kind: one of sigmoid, tanh, leaky_relu, relu
        a: input matrix
        slope: negative-side slope for leaky_relu
    """
    x = a.values
    if kind == 'sigmoid':
        out = expit(x)

        def grad(g):
            return (g * out * (1.0 - out),)
    elif kind == 'tanh':
        out = np.tanh(x)

        def grad(g):
            return (g * (1.0 - out * out),)
    elif kind == 'leaky_relu':
        out = np.where(x > 0, x, slope * x)

        def grad(g):
            return (g * np.where(x > 0, 1.0, slope),)
    elif kind == 'relu':
        out = np.maximum(x, 0.0)

        def grad(g):
            return (g * (x > 0),)
    else:
        raise DYMInternalError(f"Unknown activation {kind}")
    return _emit(out, (a,), grad, kind)


def sigmoid(a: DenseMatrix) -> DenseMatrix:
    return activation('sigmoid', a)


def tanh(a: DenseMatrix) -> DenseMatrix:
    return activation('tanh', a)


def segment_softmax(scores: DenseMatrix, segment_ids, num_segments: int) -> DenseMatrix:
    """
    Softmax computed independently within each segment of a k x 1 score column.

    The per-segment maximum is subtracted before exponentiation.

    Raises:
        DimensionException: if ids and scores differ in length
        DYMInternalError: if a segment has no entries
    """
    ids = np.asarray(segment_ids, dtype=np.int64).ravel()
    if scores.cols != 1 or scores.rows != ids.shape[0]:
        raise DimensionException(
            f"segment_softmax needs a {ids.shape[0]}x1 score column, got {scores.shape}"
        )
    if ids.size and (ids.min() < 0 or ids.max() >= num_segments):
        raise DimensionException("Segment id out of range")
    counts = np.bincount(ids, minlength=num_segments)
    if np.any(counts == 0):
        raise DYMInternalError(
            f"segment_softmax: segment {int(np.argmin(counts))} is empty"
        )

    s = scores.values[:, 0]
    seg_max = np.full(num_segments, -np.inf)
    np.maximum.at(seg_max, ids, s)
    e = np.exp(s - seg_max[ids])
    denom = np.zeros(num_segments, dtype=DTYPE)
    np.add.at(denom, ids, e)
    y = e / denom[ids]

    def grad(g):
        gy = g[:, 0] * y
        seg_sum = np.zeros(num_segments, dtype=DTYPE)
        np.add.at(seg_sum, ids, gy)
        return ((gy - y * seg_sum[ids])[:, None],)

    return _emit(y[:, None], (scores,), grad, 'segment_softmax')


def softmax_column(scores: DenseMatrix) -> DenseMatrix:
    """Softmax over all entries of a k x 1 column."""
    return segment_softmax(scores, np.zeros(scores.rows, dtype=np.int64), 1)


def dropout(a: DenseMatrix, p: float, training: bool, seed: int) -> DenseMatrix:
    """
    Inverted dropout; identity outside training mode or when p is 0.

    Raises:
        ConfigException: if p is outside [0, 1)
    """
    if not 0.0 <= p < 1.0:
        raise ConfigException(f"Dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return a
    rng = np.random.default_rng(seed)
    keep = (rng.random(a.shape) >= p) / (1.0 - p)

    def grad(g):
        return (g * keep,)

    return _emit(a.values * keep, (a,), grad, 'dropout')


def transpose(a: DenseMatrix) -> DenseMatrix:
    return _emit(np.ascontiguousarray(a.values.T), (a,), lambda g: (g.T,), 'transpose')


def gather_rows(a: DenseMatrix, index) -> DenseMatrix:
    """Rows of a picked by an index vector (repeats allowed)."""
    index = np.asarray(index, dtype=np.int64).ravel()
    if index.size and (index.min() < 0 or index.max() >= a.rows):
        raise DimensionException(f"gather_rows index out of range for {a.rows} rows")

    def grad(g):
        out = np.zeros(a.shape, dtype=DTYPE)
        np.add.at(out, index, g)
        return (out,)

    return _emit(a.values[index], (a,), grad, 'gather_rows')


def slice_rows(a: DenseMatrix, start: int, stop: int) -> DenseMatrix:
    if not 0 <= start <= stop <= a.rows:
        raise DimensionException(f"Row slice {start}:{stop} outside {a.rows} rows")

    def grad(g):
        out = np.zeros(a.shape, dtype=DTYPE)
        out[start:stop] = g
        return (out,)

    return _emit(np.array(a.values[start:stop]), (a,), grad, 'slice_rows')


def slice_cols(a: DenseMatrix, start: int, stop: int) -> DenseMatrix:
    if not 0 <= start <= stop <= a.cols:
        raise DimensionException(f"Column slice {start}:{stop} outside {a.cols} columns")

    def grad(g):
        out = np.zeros(a.shape, dtype=DTYPE)
        out[:, start:stop] = g
        return (out,)

    return _emit(np.array(a.values[:, start:stop]), (a,), grad, 'slice_cols')


def concat_rows(parts: Sequence[DenseMatrix]) -> DenseMatrix:
    if not parts:
        raise DimensionException("concat_rows needs at least one matrix")
    if len({p.cols for p in parts}) != 1:
        raise DimensionException("concat_rows: column counts differ")
    bounds = np.cumsum([0] + [p.rows for p in parts])

    def grad(g):
        return tuple(g[bounds[k]:bounds[k + 1]] for k in range(len(parts)))

    return _emit(np.vstack([p.values for p in parts]), tuple(parts), grad, 'concat_rows')


def concat_cols(parts: Sequence[DenseMatrix]) -> DenseMatrix:
    if not parts:
        raise DimensionException("concat_cols needs at least one matrix")
    if len({p.rows for p in parts}) != 1:
        raise DimensionException("concat_cols: row counts differ")
    bounds = np.cumsum([0] + [p.cols for p in parts])

    def grad(g):
        return tuple(g[:, bounds[k]:bounds[k + 1]] for k in range(len(parts)))

    return _emit(np.hstack([p.values for p in parts]), tuple(parts), grad, 'concat_cols')


def sum_all(a: DenseMatrix) -> DenseMatrix:
    shape = a.shape
    return _emit(np.array([[a.values.sum()]]), (a,),
                 lambda g: (np.full(shape, g[0, 0]),), 'sum_all')


def mean_all(a: DenseMatrix) -> DenseMatrix:
    shape = a.shape
    count = a.values.size
    return _emit(np.array([[a.values.mean()]]), (a,),
                 lambda g: (np.full(shape, g[0, 0] / count),), 'mean_all')


def affine(a: DenseMatrix, scale: float, shift: float = 0.0) -> DenseMatrix:
    """a * scale + shift with scalar constants."""
    return _emit(a.values * scale + shift, (a,), lambda g: (g * scale,), 'affine')


def scale(a: DenseMatrix, factor: float) -> DenseMatrix:
    return affine(a, factor, 0.0)


def log(a: DenseMatrix) -> DenseMatrix:
    x = a.values
    if np.any(x <= 0):
        raise NumericException("log of a non-positive entry")
    return _emit(np.log(x), (a,), lambda g: (g / x,), 'log')


def clamp(a: DenseMatrix, low: float, high: float) -> DenseMatrix:
    """Clip entries to [low, high]; gradient flows only where no clipping happened."""
    x = a.values
    inside = (x > low) & (x < high)
    return _emit(np.clip(x, low, high), (a,), lambda g: (g * inside,), 'clamp')


@dataclass
class AdamState:
    """Adam moments and step counter for a named parameter set."""

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr: float = 0.001


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
              state: AdamState) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """
    One bias-corrected Adam update.

    Args:
        params: parameter name -> array
        grads: parameter name -> gradient of the same shape
        state: moments from previous steps (not modified)

    Returns:
        (new params, new state)

    Raises:
        DimensionException: on missing gradients or shape mismatch
    """
    step = state.step + 1
    new_params, new_m, new_v = {}, {}, {}
    bias1 = 1.0 - state.beta1 ** step
    bias2 = 1.0 - state.beta2 ** step

    for name, value in params.items():
        if name not in grads:
            raise DimensionException(f"No gradient for parameter {name}")
        g = np.asarray(grads[name], dtype=DTYPE)
        if g.shape != value.shape:
            raise DimensionException(
                f"Gradient shape {g.shape} does not match parameter {name} {value.shape}"
            )
        m = state.m.get(name, np.zeros_like(value))
        v = state.v.get(name, np.zeros_like(value))
        if m.shape != value.shape or v.shape != value.shape:
            raise DimensionException(f"Adam moments for {name} have the wrong shape")

        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        m_hat = m / bias1
        v_hat = v / bias2
        new_params[name] = value - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[name] = m
        new_v[name] = v

    new_state = AdamState(m=new_m, v=new_v, step=step, beta1=state.beta1,
                          beta2=state.beta2, eps=state.eps, lr=state.lr)
    return new_params, new_state
