"""
Neural building blocks on the tensor core: GCN and multi-head GAT layers,
LSTM and GRU cells, temporal attention over hidden states, and the decoder head.

Parameter groups are dataclasses of DenseMatrix fields. Each group has an
init_* function returning fresh numpy values keyed by local name, and a
bind() classmethod that picks the matching DenseMatrix objects out of a
name -> matrix mapping under a prefix.
"""

import logging
from dataclasses import dataclass, fields
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from dymgnn.exceptions import DimensionException
from dymgnn.tensor_core import (
    DenseMatrix,
    SparseBinaryMatrix,
    activation,
    add,
    affine,
    clamp,
    concat_rows,
    dropout,
    gather_rows,
    hadamard,
    matmul,
    scale,
    segment_softmax,
    sigmoid,
    slice_cols,
    slice_rows,
    softmax_column,
    spmm,
    tanh,
    transpose,
)

logger = logging.getLogger(__name__)

DECODER_HIDDEN = 32
LEAKY_SLOPE = 0.2
PROBABILITY_FLOOR = 1e-7


def glorot_uniform(rng: np.random.Generator, shape: Tuple[int, int]) -> np.ndarray:
    """Uniform in +/- sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape)


class _Bindable:
    @classmethod
    def bind(cls, mapping: Mapping[str, DenseMatrix], prefix: str = ''):
        return cls(**{f.name: mapping[prefix + f.name] for f in fields(cls)})


@dataclass
class GCNParams(_Bindable):
    W: DenseMatrix  # d x D


def init_gcn(rng: np.random.Generator, d: int, D: int) -> Dict[str, np.ndarray]:
    return {'W': glorot_uniform(rng, (d, D))}


def gcn_forward(anorm: SparseBinaryMatrix, x: DenseMatrix, params: GCNParams) -> DenseMatrix:
    """
    Z = anorm . X . W

    Raises:
        DimensionException: shape mismatch
    """
    if x.rows != anorm.n_cols:
        raise DimensionException(
            f"GCN input has {x.rows} rows, adjacency is {anorm.shape}"
        )
    return spmm(anorm, matmul(x, params.W))


@dataclass
class GATHead:
    W: DenseMatrix  # D x d
    a: DenseMatrix  # 2D x 1


@dataclass
class GATParams:
    heads: List[GATHead]
    slope: float = LEAKY_SLOPE

    @classmethod
    def bind(cls, mapping: Mapping[str, DenseMatrix], prefix: str = '',
             slope: float = LEAKY_SLOPE) -> 'GATParams':
        heads = []
        k = 0
        while f"{prefix}head{k}.W" in mapping:
            heads.append(GATHead(W=mapping[f"{prefix}head{k}.W"], a=mapping[f"{prefix}head{k}.a"]))
            k += 1
        if not heads:
            raise DimensionException(f"No GAT heads under prefix {prefix!r}")
        return cls(heads=heads, slope=slope)


def init_gat(rng: np.random.Generator, d: int, D: int, heads: int) -> Dict[str, np.ndarray]:
    values = {}
    for k in range(heads):
        values[f"head{k}.W"] = glorot_uniform(rng, (D, d))
        values[f"head{k}.a"] = glorot_uniform(rng, (2 * D, 1))
    return values


def gat_forward(structure: SparseBinaryMatrix, x: DenseMatrix, params: GATParams,
                return_attention: bool = False):
    """
    Multi-head graph attention over a structure that already contains self-edges.

    For every edge (i, j) with i the destination row:
    e_ij = LeakyReLU(a^T [W x_i || W x_j]); alpha = softmax of e over the
    edges of i; Z_i = sum_j alpha_ij W x_j. Heads are averaged.

    Args:
        structure: binary supra adjacency with self-loops
        x: nl x d features
        params: per-head projections and attention vectors
        return_attention: also return the per-head nnz x 1 coefficient columns

    Returns:
        nl x D embeddings, or (embeddings, [alpha per head])
    """
    if x.rows != structure.n_rows:
        raise DimensionException(
            f"GAT input has {x.rows} rows, structure is {structure.shape}"
        )
    outputs, alphas = [], []
    for head in params.heads:
        D = head.W.rows
        if head.W.cols != x.cols or head.a.shape != (2 * D, 1):
            raise DimensionException(
                f"GAT head shapes W {head.W.shape}, a {head.a.shape} do not fit input width {x.cols}"
            )
        wx = matmul(x, transpose(head.W))
        dest_score = matmul(wx, slice_rows(head.a, 0, D))
        neigh_score = matmul(wx, slice_rows(head.a, D, 2 * D))
        e = activation('leaky_relu',
                       add(gather_rows(dest_score, structure.rows),
                           gather_rows(neigh_score, structure.cols)),
                       slope=params.slope)
        alpha = segment_softmax(e, structure.rows, structure.n_rows)
        outputs.append(spmm(structure, wx, weights=alpha))
        alphas.append(alpha)

    z = outputs[0]
    for extra in outputs[1:]:
        z = add(z, extra)
    if len(outputs) > 1:
        z = scale(z, 1.0 / len(outputs))
    return (z, alphas) if return_attention else z


@dataclass
class LSTMParams(_Bindable):
    W_ii: DenseMatrix
    W_ih: DenseMatrix
    W_fi: DenseMatrix
    W_fh: DenseMatrix
    W_ci: DenseMatrix
    W_ch: DenseMatrix
    W_oi: DenseMatrix
    W_oh: DenseMatrix
    b_i: DenseMatrix
    b_f: DenseMatrix
    b_c: DenseMatrix
    b_o: DenseMatrix


def init_lstm(rng: np.random.Generator, D: int) -> Dict[str, np.ndarray]:
    values = {}
    for gate in ('i', 'f', 'c', 'o'):
        values[f"W_{gate}i"] = glorot_uniform(rng, (D, D))
        values[f"W_{gate}h"] = glorot_uniform(rng, (D, D))
    for gate in ('i', 'f', 'c', 'o'):
        values[f"b_{gate}"] = np.zeros((1, D))
    return values


def _gate(z: DenseMatrix, h: DenseMatrix, w_in: DenseMatrix, w_hidden: DenseMatrix,
          bias: DenseMatrix) -> DenseMatrix:
    return add(add(matmul(z, w_in), matmul(h, w_hidden)), bias)


def _check_state(z: DenseMatrix, *states: DenseMatrix):
    for state in states:
        if state.shape != z.shape:
            raise DimensionException(
                f"Recurrent state shape {state.shape} does not match input {z.shape}"
            )


def lstm_cell(z_t: DenseMatrix, h_prev: DenseMatrix, c_prev: DenseMatrix,
              params: LSTMParams) -> Tuple[DenseMatrix, DenseMatrix]:
    """
    One LSTM step.

    I = sigmoid(Z W_ii + H W_ih + b_i), F and O likewise,
    C = F * C_prev + I * tanh(Z W_ci + H W_ch + b_c), H = O * tanh(C).
    """
    _check_state(z_t, h_prev, c_prev)
    i_gate = sigmoid(_gate(z_t, h_prev, params.W_ii, params.W_ih, params.b_i))
    f_gate = sigmoid(_gate(z_t, h_prev, params.W_fi, params.W_fh, params.b_f))
    o_gate = sigmoid(_gate(z_t, h_prev, params.W_oi, params.W_oh, params.b_o))
    candidate = tanh(_gate(z_t, h_prev, params.W_ci, params.W_ch, params.b_c))
    c = add(hadamard(f_gate, c_prev), hadamard(i_gate, candidate))
    h = hadamard(o_gate, tanh(c))
    return h, c


@dataclass
class GRUParams(_Bindable):
    W_ui: DenseMatrix
    W_uh: DenseMatrix
    W_ri: DenseMatrix
    W_rh: DenseMatrix
    W_hi: DenseMatrix
    W_hh: DenseMatrix
    b_u: DenseMatrix
    b_r: DenseMatrix
    b_h: DenseMatrix


def init_gru(rng: np.random.Generator, D: int) -> Dict[str, np.ndarray]:
    values = {}
    for gate in ('u', 'r', 'h'):
        values[f"W_{gate}i"] = glorot_uniform(rng, (D, D))
        values[f"W_{gate}h"] = glorot_uniform(rng, (D, D))
    for gate in ('u', 'r', 'h'):
        values[f"b_{gate}"] = np.zeros((1, D))
    return values


def gru_cell(z_t: DenseMatrix, h_prev: DenseMatrix, params: GRUParams) -> DenseMatrix:
    """
    One GRU step.

    U = sigmoid(Z W_ui + H W_uh + b_u), R = sigmoid(Z W_ri + H W_rh + b_r),
    H = (1 - U) * H_prev + U * tanh(Z W_hi + (R * H_prev) W_hh + b_h).
    """
    _check_state(z_t, h_prev)
    u = sigmoid(_gate(z_t, h_prev, params.W_ui, params.W_uh, params.b_u))
    r = sigmoid(_gate(z_t, h_prev, params.W_ri, params.W_rh, params.b_r))
    candidate = tanh(_gate(z_t, hadamard(r, h_prev), params.W_hi, params.W_hh, params.b_h))
    return add(hadamard(affine(u, -1.0, 1.0), h_prev), hadamard(u, candidate))


@dataclass
class AttentionParams(_Bindable):
    a_h: DenseMatrix  # 1 x nl
    W_h: DenseMatrix  # D x 1


def init_attention(rng: np.random.Generator, nl: int, D: int) -> Dict[str, np.ndarray]:
    return {
        'a_h': glorot_uniform(rng, (1, nl)),
        'W_h': glorot_uniform(rng, (D, 1)),
    }


def temporal_attention(h_seq: Sequence[DenseMatrix], params: AttentionParams,
                       strict: bool = True) -> Tuple[DenseMatrix, DenseMatrix]:
    """
    Softmax re-weighting of hidden states across timestamps.

    s(t) = a_h H(t) W_h, beta = softmax(s), H_att = sum_t beta(t) H(t).

    Args:
        h_seq: tau hidden-state matrices, each nl x D
        params: a_h and W_h
        strict: require a_h to have exactly nl entries. When False a longer
            a_h is truncated and a shorter one is treated as zero-padded.

    Returns:
        (H_att, beta as a tau x 1 column)

    Raises:
        DimensionException: empty sequence or a_h length mismatch in strict mode
    """
    if not h_seq:
        raise DimensionException("temporal attention needs at least one hidden state")
    nl = h_seq[0].rows
    if strict and params.a_h.cols != nl:
        raise DimensionException(f"a_h has {params.a_h.cols} entries for {nl} rows")
    width = min(nl, params.a_h.cols)
    a_h = slice_cols(params.a_h, 0, width)

    scores = []
    for h in h_seq:
        projected = matmul(h, params.W_h)
        scores.append(matmul(a_h, slice_rows(projected, 0, width)))
    beta = softmax_column(concat_rows(scores))

    h_att = None
    for t, h in enumerate(h_seq):
        term = hadamard(slice_rows(beta, t, t + 1), h)
        h_att = term if h_att is None else add(h_att, term)
    return h_att, beta


@dataclass
class DecoderParams(_Bindable):
    W1: DenseMatrix  # D x hidden
    b1: DenseMatrix  # 1 x hidden
    W2: DenseMatrix  # hidden x 1
    b2: DenseMatrix  # 1 x 1


def init_decoder(rng: np.random.Generator, D: int,
                 hidden: int = DECODER_HIDDEN) -> Dict[str, np.ndarray]:
    return {
        'W1': glorot_uniform(rng, (D, hidden)),
        'b1': np.zeros((1, hidden)),
        'W2': glorot_uniform(rng, (hidden, 1)),
        'b2': np.zeros((1, 1)),
    }


def decoder_forward(h: DenseMatrix, params: DecoderParams, training: bool = False,
                    seed: int = 0, dropout_p: float = 0.5) -> DenseMatrix:
    """
    Linear -> ReLU -> dropout -> linear -> sigmoid, clamped to [1e-7, 1 - 1e-7].

    Returns:
        n x 1 column of probabilities
    """
    if h.cols != params.W1.rows:
        raise DimensionException(
            f"Decoder input width {h.cols} does not match W1 {params.W1.shape}"
        )
    hidden = activation('relu', add(matmul(h, params.W1), params.b1))
    hidden = dropout(hidden, dropout_p, training, seed)
    logits = add(matmul(hidden, params.W2), params.b2)
    return clamp(sigmoid(logits), PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR)


def pool_replicas(h: DenseMatrix, n: int, l: int) -> DenseMatrix:
    """Average the l replica rows of every node: nl x D -> n x D."""
    if h.rows != n * l:
        raise DimensionException(f"Cannot pool {h.rows} rows into {n} nodes x {l} layers")
    if l == 1:
        return h
    pooled = slice_rows(h, 0, n)
    for k in range(1, l):
        pooled = add(pooled, slice_rows(h, k * n, (k + 1) * n))
    return scale(pooled, 1.0 / l)


def zero_state(rows: int, width: int, tape=None) -> DenseMatrix:
    return DenseMatrix(np.zeros((rows, width)), tape=tape)

