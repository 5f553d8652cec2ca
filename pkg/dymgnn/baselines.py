"""
Non-network baselines: logistic regression and a feed-forward MLP.

Both read one flattened row per loan: the window's snapshots of the loan's
first-layer replica, concatenated (tau * d columns).
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Mapping

import numpy as np

from dymgnn.exceptions import ConfigException, DataException, DimensionException
from dymgnn.layers import glorot_uniform
from dymgnn.mlgraph import SnapshotSequence
from dymgnn.model import ModelConfig, ParameterStore, bce_loss, penalty_term
from dymgnn.tensor_core import (
    AdamState,
    DenseMatrix,
    Tape,
    activation,
    adam_step,
    add,
    backward,
    clamp,
    dropout,
    matmul,
    sigmoid,
)
from dymgnn.utils import derive_seed

logger = logging.getLogger(__name__)

MLP_WIDTHS = (64, 32)
PROBABILITY_FLOOR = 1e-7


def flatten_window(sequence: SnapshotSequence) -> np.ndarray:
    """n x (tau * d) matrix of the first-layer rows of every snapshot."""
    n = sequence.n
    return np.hstack([features[:n] for features in sequence.features])


def init_baseline(kind: str, rng: np.random.Generator, width: int) -> Dict[str, np.ndarray]:
    """
    Fresh baseline parameters.

    Logistic regression starts at zero so its first predictions are all 0.5.
    """
    if kind == 'logreg':
        return {'lr.W': np.zeros((width, 1)), 'lr.b': np.zeros((1, 1))}
    if kind == 'mlp':
        values = {}
        widths = (width,) + MLP_WIDTHS + (1,)
        for k in range(len(widths) - 1):
            values[f"mlp.W{k + 1}"] = glorot_uniform(rng, (widths[k], widths[k + 1]))
            values[f"mlp.b{k + 1}"] = np.zeros((1, widths[k + 1]))
        return values
    raise ConfigException(f"Unknown baseline {kind!r}")


def penalized_names(kind: str, params: Mapping[str, object]) -> List[str]:
    prefix = 'lr.W' if kind == 'logreg' else 'mlp.W'
    return sorted(name for name in params if name.startswith(prefix))


def baseline_forward(kind: str, params: Mapping[str, DenseMatrix], features: np.ndarray,
                     training: bool = False, seed: int = 0,
                     dropout_p: float = 0.5) -> DenseMatrix:
    """
    Probabilities (n x 1) for flattened per-loan features.

    Raises:
        DimensionException: feature width does not match the parameters
    """
    x = DenseMatrix(features)
    if kind == 'logreg':
        if x.cols != params['lr.W'].rows:
            raise DimensionException(
                f"Logistic regression expects {params['lr.W'].rows} features, got {x.cols}"
            )
        logits = add(matmul(x, params['lr.W']), params['lr.b'])
    elif kind == 'mlp':
        if x.cols != params['mlp.W1'].rows:
            raise DimensionException(
                f"MLP expects {params['mlp.W1'].rows} features, got {x.cols}"
            )
        hidden = x
        depth = len(MLP_WIDTHS)
        for k in range(1, depth + 1):
            hidden = activation('relu', add(matmul(hidden, params[f"mlp.W{k}"]),
                                            params[f"mlp.b{k}"]))
            hidden = dropout(hidden, dropout_p, training, derive_seed(seed, k))
        logits = add(matmul(hidden, params[f"mlp.W{depth + 1}"]), params[f"mlp.b{depth + 1}"])
    else:
        raise ConfigException(f"Unknown baseline {kind!r}")
    return clamp(sigmoid(logits), PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR)


@dataclass
class BaselineModel:
    """A trained baseline bound to its configuration."""

    config: ModelConfig
    params: ParameterStore

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        probabilities = baseline_forward(self.config.baseline, self.params.bind(),
                                         np.asarray(features, dtype=np.float64),
                                         dropout_p=self.config.dropout)
        return probabilities.values[:, 0].copy()


def baseline_train(kind: str, features: np.ndarray, labels, epochs: int = 200,
                   learning_rate: float = 0.001, penalty: str = 'l2',
                   penalty_strength: float = 0.0, dropout_p: float = 0.5,
                   seed: int = 0) -> BaselineModel:
    """
    Full-batch Adam fit of a baseline on a feature matrix.

    Args:
        kind: 'logreg' or 'mlp'
        features: n x d' matrix
        labels: n binary labels
        epochs: number of Adam steps
        learning_rate: Adam step size
        penalty: 'l1' or 'l2' on weight matrices
        penalty_strength: penalty multiplier (0 disables it)
        dropout_p: MLP dropout
        seed: initialization and dropout seed

    Returns:
        BaselineModel

    Raises:
        DataException: shape mismatch or single-class labels
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64).ravel()
    if features.ndim != 2 or features.shape[0] != labels.shape[0]:
        raise DataException(
            f"Feature matrix {features.shape} does not match {labels.shape[0]} labels"
        )
    if np.unique(labels).size < 2:
        raise DataException("Baseline training needs both classes in the labels")

    config = ModelConfig(baseline=kind, attention=False, input_dim=features.shape[1],
                         window_len=1, penalty=penalty, penalty_strength=penalty_strength,
                         dropout=dropout_p, seed=seed)
    store = ParameterStore.initialize(config)
    state = AdamState(lr=learning_rate)

    for epoch in range(1, epochs + 1):
        tape = Tape()
        params = store.bind(tape)
        probabilities = baseline_forward(kind, params, features, training=True,
                                         seed=derive_seed(seed, epoch), dropout_p=dropout_p)
        loss = bce_loss(labels, probabilities)
        extra = penalty_term(config, params)
        if extra is not None:
            loss = add(loss, extra)
        grads = backward(loss, tape)
        values, state = adam_step(store.values, grads, state)
        store = store.replaced(values)

    logger.debug(f"Trained {kind} baseline on {features.shape[0]} rows for {epochs} epochs")
    return BaselineModel(config=config, params=store)
