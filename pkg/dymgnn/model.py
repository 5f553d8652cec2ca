"""
DYMGNN model assembly, loss and training.

A configuration combines a topological encoder (GCN or GAT), a temporal
encoder (LSTM, GRU, or static for single-snapshot baselines) and an optional
temporal attention head. Non-network baselines (logistic regression and an
MLP) share the same parameter store, loss and training loop.
"""

import logging
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from dymgnn.evaluation import auc
from dymgnn.exceptions import (
    ConfigException,
    DataException,
    DimensionException,
    NumericException,
)
from dymgnn.layers import (
    AttentionParams,
    DecoderParams,
    GATParams,
    GCNParams,
    GRUParams,
    LSTMParams,
    decoder_forward,
    gat_forward,
    gcn_forward,
    gru_cell,
    init_attention,
    init_decoder,
    init_gat,
    init_gcn,
    init_gru,
    init_lstm,
    lstm_cell,
    pool_replicas,
    temporal_attention,
    zero_state,
)
from dymgnn.mlgraph import (
    LabeledWindow,
    SnapshotSequence,
    isolate_nodes,
    normalize_adjacency,
    self_loop_structure,
)
from dymgnn.tensor_core import (
    AdamState,
    DenseMatrix,
    Tape,
    activation,
    adam_step,
    add,
    affine,
    backward,
    clamp,
    hadamard,
    log,
    mean_all,
    scale,
    sum_all,
)
from dymgnn.utils import derive_seed

logger = logging.getLogger(__name__)

TOPOLOGICAL = ('gcn', 'gat')
TEMPORAL = ('lstm', 'gru', 'static')
BASELINES = ('none', 'logreg', 'mlp')
PENALTIES = ('l1', 'l2')
BCE_FLOOR = 1e-7


@dataclass(frozen=True)
class ModelConfig:
    """
    Model architecture and seed.

    behavioural_columns lists the feature columns the static baselines
    average over the window; input_dim and max_nodes are bound from the data.
    """

    topological: str = 'gat'
    temporal: str = 'lstm'
    attention: bool = True
    embedding_size: int = 16
    gnn_depth: int = 1
    gat_heads: int = 2
    leaky_slope: float = 0.2
    dropout: float = 0.5
    pooling: str = 'mean'
    seed: int = 0
    baseline: str = 'none'
    decoder_hidden: int = 32
    input_dim: int = 0
    max_nodes: int = 0
    window_len: int = 6
    penalty: str = 'l2'
    penalty_strength: float = 0.0
    behavioural_columns: Tuple[int, ...] = ()

    def __post_init__(self):
        self.validate()

    def validate(self):
        """
        Raises:
            ConfigException: for an invalid combination or size
        """
        if self.baseline not in BASELINES:
            raise ConfigException(f"Unknown baseline {self.baseline!r}")
        if self.penalty not in PENALTIES:
            raise ConfigException(f"Unknown penalty {self.penalty!r}, expected l1 or l2")
        if self.penalty_strength < 0:
            raise ConfigException("penalty_strength must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigException(f"Dropout must be in [0, 1), got {self.dropout}")
        if self.window_len < 1 or self.input_dim < 0 or self.max_nodes < 0:
            raise ConfigException("window_len must be positive; input_dim and max_nodes non-negative")
        if self.is_baseline:
            return
        if self.topological not in TOPOLOGICAL:
            raise ConfigException(f"Unknown topological encoder {self.topological!r}")
        if self.temporal not in TEMPORAL:
            raise ConfigException(f"Unknown temporal encoder {self.temporal!r}")
        if self.attention and self.temporal == 'static':
            raise ConfigException("Temporal attention requires an LSTM or GRU encoder")
        if self.pooling != 'mean':
            raise ConfigException(f"Unsupported replica pooling {self.pooling!r}")
        if min(self.embedding_size, self.gnn_depth, self.gat_heads, self.decoder_hidden) < 1:
            raise ConfigException("embedding_size, gnn_depth, gat_heads and decoder_hidden must be positive")

    @property
    def is_baseline(self) -> bool:
        return self.baseline != 'none'

    @property
    def is_static(self) -> bool:
        return not self.is_baseline and self.temporal == 'static'

    @property
    def name(self) -> str:
        if self.is_baseline:
            return self.baseline
        if self.is_static:
            return f"static-{self.topological}"
        suffix = '-att' if self.attention else ''
        return f"{self.topological}-{self.temporal}{suffix}"

    @classmethod
    def from_name(cls, name: str, **kwargs) -> 'ModelConfig':
        """
        Parse a model name: gcn-lstm, gat-gru-att, static-gat, logreg, mlp ...

        Raises:
            ConfigException: for unparseable names
        """
        parts = name.strip().lower().split('-')
        if parts in (['logreg'], ['mlp']):
            return cls(baseline=parts[0], attention=False, **kwargs)
        if len(parts) == 2 and parts[0] == 'static' and parts[1] in TOPOLOGICAL:
            return cls(topological=parts[1], temporal='static', attention=False, **kwargs)
        if len(parts) in (2, 3) and parts[0] in TOPOLOGICAL and parts[1] in ('lstm', 'gru'):
            if len(parts) == 3 and parts[2] != 'att':
                raise ConfigException(f"Unknown model suffix in {name!r}")
            return cls(topological=parts[0], temporal=parts[1],
                       attention=len(parts) == 3, **kwargs)
        raise ConfigException(
            f"Unknown model {name!r}; expected <gcn|gat>-<lstm|gru>[-att], "
            f"static-<gcn|gat>, logreg or mlp"
        )

    def to_flat(self) -> Dict[str, str]:
        flat = {}
        for key, value in asdict(self).items():
            if isinstance(value, bool):
                flat[key] = 'true' if value else 'false'
            elif isinstance(value, (tuple, list)):
                flat[key] = ','.join(str(v) for v in value)
            else:
                flat[key] = repr(value) if isinstance(value, float) else str(value)
        return flat

    @classmethod
    def from_flat(cls, flat: Mapping[str, str]) -> 'ModelConfig':
        defaults = cls(baseline='logreg', attention=False)
        kwargs = {}
        for key, value in flat.items():
            if not hasattr(defaults, key):
                raise ConfigException(f"Unknown model setting {key!r}")
            current = getattr(defaults, key)
            try:
                if isinstance(current, bool):
                    kwargs[key] = value.strip().lower() == 'true'
                elif isinstance(current, int):
                    kwargs[key] = int(value)
                elif isinstance(current, float):
                    kwargs[key] = float(value)
                elif isinstance(current, tuple):
                    kwargs[key] = tuple(int(v) for v in value.split(',') if v.strip())
                else:
                    kwargs[key] = value
            except ValueError as e:
                raise ConfigException(f"Bad value for model setting {key}: {e}")
        return cls(**kwargs)


class ParameterStore:
    """
    Named parameter arrays of one model.

    Insertion order is the initialization order and stays stable, so the
    same seed always produces the same store.
    """

    def __init__(self, values: Optional[Mapping[str, np.ndarray]] = None):
        self._values: Dict[str, np.ndarray] = {}
        for name, value in (values or {}).items():
            self.set(name, value)

    @classmethod
    def initialize(cls, config: ModelConfig) -> 'ParameterStore':
        """
        Fresh parameters for a configuration.

        Raises:
            ConfigException: if input_dim (or max_nodes with attention) is unset
        """
        if config.input_dim < 1:
            raise ConfigException("ModelConfig.input_dim must be bound before initialization")
        rng = np.random.default_rng(config.seed)
        store = cls()

        if config.is_baseline:
            from dymgnn import baselines
            width = config.input_dim * config.window_len
            store._add_group('', baselines.init_baseline(config.baseline, rng, width))
            return store

        D = config.embedding_size
        for k in range(config.gnn_depth):
            width_in = config.input_dim if k == 0 else D
            if config.topological == 'gcn':
                group = init_gcn(rng, width_in, D)
            else:
                group = init_gat(rng, width_in, D, config.gat_heads)
            store._add_group(f"gnn.{k}.", group)

        if config.temporal == 'lstm':
            store._add_group('lstm.', init_lstm(rng, D))
        elif config.temporal == 'gru':
            store._add_group('gru.', init_gru(rng, D))

        if config.attention:
            if config.max_nodes < 1:
                raise ConfigException("ModelConfig.max_nodes must be bound when attention is on")
            store._add_group('att.', init_attention(rng, config.max_nodes, D))

        store._add_group('dec.', init_decoder(rng, D, config.decoder_hidden))
        return store

    def _add_group(self, prefix: str, group: Mapping[str, np.ndarray]):
        for name, value in group.items():
            self.set(prefix + name, value)

    def set(self, name: str, value):
        array = np.array(value, dtype=np.float64)
        if array.ndim != 2:
            raise DimensionException(f"Parameter {name} must be 2-D, got {array.shape}")
        if name in self._values and self._values[name].shape != array.shape:
            raise DimensionException(
                f"Parameter {name} shape {array.shape} differs from {self._values[name].shape}"
            )
        array.setflags(write=False)
        self._values[name] = array

    @property
    def values(self) -> Dict[str, np.ndarray]:
        return dict(self._values)

    def names(self) -> List[str]:
        return list(self._values)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._values[name]

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __len__(self):
        return len(self._values)

    def replaced(self, values: Mapping[str, np.ndarray]) -> 'ParameterStore':
        store = ParameterStore(self._values)
        for name, value in values.items():
            if name not in self._values:
                raise DimensionException(f"Unknown parameter {name}")
            store.set(name, value)
        return store

    def bind(self, tape: Optional[Tape] = None) -> Dict[str, DenseMatrix]:
        """DenseMatrix view of every parameter, registered on the tape when given."""
        if tape is None:
            return {name: DenseMatrix(value, name=name) for name, value in self._values.items()}
        return {name: tape.parameter(name, value) for name, value in self._values.items()}


@dataclass
class Checkpoint:
    """Trained model: configuration, parameters and feature-scaling statistics."""

    config: ModelConfig
    params: ParameterStore
    scaling: Dict[str, str] = field(default_factory=dict)
    format_version: int = 1


@dataclass
class TrainingRun:
    """Per-epoch curves and the outcome of one training run."""

    train_loss: List[float] = field(default_factory=list)
    validation_loss: List[float] = field(default_factory=list)
    validation_auc: List[float] = field(default_factory=list)
    best_epoch: int = 0
    stop_reason: str = ''
    seconds: float = 0.0

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)

    def rows(self) -> List[Dict[str, float]]:
        return [
            {'epoch': k + 1, 'train_loss': self.train_loss[k],
             'validation_loss': self.validation_loss[k],
             'validation_auc': self.validation_auc[k]}
            for k in range(self.epochs_run)
        ]


@dataclass(frozen=True)
class TrainingHyper:
    epochs: int = 200
    early_stop: int = 50
    learning_rate: float = 0.001
    isolate_per_epoch: bool = False
    isolate_fraction: float = 0.5
    log_every: int = 10


def _gnn(config: ModelConfig, params: Mapping[str, DenseMatrix], sequence: SnapshotSequence,
         x: DenseMatrix) -> DenseMatrix:
    topology = sequence.topology
    z = x
    for k in range(config.gnn_depth):
        if k > 0:
            z = activation('relu', z)
        if config.topological == 'gcn':
            z = gcn_forward(normalize_adjacency(topology), z,
                            GCNParams.bind(params, f"gnn.{k}."))
        else:
            z = gat_forward(self_loop_structure(topology), z,
                            GATParams.bind(params, f"gnn.{k}.", slope=config.leaky_slope))
    return z


def _check_input(config: ModelConfig, sequence: SnapshotSequence):
    if sequence.d != config.input_dim:
        raise DimensionException(
            f"Window has {sequence.d} features, model expects {config.input_dim}"
        )


def forward_window(config: ModelConfig, params: Mapping[str, DenseMatrix],
                   sequence: SnapshotSequence, training: bool = False,
                   seed: int = 0) -> Tuple[DenseMatrix, Optional[DenseMatrix]]:
    """
    Probabilities for every node of a window.

    GNN on each snapshot, recurrent encoder across snapshots, optional
    temporal attention, replica-mean pooling and the decoder.

    Args:
        config: dynamic model configuration
        params: bound parameters (see ParameterStore.bind)
        sequence: the window's snapshots
        training: enables decoder dropout
        seed: dropout seed

    Returns:
        (n x 1 probabilities, tau x 1 attention weights or None)

    Raises:
        DimensionException: feature width mismatch, or a static model given tau > 1
    """
    if config.is_baseline:
        raise ConfigException(f"{config.name} is not a graph model")
    _check_input(config, sequence)
    if config.temporal == 'static' and sequence.tau > 1:
        raise DimensionException(
            f"Static model {config.name} got {sequence.tau} snapshots; use static_gnn_forward"
        )

    embeddings = [_gnn(config, params, sequence, DenseMatrix(x)) for x in sequence.features]

    if config.temporal == 'lstm':
        lstm = LSTMParams.bind(params, 'lstm.')
        h = zero_state(sequence.topology.size, config.embedding_size)
        c = zero_state(sequence.topology.size, config.embedding_size)
        hidden = []
        for z in embeddings:
            h, c = lstm_cell(z, h, c, lstm)
            hidden.append(h)
    elif config.temporal == 'gru':
        gru = GRUParams.bind(params, 'gru.')
        h = zero_state(sequence.topology.size, config.embedding_size)
        hidden = []
        for z in embeddings:
            h = gru_cell(z, h, gru)
            hidden.append(h)
    else:
        hidden = embeddings

    beta = None
    if config.attention:
        state, beta = temporal_attention(hidden, AttentionParams.bind(params, 'att.'), strict=False)
    else:
        state = hidden[-1]

    pooled = pool_replicas(state, sequence.n, sequence.l)
    probabilities = decoder_forward(pooled, DecoderParams.bind(params, 'dec.'),
                                    training=training, seed=seed, dropout_p=config.dropout)
    return probabilities, beta


def static_snapshot(config: ModelConfig, sequence: SnapshotSequence) -> SnapshotSequence:
    """
    Single-snapshot input for the static baselines.

    Last snapshot's topology and features, with the behavioural columns
    replaced by their mean over the window.
    """
    last = np.array(sequence.features[-1])
    columns = list(config.behavioural_columns)
    if columns:
        if max(columns) >= sequence.d:
            raise DimensionException(
                f"Behavioural column {max(columns)} outside {sequence.d} features"
            )
        stacked = np.stack(sequence.features)
        last[:, columns] = stacked[:, :, columns].mean(axis=0)
    return SnapshotSequence(topology=sequence.topology, features=(last,),
                            timestamps=(sequence.timestamps[-1],))


def static_gnn_forward(config: ModelConfig, params: Mapping[str, DenseMatrix],
                       sequence: SnapshotSequence, training: bool = False,
                       seed: int = 0) -> DenseMatrix:
    """Static GCN/GAT baseline forward on the averaged last snapshot."""
    if not config.is_static:
        raise ConfigException(f"{config.name} is not a static graph model")
    probabilities, _ = forward_window(config, params, static_snapshot(config, sequence),
                                      training=training, seed=seed)
    return probabilities


def predict(config: ModelConfig, params: Mapping[str, DenseMatrix],
            sequence: SnapshotSequence, training: bool = False,
            seed: int = 0) -> Tuple[DenseMatrix, Optional[DenseMatrix]]:
    """Dispatch to the forward pass that matches the configuration."""
    if config.is_baseline:
        from dymgnn import baselines
        _check_input(config, sequence)
        if sequence.tau != config.window_len:
            raise DimensionException(
                f"Baseline {config.name} expects {config.window_len} snapshots, got {sequence.tau}"
            )
        return baselines.baseline_forward(config.baseline, params,
                                          baselines.flatten_window(sequence),
                                          training=training, seed=seed,
                                          dropout_p=config.dropout), None
    if config.is_static:
        return static_gnn_forward(config, params, sequence, training, seed), None
    return forward_window(config, params, sequence, training, seed)


def bce_loss(y, yhat: DenseMatrix) -> DenseMatrix:
    """
    Mean binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7].

    Raises:
        DimensionException: if label and prediction counts differ
    """
    labels = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    if yhat.cols != 1 or labels.shape[0] != yhat.rows:
        raise DimensionException(
            f"{labels.shape[0]} labels for predictions of shape {yhat.shape}"
        )
    p = clamp(yhat, BCE_FLOOR, 1.0 - BCE_FLOOR)
    positive = hadamard(DenseMatrix(labels), log(p))
    negative = hadamard(DenseMatrix(1.0 - labels), log(affine(p, -1.0, 1.0)))
    return scale(mean_all(add(positive, negative)), -1.0)


def penalty_term(config: ModelConfig, params: Mapping[str, DenseMatrix]) -> Optional[DenseMatrix]:
    """L1 or L2 penalty on baseline weight matrices (biases excluded)."""
    if not config.is_baseline or config.penalty_strength == 0.0:
        return None
    from dymgnn import baselines
    total = None
    for name in baselines.penalized_names(config.baseline, params):
        weight = params[name]
        if config.penalty == 'l2':
            term = sum_all(hadamard(weight, weight))
        else:
            term = sum_all(hadamard(weight, DenseMatrix(np.sign(weight.values))))
        total = term if total is None else add(total, term)
    return scale(total, config.penalty_strength) if total is not None else None


def window_loss(config: ModelConfig, params: Mapping[str, DenseMatrix],
                sequence: SnapshotSequence, labels, training: bool = False,
                seed: int = 0) -> DenseMatrix:
    probabilities, _ = predict(config, params, sequence, training, seed)
    loss = bce_loss(labels, probabilities)
    penalty = penalty_term(config, params)
    return loss if penalty is None else add(loss, penalty)


def evaluate_loss(config: ModelConfig, store: ParameterStore, window: LabeledWindow) -> float:
    """Validation loss (inference mode, no penalty)."""
    probabilities, _ = predict(config, store.bind(), window.sequence)
    return bce_loss(window.labels, probabilities).item()


def predict_window(config: ModelConfig, store: ParameterStore,
                   window: LabeledWindow) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Inference-mode probabilities (length n) and attention weights (length tau)."""
    probabilities, beta = predict(config, store.bind(), window.sequence)
    return probabilities.values[:, 0].copy(), None if beta is None else beta.values[:, 0].copy()


def _validation_auc(config: ModelConfig, store: ParameterStore, window: LabeledWindow) -> float:
    scores, _ = predict_window(config, store, window)
    try:
        return auc(scores, window.labels)
    except DataException:
        return float('nan')


def train(config: ModelConfig, train_windows: Sequence[LabeledWindow],
          validation_window: LabeledWindow,
          hyper: Optional[TrainingHyper] = None,
          on_epoch: Optional[Callable[[int], None]] = None) -> Tuple[Checkpoint, TrainingRun]:
    """
    Fit a model with Adam, one step per training window per epoch.

    The parameters with the lowest validation loss are kept. Training stops
    once early_stop epochs pass without improvement.

    Args:
        config: model configuration (input_dim and max_nodes bound)
        train_windows: windows in chronological order
        validation_window: held-out window for early stopping
        hyper: epochs, patience, learning rate and isolation options
        on_epoch: called with the epoch number after each epoch

    Returns:
        (Checkpoint with the best parameters, TrainingRun)

    Raises:
        DataException: no training windows, or single-class labels for a baseline
        NumericException: non-finite loss
    """
    hyper = hyper or TrainingHyper()
    if not train_windows:
        raise DataException("At least one training window is required")
    if config.is_baseline:
        labels = np.concatenate([w.labels for w in train_windows])
        if np.unique(labels).size < 2:
            raise DataException("Baseline training needs both classes in the labels")

    start = time.monotonic()
    store = ParameterStore.initialize(config)
    state = AdamState(lr=hyper.learning_rate)
    run = TrainingRun()
    best_loss = float('inf')
    best_store = store

    logger.info(
        f"Training {config.name}: {len(train_windows)} windows, "
        f"{len(store)} parameter matrices, up to {hyper.epochs} epochs"
    )

    for epoch in range(1, hyper.epochs + 1):
        epoch_losses = []
        for index, window in enumerate(train_windows):
            sequence = window.sequence
            if hyper.isolate_per_epoch and window.base_sequence is not None:
                sequence = isolate_nodes(window.base_sequence, hyper.isolate_fraction,
                                         derive_seed(config.seed, epoch, index, 1))
            tape = Tape()
            try:
                loss = window_loss(config, store.bind(tape), sequence, window.labels,
                                   training=True, seed=derive_seed(config.seed, epoch, index))
                grads = backward(loss, tape)
            except NumericException as e:
                raise NumericException(
                    f"Non-finite value while training {config.name} at epoch {epoch}, "
                    f"window {window.index}: {e}"
                )
            values, state = adam_step(store.values, grads, state)
            store = store.replaced(values)
            epoch_losses.append(loss.item())

        train_loss = float(np.mean(epoch_losses))
        validation_loss = evaluate_loss(config, store, validation_window)
        if not np.isfinite(validation_loss):
            raise NumericException(f"Validation loss is {validation_loss} at epoch {epoch}")
        run.train_loss.append(train_loss)
        run.validation_loss.append(validation_loss)
        run.validation_auc.append(_validation_auc(config, store, validation_window))

        if validation_loss < best_loss:
            best_loss = validation_loss
            run.best_epoch = epoch
            best_store = store

        if on_epoch is not None:
            on_epoch(epoch)

        if hyper.log_every and epoch % hyper.log_every == 0:
            logger.info(
                f"{config.name} epoch {epoch}: train {train_loss:.5f}, "
                f"validation {validation_loss:.5f}, best epoch {run.best_epoch}"
            )

        if epoch - run.best_epoch >= hyper.early_stop:
            run.stop_reason = 'early_stop'
            break
    else:
        run.stop_reason = 'max_epochs'

    run.seconds = time.monotonic() - start
    logger.info(
        f"Finished {config.name} after {run.epochs_run} epochs ({run.stop_reason}); "
        f"best epoch {run.best_epoch}, validation loss {best_loss:.5f}"
    )
    return Checkpoint(config=config, params=best_store), run


def bind_config(config: ModelConfig, windows: Sequence[LabeledWindow],
                behavioural_columns: Sequence[int] = ()) -> ModelConfig:
    """Fill input_dim, max_nodes and window_len from the data."""
    if not windows:
        raise DataException("No windows to bind the model configuration to")
    widths = {w.sequence.d for w in windows}
    if len(widths) != 1:
        raise DimensionException(f"Windows disagree on feature width: {sorted(widths)}")
    taus = {w.sequence.tau for w in windows}
    if len(taus) != 1:
        raise DimensionException(f"Windows disagree on snapshot count: {sorted(taus)}")
    return replace(
        config,
        input_dim=widths.pop(),
        max_nodes=max(w.sequence.topology.size for w in windows),
        window_len=taus.pop(),
        behavioural_columns=tuple(behavioural_columns),
    )
