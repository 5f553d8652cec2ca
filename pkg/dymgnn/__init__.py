# dymgnn/__init__.py
"""
dymgnn: dynamic multilayer graph neural networks for loan default prediction

Loans are nodes of a multilayer network (shared zip area, shared lending
company) observed over monthly snapshots. A graph encoder (GCN or GAT), a
recurrent encoder (LSTM or GRU) and optional temporal attention score the
probability that each loan defaults within the label horizon.

Example:
    >>> from dymgnn import SynthSpec, synth_panel, prepare_panel, build_windows
    >>> from dymgnn import ModelConfig, bind_config, train
    >>> panel = synth_panel(SynthSpec(n_loans=500, seed=1))
    >>> scaled, spec = prepare_panel(panel, fit_end='2012-12')
    >>> dataset = build_windows(scaled, window_len=6)
    >>> config = bind_config(ModelConfig.from_name('gat-lstm-att'), dataset.windows)
    >>> checkpoint, run = train(config, dataset.windows[:-1], dataset.windows[-1])
"""

from .dataprep import (
    FEATURES,
    FeatureSpec,
    LoanPanel,
    WindowDataset,
    build_windows,
    clean_features,
    derive_connectors,
    ingest_panel,
    prepare_panel,
    read_window_dataset,
    scale_minmax,
    write_window_dataset,
)
from .evaluation import EvaluationReport, auc, bootstrap_ci, evaluate_scores, f1
from .exceptions import (
    CheckpointException,
    ConfigException,
    DataException,
    DimensionException,
    DYMException,
    NumericException,
)
from .explain import attention_profile, dependency_export, shapley_attribution, shapley_values
from .mlgraph import (
    LabeledWindow,
    MultilayerTopology,
    SnapshotSequence,
    build_supra_adjacency,
    isolate_nodes,
)
from .model import Checkpoint, ModelConfig, TrainingHyper, bind_config, predict_window, train
from .synth import SynthSpec, synth_generate, synth_panel
from .version import version_string

__version__ = version_string()

__all__ = [
    # Data
    'FEATURES',
    'FeatureSpec',
    'LoanPanel',
    'WindowDataset',
    'build_windows',
    'clean_features',
    'derive_connectors',
    'ingest_panel',
    'prepare_panel',
    'read_window_dataset',
    'scale_minmax',
    'write_window_dataset',
    'SynthSpec',
    'synth_generate',
    'synth_panel',

    # Networks
    'LabeledWindow',
    'MultilayerTopology',
    'SnapshotSequence',
    'build_supra_adjacency',
    'isolate_nodes',

    # Models
    'Checkpoint',
    'ModelConfig',
    'TrainingHyper',
    'bind_config',
    'predict_window',
    'train',

    # Evaluation and explanation
    'EvaluationReport',
    'auc',
    'bootstrap_ci',
    'evaluate_scores',
    'f1',
    'attention_profile',
    'dependency_export',
    'shapley_attribution',
    'shapley_values',

    # Exceptions
    'DYMException',
    'CheckpointException',
    'ConfigException',
    'DataException',
    'DimensionException',
    'NumericException',

    '__version__',
]
