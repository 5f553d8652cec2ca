"""
Feature attribution and attention profiles for trained models.

Shapley values treat the d node features as players. A coalition keeps its
features and masks the rest with a baseline value across every snapshot and
replica of the window; its worth is the model's per-node probability.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.special import comb

from dymgnn.dataprep import FeatureSpec
from dymgnn.exceptions import ConfigException, DimensionException
from dymgnn.mlgraph import LabeledWindow, SnapshotSequence
from dymgnn.model import Checkpoint, predict_window

logger = logging.getLogger(__name__)

MAX_EXACT_PLAYERS = 10
DEFAULT_TOP_K = 4

SetFunction = Callable[[np.ndarray], Union[float, np.ndarray]]


def _subset_key(members: Sequence[int], num_players: int) -> Tuple[int, ...]:
    subset = np.zeros(num_players, dtype=np.int32)
    subset[list(members)] = 1
    return tuple(int(v) for v in subset)


def _evaluate_subsets(set_func: SetFunction, subsets: List[Tuple[int, ...]],
                      n_jobs: int) -> Dict[Tuple[int, ...], np.ndarray]:
    with Parallel(n_jobs=n_jobs) as parallel:
        results = parallel(delayed(set_func)(np.array(subset)) for subset in subsets)
    return {subset: np.asarray(result, dtype=np.float64) for subset, result in zip(subsets, results)}


def _exact_values(set_func: SetFunction, num_players: int, n_jobs: int) -> np.ndarray:
    subsets = [tuple(s) for s in itertools.product([0, 1], repeat=num_players)]
    worth = _evaluate_subsets(set_func, subsets, n_jobs)

    values = []
    for player in range(num_players):
        total = None
        for subset in subsets:
            if subset[player]:
                continue
            size = sum(subset)
            weight = 1.0 / (num_players * comb(num_players - 1, size))
            with_player = subset[:player] + (1,) + subset[player + 1:]
            term = weight * (worth[with_player] - worth[subset])
            total = term if total is None else total + term
        values.append(total)
    return np.array(values).T


def _permutation_values(set_func: SetFunction, num_players: int, samples: int, seed: int,
                        n_jobs: int) -> np.ndarray:
    permutations = [np.random.default_rng([seed, k]).permutation(num_players)
                    for k in range(samples)]
    needed = {_subset_key([], num_players), _subset_key(range(num_players), num_players)}
    for permutation in permutations:
        for stop in range(1, num_players):
            needed.add(_subset_key(permutation[:stop], num_players))
    worth = _evaluate_subsets(set_func, sorted(needed), n_jobs)

    total = None
    for permutation in permutations:
        contributions = [None] * num_players
        previous = worth[_subset_key([], num_players)]
        for stop in range(1, num_players + 1):
            current = worth[_subset_key(permutation[:stop], num_players)]
            contributions[permutation[stop - 1]] = current - previous
            previous = current
        sample = np.array(contributions)
        total = sample if total is None else total + sample
    return (total / samples).T


def shapley_values(set_func: SetFunction, num_players: int, samples: int = 50, seed: int = 0,
                   exact: bool = False, n_jobs: int = 1) -> np.ndarray:
    """
    Shapley values of a set function over binary membership vectors.

    Args:
        set_func: maps a 0/1 vector of length num_players to a float or an array
        num_players: number of players
        samples: permutations drawn when not exact; permutation k uses the
            generator seeded with (seed, k)
        seed: root seed
        exact: enumerate all 2^num_players coalitions instead of sampling
        n_jobs: joblib workers for coalition evaluation

    Returns:
        array of shape result_shape + (num_players,)

    Raises:
        ConfigException: zero samples, or exact mode with too many players
    """
    if num_players < 1:
        raise ConfigException("Shapley values need at least one player")
    if exact:
        if num_players > MAX_EXACT_PLAYERS:
            raise ConfigException(
                f"Exact enumeration supports up to {MAX_EXACT_PLAYERS} players, got {num_players}"
            )
        return _exact_values(set_func, num_players, n_jobs)
    if samples < 1:
        raise ConfigException(f"Shapley sampling needs at least one permutation, got {samples}")
    return _permutation_values(set_func, num_players, samples, seed, n_jobs)


def masked_sequence(sequence: SnapshotSequence, present: np.ndarray,
                    baseline: np.ndarray) -> SnapshotSequence:
    """Replace every absent feature by its baseline in all snapshots and replicas."""
    absent = ~np.asarray(present, dtype=bool)
    if absent.shape[0] != sequence.d or baseline.shape[0] != sequence.d:
        raise DimensionException(
            f"Mask of {absent.shape[0]} and baseline of {baseline.shape[0]} "
            f"for {sequence.d} features"
        )
    features = []
    for x in sequence.features:
        x = np.array(x)
        x[:, absent] = baseline[absent]
        features.append(x)
    return sequence.with_features(features)


class WindowWorth:
    """Set function: per-node probability of a checkpoint with a feature coalition kept."""

    def __init__(self, checkpoint: Checkpoint, window: LabeledWindow, baseline: np.ndarray):
        self.checkpoint = checkpoint
        self.window = window
        self.baseline = np.asarray(baseline, dtype=np.float64)

    def __call__(self, present: np.ndarray) -> np.ndarray:
        sequence = masked_sequence(self.window.sequence, present, self.baseline)
        scores, _ = predict_window(self.checkpoint.config, self.checkpoint.params,
                                   self.window.with_sequence(sequence))
        return scores


def masking_baseline(checkpoint: Checkpoint) -> np.ndarray:
    """Scaled training medians (modes for binaries) stored with the checkpoint."""
    if not checkpoint.scaling:
        raise ConfigException("Checkpoint carries no feature statistics for a masking baseline")
    return FeatureSpec.from_flat(checkpoint.scaling).baseline()


@dataclass
class AttributionTable:
    """Per-node, per-feature attributions of one window."""

    node_ids: Tuple[str, ...]
    feature_names: Tuple[str, ...]
    values: np.ndarray
    feature_values: np.ndarray
    expected: np.ndarray
    predictions: np.ndarray

    def importance(self) -> pd.DataFrame:
        """Mean absolute attribution per feature, largest first."""
        table = pd.DataFrame({
            'feature': list(self.feature_names),
            'mean_abs_attribution': np.abs(self.values).mean(axis=0),
        })
        return table.sort_values('mean_abs_attribution', ascending=False,
                                 kind='mergesort').reset_index(drop=True)

    def node_table(self) -> pd.DataFrame:
        """One row per node and feature: the feature value and its attribution."""
        n, d = self.values.shape
        return pd.DataFrame({
            'loan_id': np.repeat(list(self.node_ids), d),
            'feature': np.tile(list(self.feature_names), n),
            'feature_value': self.feature_values.ravel(),
            'attribution': self.values.ravel(),
        })

    def efficiency_gap(self) -> np.ndarray:
        """Per-node prediction minus baseline prediction minus the attribution sum."""
        return self.predictions - self.expected - self.values.sum(axis=1)


def shapley_attribution(checkpoint: Checkpoint, window: LabeledWindow, samples: int = 50,
                        seed: int = 0, exact: bool = False, n_jobs: int = 1,
                        baseline: Optional[np.ndarray] = None,
                        feature_names: Optional[Sequence[str]] = None) -> AttributionTable:
    """
    Shapley attribution of every node feature for every node of a window.

    Raises:
        ConfigException: zero samples or a checkpoint without feature statistics
    """
    d = window.sequence.d
    baseline = masking_baseline(checkpoint) if baseline is None else np.asarray(baseline, float)
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{j}" for j in range(d))
    worth = WindowWorth(checkpoint, window, baseline)

    values = shapley_values(worth, d, samples=samples, seed=seed, exact=exact, n_jobs=n_jobs)
    values = np.asarray(values, dtype=np.float64).reshape(window.n, d)
    logger.info(f"Attributed {d} features for {window.n} nodes "
                f"({'exact' if exact else f'{samples} permutations'})")
    return AttributionTable(
        node_ids=window.node_ids,
        feature_names=names,
        values=values,
        feature_values=np.array(window.sequence.features[-1][:window.n]),
        expected=worth(np.zeros(d, dtype=np.int32)),
        predictions=worth(np.ones(d, dtype=np.int32)),
    )


@dataclass
class AttentionProfile:
    """Mean normalized attention weight of each snapshot position."""

    scores: np.ndarray
    windows: int

    def rows(self) -> List[Dict[str, object]]:
        return [{'snapshot': t + 1, 'score': float(score)} for t, score in enumerate(self.scores)]


def attention_profile(checkpoint: Checkpoint, windows: Sequence[LabeledWindow]) -> AttentionProfile:
    """
    Average the attention weights over inference passes on the given windows.

    Raises:
        ConfigException: the model has no temporal attention, or no windows
    """
    config = checkpoint.config
    if not config.attention or config.is_baseline or config.is_static:
        raise ConfigException(f"{config.name} has no temporal attention")
    if not windows:
        raise ConfigException("An attention profile needs at least one window")
    collected = []
    for window in windows:
        _, beta = predict_window(config, checkpoint.params, window)
        collected.append(beta)
    scores = np.mean(np.stack(collected), axis=0).ravel()
    return AttentionProfile(scores=scores, windows=len(collected))


def _companion(values: np.ndarray, column: int) -> Optional[int]:
    target = values[:, column]
    if np.std(target) == 0.0:
        return None
    best, best_corr = None, -1.0
    for other in range(values.shape[1]):
        if other == column or np.std(values[:, other]) == 0.0:
            continue
        corr = abs(float(np.corrcoef(target, values[:, other])[0, 1]))
        if corr > best_corr:
            best, best_corr = other, corr
    return best


def dependency_export(table: AttributionTable, top_k: int = DEFAULT_TOP_K,
                      features: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """
    Scatter-plot rows for the most important features.

    Each row pairs a node's feature value and attribution with the value of
    the feature most correlated (absolute Pearson) with it; a constant
    feature has no companion.
    """
    if features is None:
        features = table.importance()['feature'].tolist()[:max(0, top_k)]
    frames = []
    for name in features:
        column = table.feature_names.index(name)
        partner = _companion(table.feature_values, column)
        frames.append(pd.DataFrame({
            'feature': name,
            'loan_id': list(table.node_ids),
            'feature_value': table.feature_values[:, column],
            'attribution': table.values[:, column],
            'companion': table.feature_names[partner] if partner is not None else '',
            'companion_value': table.feature_values[:, partner] if partner is not None
            else np.full(len(table.node_ids), np.nan),
        }))
    if not frames:
        return pd.DataFrame(columns=['feature', 'loan_id', 'feature_value', 'attribution',
                                     'companion', 'companion_value'])
    return pd.concat(frames, ignore_index=True)
