"""
Classification metrics and bootstrap confidence intervals.
"""

import logging
from dataclasses import asdict, dataclass
from functools import partial
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy.stats import rankdata

from dymgnn.exceptions import DataException
from dymgnn.utils import chunked

logger = logging.getLogger(__name__)

DEFAULT_RESAMPLES = 1000
DEFAULT_THRESHOLD = 0.5
MAX_REDRAWS = 1000


def _as_arrays(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=np.float64).ravel()
    if scores.shape != labels.shape:
        raise DataException(f"{scores.shape[0]} scores for {labels.shape[0]} labels")
    if not np.all(np.isin(labels, (0.0, 1.0))):
        raise DataException("Labels must be 0 or 1")
    return scores, labels


def auc(scores, labels) -> float:
    """
    Rank-based (Mann-Whitney) area under the ROC curve; ties count one half.

    Raises:
        DataException: if only one class is present
    """
    scores, labels = _as_arrays(scores, labels)
    positives = int(labels.sum())
    negatives = labels.shape[0] - positives
    if positives == 0 or negatives == 0:
        raise DataException("AUC needs both classes in the labels")
    ranks = rankdata(scores, method='average')
    rank_sum = ranks[labels == 1.0].sum()
    return float((rank_sum - positives * (positives + 1) / 2.0) / (positives * negatives))


def confusion_counts(scores, labels, threshold: float = DEFAULT_THRESHOLD) -> Dict[str, int]:
    scores, labels = _as_arrays(scores, labels)
    predicted = scores >= threshold
    actual = labels == 1.0
    return {
        'tp': int(np.sum(predicted & actual)),
        'fp': int(np.sum(predicted & ~actual)),
        'fn': int(np.sum(~predicted & actual)),
        'tn': int(np.sum(~predicted & ~actual)),
    }


def precision_recall(scores, labels, threshold: float = DEFAULT_THRESHOLD):
    counts = confusion_counts(scores, labels, threshold)
    predicted = counts['tp'] + counts['fp']
    actual = counts['tp'] + counts['fn']
    precision = counts['tp'] / predicted if predicted else 0.0
    recall = counts['tp'] / actual if actual else 0.0
    return precision, recall


def f1(scores, labels, threshold: float = DEFAULT_THRESHOLD) -> float:
    """F1 of the predictions score >= threshold; zero-division cases give 0."""
    precision, recall = precision_recall(scores, labels, threshold)
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class MetricInterval:
    point: float
    lower: float
    upper: float


def _resample_chunk(metric: Callable, scores: np.ndarray, labels: np.ndarray, seed: int,
                    indices: Sequence[int]) -> List[float]:
    values = []
    n = scores.shape[0]
    for b in indices:
        rng = np.random.default_rng([seed, b])
        for _ in range(MAX_REDRAWS):
            picks = rng.integers(0, n, size=n)
            sample = labels[picks]
            if 0.0 < sample.sum() < n:
                break
        else:
            raise DataException(f"Bootstrap resample {b} stayed single-class after {MAX_REDRAWS} draws")
        values.append(metric(scores[picks], sample))
    return values


def bootstrap_ci(metric: Callable, scores, labels, resamples: int = DEFAULT_RESAMPLES,
                 seed: int = 0, confidence: float = 0.95, n_jobs: int = 1) -> MetricInterval:
    """
    Percentile bootstrap interval of a metric over the test set.

    Each resample b draws from its own generator seeded with (seed, b), so
    the result does not depend on n_jobs. Single-class resamples are redrawn.
    The interval is widened to include the point estimate when the
    percentiles fall on one side of it.

    Args:
        metric: callable(scores, labels) -> float
        scores: predicted scores
        labels: binary labels
        resamples: number of resamples
        seed: root seed
        confidence: interval mass
        n_jobs: joblib workers

    Returns:
        MetricInterval(point, lower, upper)

    Raises:
        DataException: fewer than two observations or a single-class sample
    """
    scores, labels = _as_arrays(scores, labels)
    n = scores.shape[0]
    if n < 2:
        raise DataException("Bootstrap needs at least two observations")
    if labels.sum() in (0.0, float(n)):
        raise DataException("Bootstrap needs both classes in the original sample")

    point = float(metric(scores, labels))
    chunks = list(chunked(list(range(resamples)), max(1, n_jobs)))
    with Parallel(n_jobs=n_jobs) as parallel:
        results = parallel(
            delayed(_resample_chunk)(metric, scores, labels, seed, chunk) for chunk in chunks
        )
    values = np.array([value for chunk in results for value in chunk])

    tail = (1.0 - confidence) / 2.0 * 100.0
    lower, upper = np.percentile(values, [tail, 100.0 - tail])
    return MetricInterval(point=point, lower=float(min(lower, point)),
                          upper=float(max(upper, point)))


@dataclass
class EvaluationReport:
    """Metrics of one model on one test window."""

    model: str
    auc: MetricInterval
    f1: MetricInterval
    threshold: float
    n_nodes: int
    train_seconds: Optional[float] = None
    score_seconds: float = 0.0
    checkpoint: str = ''

    def row(self) -> Dict[str, object]:
        row = {
            'model': self.model,
            'checkpoint': self.checkpoint,
            'n_nodes': self.n_nodes,
            'threshold': self.threshold,
        }
        for name, interval in (('auc', self.auc), ('f1', self.f1)):
            for key, value in asdict(interval).items():
                row[name if key == 'point' else f"{name}_{key}"] = value
        row['train_seconds'] = self.train_seconds
        row['score_seconds'] = self.score_seconds
        return row


def evaluate_scores(model: str, scores, labels, threshold: float = DEFAULT_THRESHOLD,
                    resamples: int = DEFAULT_RESAMPLES, seed: int = 0,
                    n_jobs: int = 1) -> EvaluationReport:
    """AUC and F1 with bootstrap intervals sharing one seed."""
    scores, labels = _as_arrays(scores, labels)
    f1_at = partial(f1, threshold=threshold)
    return EvaluationReport(
        model=model,
        auc=bootstrap_ci(auc, scores, labels, resamples, seed, n_jobs=n_jobs),
        f1=bootstrap_ci(f1_at, scores, labels, resamples, seed, n_jobs=n_jobs),
        threshold=threshold,
        n_nodes=int(scores.shape[0]),
    )
