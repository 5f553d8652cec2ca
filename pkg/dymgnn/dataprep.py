"""
Loan panel ingestion, feature cleaning and rolling-window construction.

A panel is one row per loan-month. Windows are built over consecutive months;
each window's nodes are the loans observed in every month of the window and
its layers connect loans that share a connector key (area or company).
"""

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from dymgnn.exceptions import DataException
from dymgnn.mlgraph import (
    LabeledWindow,
    SnapshotSequence,
    build_supra_adjacency,
    describe_network,
    detach_nodes,
    isolation_sample,
    read_header,
    read_topology,
    replicate_features,
    write_topology,
)
from dymgnn.utils import (
    PERIOD_PATTERN,
    atomic_write_text,
    derive_seed,
    ensure_directory,
    months_between,
    period_range,
    shift_period,
)

logger = logging.getLogger(__name__)

FEATURES: Tuple[str, ...] = (
    'fico', 'if_fthb', 'mi_pct', 'cnt_units', 'if_prim_res', 'dti', 'ltv', 'if_corr',
    'if_sf', 'if_purc', 'cnt_borr', 'if_sc', 'current_upb', 'if_delq_sts', 'mths_remng',
    'current_int_rt',
)
BINARY_FEATURES = frozenset({
    'if_fthb', 'if_prim_res', 'if_corr', 'if_sf', 'if_purc', 'if_sc', 'if_delq_sts',
})
BEHAVIOURAL_FEATURES: Tuple[str, ...] = ('current_upb', 'if_delq_sts', 'mths_remng', 'current_int_rt')
STATIC_FEATURES: Tuple[str, ...] = tuple(f for f in FEATURES if f not in BEHAVIOURAL_FEATURES)

ID_COLUMNS = ('loan_id', 'period')
CONNECTOR_COLUMNS = ('zipcode', 'company')
PANEL_COLUMNS: Tuple[str, ...] = ID_COLUMNS + FEATURES + CONNECTOR_COLUMNS + ('default',)

LAYER_CHOICES = {
    'area': ('area',),
    'company': ('company',),
    'both': ('area', 'company'),
}

ZIP_PATTERN = r'^\d{2,5}$'
MANIFEST_FILE = 'manifest.txt'
FEATURE_SPEC_FILE = 'feature_spec.json'
NODES_FILE = 'nodes.csv'
DATASET_FORMAT = 'dymgnn-windows'


def behavioural_columns() -> Tuple[int, ...]:
    """Positions of the behavioural features in FEATURES."""
    return tuple(FEATURES.index(name) for name in BEHAVIOURAL_FEATURES)


def month_index(periods) -> np.ndarray:
    """Months since year 0 of YYYY-MM labels; blanks and malformed labels give NaN."""
    labels = pd.Series(list(periods), dtype=object).fillna('').astype(str).str.strip()
    valid = labels.str.match(PERIOD_PATTERN.pattern).to_numpy(dtype=bool)
    out = np.full(len(labels), np.nan)
    if valid.any():
        chosen = labels[valid]
        out[valid] = (chosen.str.slice(0, 4).astype(int) * 12
                      + chosen.str.slice(5, 7).astype(int) - 1).to_numpy(dtype=np.float64)
    return out


def label_defaults(default_months, periods, horizon: int, outcome_end: str) -> np.ndarray:
    """
    Default flags from the month each loan first reached 90+ days in arrears.

    The flag of a loan-month t is 1 when the default month falls in (t, t + horizon],
    0 when it does not, and NaN when t + horizon lies past outcome_end and no
    default has been seen yet (outcome unknown).
    """
    if horizon < 1:
        raise DataException(f"Label horizon must be positive, got {horizon}")
    t = month_index(periods)
    d = month_index(default_months)
    end = month_index([outcome_end])[0]
    if np.isnan(end):
        raise DataException(f"Invalid outcome end period: {outcome_end!r}")
    with np.errstate(invalid='ignore'):
        hit = (d > t) & (d <= t + horizon)
    labels = np.where(hit, 1.0, 0.0)
    labels[~hit & (t + horizon > end)] = np.nan
    return labels


@dataclass(frozen=True)
class RejectedRow:
    line: int
    loan_id: str
    reason: str


@dataclass
class LoanPanel:
    """Typed loan-month records plus the rows rejected while reading them."""

    frame: pd.DataFrame
    rejects: List[RejectedRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def periods(self) -> List[str]:
        return sorted(self.frame['period'].unique().tolist())

    @property
    def loans(self) -> List[str]:
        return sorted(self.frame['loan_id'].unique().tolist())

    def between(self, start: Optional[str] = None, end: Optional[str] = None) -> 'LoanPanel':
        """Rows with start <= period <= end (either bound optional)."""
        mask = pd.Series(True, index=self.frame.index)
        if start:
            mask &= self.frame['period'] >= start
        if end:
            mask &= self.frame['period'] <= end
        return LoanPanel(frame=self.frame[mask].reset_index(drop=True), rejects=self.rejects)

    def rejects_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.__dict__ for r in self.rejects], columns=['line', 'loan_id', 'reason'])


def ingest_panel(path: str, horizon: int = 12) -> LoanPanel:
    """
    Read a loan-month panel CSV.

    Args:
        path: UTF-8 CSV with a header row
        horizon: months used to derive the default flag when the file has only
            default_month

    Returns:
        LoanPanel; malformed rows are listed in panel.rejects with their line number

    Raises:
        DataException: unreadable file, missing column or duplicate (loan, period)
    """
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8')
    except FileNotFoundError:
        raise DataException(f"Panel file not found: {path}")
    except pd.errors.EmptyDataError:
        raise DataException(f"Panel file {path} has no header")
    except (UnicodeDecodeError, pd.errors.ParserError) as e:
        raise DataException(f"Cannot parse panel file {path}: {e}")

    panel = panel_from_frame(raw, horizon=horizon)
    logger.info(f"Ingested {len(panel)} loan-months from {path} "
                f"({len(panel.rejects)} rejected rows)")
    return panel


def panel_from_frame(raw: pd.DataFrame, horizon: int = 12,
                     outcome_end: Optional[str] = None) -> LoanPanel:
    """
    Validate and type an in-memory panel (any dtypes; blanks or NaN mean missing).

    Line numbers in the rejects report assume row k of raw came from line k + 2.
    """
    raw = raw.copy()
    raw.columns = [str(c).strip() for c in raw.columns]
    required = list(ID_COLUMNS + FEATURES + CONNECTOR_COLUMNS)
    missing = [c for c in required if c not in raw.columns]
    if 'default' not in raw.columns and 'default_month' not in raw.columns:
        missing.append('default')
    if missing:
        raise DataException(f"Panel is missing mandatory columns: {', '.join(missing)}")

    raw = raw.reset_index(drop=True)
    text = {c: raw[c].where(raw[c].notna(), '').astype(str).str.strip() for c in raw.columns}
    reasons = pd.Series('', index=raw.index, dtype=object)

    def flag(mask: pd.Series, reason: str):
        reasons[mask & (reasons == '')] = reason

    flag(text['loan_id'] == '', 'missing loan_id')
    flag(~text['period'].str.match(PERIOD_PATTERN.pattern), 'invalid period')

    typed = pd.DataFrame({'loan_id': text['loan_id'], 'period': text['period']})
    for name in FEATURES:
        column = text[name]
        values = pd.to_numeric(column.where(column != ''), errors='coerce')
        unreadable = values.isna() | ~np.isfinite(values.fillna(0.0))
        flag((column != '') & unreadable, f"non-numeric {name}")
        if name in BINARY_FEATURES:
            flag(values.notna() & ~values.isin([0.0, 1.0]), f"{name} not 0/1")
        typed[name] = values.astype(np.float64)

    typed['zipcode'] = text['zipcode']
    typed['company'] = text['company']

    if 'default' in raw.columns:
        column = text['default']
        values = pd.to_numeric(column.where(column != ''), errors='coerce')
        flag((column != '') & ~values.isin([0.0, 1.0]), 'default not 0/1')
        typed['default'] = values.astype(np.float64)
    if 'default_month' in raw.columns:
        column = text['default_month']
        flag((column != '') & ~column.str.match(PERIOD_PATTERN.pattern), 'invalid default_month')
        typed['default_month'] = column

    bad = reasons != ''
    rejects = [
        RejectedRow(line=int(i) + 2, loan_id=text['loan_id'][i], reason=reasons[i])
        for i in raw.index[bad.to_numpy()]
    ]
    for reject in rejects[:10]:
        logger.debug(f"Rejected line {reject.line}: {reject.reason}")

    frame = typed[~bad].reset_index(drop=True)
    duplicated = frame.duplicated(['loan_id', 'period'], keep=False)
    if duplicated.any():
        first = frame[duplicated].iloc[0]
        raise DataException(
            f"Duplicate (loan, period) records, first: ({first['loan_id']}, {first['period']})"
        )

    if 'default' not in frame.columns:
        if outcome_end is None:
            observed = [p for p in frame['period'].tolist() + frame['default_month'].tolist() if p]
            outcome_end = max(observed) if observed else '0001-01'
        frame['default'] = label_defaults(frame['default_month'], frame['period'],
                                          horizon, outcome_end)

    frame = frame.sort_values(['loan_id', 'period'], kind='mergesort').reset_index(drop=True)
    _warn_gaps(frame)
    return LoanPanel(frame=frame, rejects=rejects)


def _warn_gaps(frame: pd.DataFrame):
    if frame.empty:
        return
    index = month_index(frame['period'])
    spans = pd.DataFrame({'loan_id': frame['loan_id'], 'm': index}).groupby('loan_id')['m']
    gaps = (spans.max() - spans.min() + 1) != spans.count()
    if gaps.any():
        logger.warning(f"{int(gaps.sum())} loans have non-contiguous periods")


@dataclass(frozen=True)
class FeatureStats:
    """Training statistics of one feature."""

    name: str
    binary: bool
    behavioural: bool
    lower: float
    upper: float
    median: float
    mode: float
    minimum: float
    maximum: float

    @property
    def fill(self) -> float:
        return self.mode if self.binary else self.median

    @property
    def kind(self) -> str:
        return ('behavioural' if self.behavioural else 'static') + '/' + \
            ('binary' if self.binary else 'numeric')

    def scale(self, values):
        values = np.asarray(values, dtype=np.float64)
        if self.binary:
            return values
        span = self.maximum - self.minimum
        if span <= 0.0:
            return np.zeros_like(values)
        return np.clip((values - self.minimum) / span, 0.0, 1.0)

    @property
    def scaled_fill(self) -> float:
        return float(self.scale(np.array([self.fill]))[0])


@dataclass
class FeatureSpec:
    """Cap, imputation and scaling statistics fitted on training periods."""

    stats: Dict[str, FeatureStats]
    fit_start: str = ''
    fit_end: str = ''

    @property
    def feature_names(self) -> List[str]:
        return [name for name in FEATURES if name in self.stats]

    @classmethod
    def fit(cls, panel: LoanPanel, start: Optional[str] = None,
            end: Optional[str] = None) -> 'FeatureSpec':
        """
        Fit on the rows with start <= period <= end.

        Numeric caps are the 1st and 99th percentiles (linear interpolation);
        missing numerics take the median and missing binaries the mode.

        Raises:
            DataException: no training rows or an all-missing feature
        """
        frame = panel.between(start, end).frame
        if frame.empty:
            raise DataException(f"No panel rows in the fit range {start or '-'}..{end or '-'}")

        stats = {}
        for name in FEATURES:
            values = frame[name].to_numpy(dtype=np.float64)
            present = values[~np.isnan(values)]
            if present.size == 0:
                raise DataException(f"Feature {name} is missing in every training row")
            if name in BINARY_FEATURES:
                ones = int(np.sum(present == 1.0))
                mode = 1.0 if ones > present.size - ones else 0.0
                stats[name] = FeatureStats(name, True, name in BEHAVIOURAL_FEATURES,
                                           0.0, 1.0, mode, mode, 0.0, 1.0)
                continue
            lower, upper = np.percentile(present, [1.0, 99.0])
            median = float(np.median(present))
            cleaned = np.clip(np.where(np.isnan(values), median, values), lower, upper)
            stats[name] = FeatureStats(name, False, name in BEHAVIOURAL_FEATURES,
                                       float(lower), float(upper), median, median,
                                       float(cleaned.min()), float(cleaned.max()))

        logger.info(f"Fitted feature statistics on {len(frame)} rows "
                    f"({start or 'first'}..{end or 'last'} period)")
        return cls(stats=stats, fit_start=start or '', fit_end=end or '')

    def baseline(self) -> np.ndarray:
        """Scaled imputation values, the masking baseline for attributions."""
        return np.array([self.stats[name].scaled_fill for name in self.feature_names])

    def to_flat(self) -> Dict[str, str]:
        flat = {'fit_start': self.fit_start, 'fit_end': self.fit_end}
        for name, stat in self.stats.items():
            for key in ('lower', 'upper', 'median', 'mode', 'minimum', 'maximum'):
                flat[f"{name}.{key}"] = repr(float(getattr(stat, key)))
        return flat

    @classmethod
    def from_flat(cls, flat: Dict[str, str]) -> 'FeatureSpec':
        stats = {}
        for name in FEATURES:
            if f"{name}.lower" not in flat:
                continue
            try:
                values = {key: float(flat[f"{name}.{key}"])
                          for key in ('lower', 'upper', 'median', 'mode', 'minimum', 'maximum')}
            except (KeyError, ValueError) as e:
                raise DataException(f"Incomplete statistics for feature {name}: {e}")
            stats[name] = FeatureStats(name=name, binary=name in BINARY_FEATURES,
                                       behavioural=name in BEHAVIOURAL_FEATURES, **values)
        return cls(stats=stats, fit_start=flat.get('fit_start', ''),
                   fit_end=flat.get('fit_end', ''))

    def to_json(self) -> str:
        return json.dumps(self.to_flat(), indent=2, sort_keys=True) + '\n'

    @classmethod
    def from_json(cls, text: str) -> 'FeatureSpec':
        try:
            return cls.from_flat(json.loads(text))
        except json.JSONDecodeError as e:
            raise DataException(f"Malformed feature statistics: {e}")


def clean_features(panel: LoanPanel, spec: FeatureSpec) -> LoanPanel:
    """Clip numerics to their training caps and impute missing values."""
    frame = panel.frame.copy()
    for name, stat in spec.stats.items():
        column = frame[name]
        if not stat.binary:
            column = column.clip(stat.lower, stat.upper)
        frame[name] = column.fillna(stat.fill)
    return LoanPanel(frame=frame, rejects=panel.rejects)


def scale_minmax(panel: LoanPanel, spec: FeatureSpec) -> LoanPanel:
    """Min-max scale numerics with training statistics, clamped to [0, 1]."""
    frame = panel.frame.copy()
    for name, stat in spec.stats.items():
        frame[name] = stat.scale(frame[name].to_numpy(dtype=np.float64))
    return LoanPanel(frame=frame, rejects=panel.rejects)


def training_fit_end(panel: LoanPanel, held_out: int, stride: int = 1,
                     end: Optional[str] = None) -> str:
    """
    Last month of the last training window.

    The final held_out windows (validation and test) are excluded, so their
    months never reach the scaling statistics.

    Raises:
        DataException: no months left for fitting
    """
    if held_out < 0 or stride < 1:
        raise DataException(f"held_out must be >= 0 and stride positive ({held_out}, {stride})")
    periods = panel.between(None, end).periods
    if not periods:
        raise DataException("The panel has no records in the requested period range")
    fit_end = shift_period(periods[-1], -held_out * stride)
    if fit_end < periods[0]:
        raise DataException(f"Holding out {held_out} windows leaves no training months "
                            f"before {periods[-1]}")
    return fit_end


def prepare_panel(panel: LoanPanel, fit_start: Optional[str] = None,
                  fit_end: Optional[str] = None) -> Tuple[LoanPanel, FeatureSpec]:
    """Fit statistics on [fit_start, fit_end], then clean and scale the whole panel."""
    spec = FeatureSpec.fit(panel, fit_start, fit_end)
    return scale_minmax(clean_features(panel, spec), spec), spec


def derive_connectors(panel: LoanPanel) -> pd.DataFrame:
    """
    Per-loan connector keys, indexed by loan_id.

    The area key is the first two digits of the zip code; a malformed zip
    leaves the loan out of the area layer only. The company key is the
    trimmed, upper-cased company identifier.
    """
    first = panel.frame.groupby('loan_id', sort=True)[['zipcode', 'company']].first()
    zipcode = first['zipcode'].astype(str).str.strip()
    valid = zipcode.str.match(ZIP_PATTERN)
    if (~valid).any():
        logger.warning(f"{int((~valid).sum())} loans have a malformed zip code and "
                       f"are left out of the area layer")
    return pd.DataFrame({
        'area_key': zipcode.str.slice(0, 2).where(valid, ''),
        'company_key': first['company'].astype(str).str.strip().str.upper(),
        'area_valid': valid,
    }, index=first.index)


def clique_edges(keys: Sequence[str]) -> np.ndarray:
    """Edges joining every pair of positions sharing a non-empty key."""
    keys = np.asarray(list(keys), dtype=object)
    blocks = []
    for key in sorted(set(keys.tolist()) - {''}):
        members = np.flatnonzero(keys == key)
        if members.size < 2:
            continue
        a, b = np.triu_indices(members.size, k=1)
        blocks.append(np.column_stack([members[a], members[b]]))
    if not blocks:
        return np.zeros((0, 2), dtype=np.int64)
    return np.concatenate(blocks).astype(np.int64)


@dataclass
class WindowDataset:
    """Ordered windows sharing one feature layout and layer selection."""

    windows: List[LabeledWindow]
    feature_names: Tuple[str, ...]
    layer_names: Tuple[str, ...]
    isolation_masks: List[np.ndarray] = field(default_factory=list)
    dropped: List[Tuple[str, str]] = field(default_factory=list)
    settings: Dict[str, str] = field(default_factory=dict)
    spec: Optional[FeatureSpec] = None

    def __len__(self) -> int:
        return len(self.windows)

    def window(self, position: int) -> LabeledWindow:
        """Window by position; negative positions count from the end."""
        if not self.windows:
            raise DataException("The dataset has no windows")
        try:
            return self.windows[position]
        except IndexError:
            raise DataException(f"Window {position} out of range (dataset has {len(self.windows)})")

    def summary_rows(self) -> List[Dict[str, object]]:
        return [{
            'window': k,
            'first_period': w.sequence.timestamps[0],
            'last_period': w.sequence.timestamps[-1],
            'nodes': w.n,
            'defaults': int(np.sum(w.labels)),
        } for k, w in enumerate(self.windows)]


def build_windows(panel: LoanPanel, window_len: int = 6, stride: int = 1,
                  layers: str = 'both', isolate_fraction: float = 0.5, seed: int = 0,
                  start: Optional[str] = None, end: Optional[str] = None) -> WindowDataset:
    """
    Build rolling windows over the consecutive months of a cleaned, scaled panel.

    Nodes of a window are the loans with a record in every window month, in
    loan_id order. Static features come from the first window month;
    behavioural features are the month's own values. A node's label is its
    default flag at the last window month; windows with an unknown label are
    dropped with a warning.

    Args:
        panel: cleaned and scaled panel
        window_len: snapshots per window
        stride: months between consecutive window starts
        layers: 'area', 'company' or 'both'
        isolate_fraction: share of nodes whose intra-layer edges are removed
        seed: isolation seed
        start: first period considered (optional)
        end: last period considered (optional)

    Raises:
        DataException: fewer months than window_len, or an unknown layer choice
    """
    if layers not in LAYER_CHOICES:
        raise DataException(f"Unknown layer choice {layers!r}; use area, company or both")
    if window_len < 1 or stride < 1:
        raise DataException(f"window_len and stride must be positive ({window_len}, {stride})")
    layer_names = LAYER_CHOICES[layers]

    scoped = panel.between(start, end)
    present = scoped.periods
    if not present:
        raise DataException("The panel has no records in the requested period range")
    months = period_range(present[0], months_between(present[0], present[-1]) + 1)
    if len(months) < window_len:
        raise DataException(f"Panel covers {len(months)} months, fewer than the window "
                            f"length {window_len}")

    frame = scoped.frame
    by_period = {p: g.set_index('loan_id') for p, g in frame.groupby('period', sort=True)}
    connectors = derive_connectors(scoped)
    columns = list(FEATURES)
    static_positions = [columns.index(name) for name in STATIC_FEATURES]

    windows: List[LabeledWindow] = []
    masks: List[np.ndarray] = []
    dropped: List[Tuple[str, str]] = []
    for position, first in enumerate(range(0, len(months) - window_len + 1, stride)):
        span = months[first:first + window_len]
        frames = [by_period.get(p) for p in span]
        if any(f is None for f in frames):
            dropped.append((span[0], 'month without records'))
            logger.warning(f"Window starting {span[0]} dropped: a month has no records")
            continue
        common = set(frames[0].index)
        for f in frames[1:]:
            common &= set(f.index)
        loans = sorted(common)
        if not loans:
            dropped.append((span[0], 'no loan observed in every month'))
            logger.warning(f"Window starting {span[0]} dropped: no loan spans all months")
            continue

        labels = frames[-1].loc[loans, 'default'].to_numpy(dtype=np.float64)
        if np.isnan(labels).any():
            dropped.append((span[0], 'horizon extends beyond available outcome data'))
            logger.warning(f"Window {span[0]}..{span[-1]} dropped: horizon extends beyond "
                           f"available outcome data")
            continue

        static = frames[0].loc[loans, columns].to_numpy(dtype=np.float64)[:, static_positions]
        snapshots = []
        for f in frames:
            block = f.loc[loans, columns].to_numpy(dtype=np.float64)
            block[:, static_positions] = static
            snapshots.append(replicate_features(block, len(layer_names)))

        keys = connectors.loc[loans]
        area_keys = tuple(keys['area_key'].tolist())
        company_keys = tuple(keys['company_key'].tolist())
        edge_lists = [clique_edges(area_keys if name == 'area' else company_keys)
                      for name in layer_names]
        topology = build_supra_adjacency(edge_lists, len(loans), len(layer_names), layer_names)
        base = SnapshotSequence(topology=topology, features=tuple(snapshots), timestamps=tuple(span))
        mask = isolation_sample(len(loans), isolate_fraction, derive_seed(seed, position))
        windows.append(LabeledWindow(
            sequence=detach_nodes(base, mask), labels=labels, node_ids=tuple(loans),
            base_sequence=base, index=len(windows),
            area_keys=area_keys, company_keys=company_keys,
        ))
        masks.append(mask)
        logger.debug(f"Window {span[0]}..{span[-1]}: {len(loans)} nodes, "
                     f"{int(labels.sum())} defaults")

    logger.info(f"Built {len(windows)} windows over {len(months)} months "
                f"({len(dropped)} dropped)")
    settings = {
        'window_len': str(window_len),
        'stride': str(stride),
        'layers': layers,
        'isolate_fraction': repr(float(isolate_fraction)),
        'seed': str(seed),
    }
    return WindowDataset(windows=windows, feature_names=FEATURES, layer_names=layer_names,
                         isolation_masks=masks, dropped=dropped, settings=settings)


def write_window_dataset(dataset: WindowDataset, directory: str):
    """
    Write a window dataset directory.

    manifest.txt is written last, so a directory without one is incomplete.
    """
    ensure_directory(directory)
    if dataset.spec is not None:
        atomic_write_text(os.path.join(directory, FEATURE_SPEC_FILE), dataset.spec.to_json())

    for k, window in enumerate(dataset.windows):
        target = os.path.join(directory, f"window_{k}")
        base = window.base_sequence or window.sequence
        write_topology(base.topology, target, extra={
            'periods': ','.join(window.sequence.timestamps),
            'index': k,
        })
        mask = dataset.isolation_masks[k] if k < len(dataset.isolation_masks) \
            else np.zeros(window.n, dtype=bool)
        pd.DataFrame({
            'index': np.arange(window.n),
            'loan_id': list(window.node_ids),
            'area_key': list(window.area_keys or [''] * window.n),
            'company_key': list(window.company_keys or [''] * window.n),
            'label': window.labels.astype(np.int64),
            'isolated': mask.astype(np.int64),
        }).to_csv(os.path.join(target, NODES_FILE), index=False)
        for t, features in enumerate(base.features):
            pd.DataFrame(features[:window.n], columns=list(dataset.feature_names)).to_csv(
                os.path.join(target, f"snapshot_{t}.csv"), index=False)

    lines = [f"format = {DATASET_FORMAT}"]
    lines += [f"{key} = {value}" for key, value in sorted(dataset.settings.items())]
    lines.append(f"features = {','.join(dataset.feature_names)}")
    lines.append(f"layer_names = {','.join(dataset.layer_names)}")
    lines.append(f"windows = {len(dataset.windows)}")
    if dataset.windows:
        network = describe_network(dataset.windows[0].sequence)
        lines.append('[network]')
        for key, value in network.items():
            if isinstance(value, dict):
                value = ','.join(f"{name}:{count}" for name, count in value.items())
            lines.append(f"{key} = {value}")
    lines.append('[windows]')
    lines.append('window,first_period,last_period,nodes,defaults')
    lines += [','.join(str(row[c]) for c in ('window', 'first_period', 'last_period',
                                             'nodes', 'defaults'))
              for row in dataset.summary_rows()]
    lines.append('[dropped]')
    lines.append('first_period,reason')
    lines += [f"{first},{reason}" for first, reason in dataset.dropped]
    atomic_write_text(os.path.join(directory, MANIFEST_FILE), '\n'.join(lines) + '\n')
    logger.info(f"Wrote {len(dataset.windows)} windows to {directory}")


def read_manifest(directory: str) -> Tuple[Dict[str, str], Dict[str, List[str]]]:
    """Top-level key = value settings and the raw lines of each [section]."""
    path = os.path.join(directory, MANIFEST_FILE)
    if not os.path.exists(path):
        raise DataException(f"Window manifest not found: {path}")
    settings: Dict[str, str] = {}
    sections: Dict[str, List[str]] = {}
    current = None
    with open(path, encoding='utf-8') as f:
        for line in f:
            line = line.rstrip('\n')
            if line.startswith('[') and line.endswith(']'):
                current = line[1:-1]
                sections[current] = []
            elif current is not None:
                sections[current].append(line)
            elif ' = ' in line:
                key, value = line.split(' = ', 1)
                settings[key] = value
    if settings.get('format') != DATASET_FORMAT:
        raise DataException(f"{path} is not a window dataset manifest")
    return settings, sections


def read_window_dataset(directory: str) -> WindowDataset:
    """
    Read a directory written by write_window_dataset.

    Isolation is rebuilt from the per-node isolated flags.

    Raises:
        DataException: missing or malformed files
    """
    settings, sections = read_manifest(directory)
    try:
        count = int(settings['windows'])
        feature_names = tuple(settings['features'].split(','))
        layer_names = tuple(settings['layer_names'].split(','))
    except (KeyError, ValueError) as e:
        raise DataException(f"Malformed window manifest in {directory}: {e}")

    spec = None
    spec_path = os.path.join(directory, FEATURE_SPEC_FILE)
    if os.path.exists(spec_path):
        with open(spec_path, encoding='utf-8') as f:
            spec = FeatureSpec.from_json(f.read())

    windows, masks = [], []
    for k in range(count):
        source = os.path.join(directory, f"window_{k}")
        header = read_header(source)
        topology = read_topology(source)
        periods = tuple(p for p in header.get('periods', '').split(',') if p)
        try:
            nodes = pd.read_csv(os.path.join(source, NODES_FILE), dtype=str,
                                keep_default_na=False)
            snapshots = [
                pd.read_csv(os.path.join(source, f"snapshot_{t}.csv"),
                            float_precision='round_trip')[list(feature_names)].to_numpy(np.float64)
                for t in range(len(periods))
            ]
        except (OSError, KeyError, pd.errors.ParserError) as e:
            raise DataException(f"Cannot read window {source}: {e}")

        mask = nodes['isolated'].astype(int).to_numpy() == 1
        base = SnapshotSequence(
            topology=topology,
            features=tuple(replicate_features(s, topology.l) for s in snapshots),
            timestamps=periods,
        )
        windows.append(LabeledWindow(
            sequence=detach_nodes(base, mask),
            labels=nodes['label'].astype(float).to_numpy(),
            node_ids=tuple(nodes['loan_id'].tolist()),
            base_sequence=base, index=k,
            area_keys=tuple(nodes['area_key'].tolist()),
            company_keys=tuple(nodes['company_key'].tolist()),
        ))
        masks.append(mask)

    dropped = [tuple(line.split(',', 1)) for line in sections.get('dropped', [])[1:] if line]
    known = ('format', 'features', 'layer_names', 'windows')
    logger.debug(f"Read {count} windows from {directory}")
    return WindowDataset(windows=windows, feature_names=feature_names, layer_names=layer_names,
                         isolation_masks=masks, dropped=dropped,
                         settings={k: v for k, v in settings.items() if k not in known},
                         spec=spec)
