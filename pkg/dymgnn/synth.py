"""
Synthetic loan panels.

Application features are drawn once per loan from truncated normals whose
means match a typical fixed-rate mortgage book. Behavioural features evolve
monthly: balances amortize, delinquency follows a two-state chain and the
default hazard depends on the loan's own risk, its delinquency and the share
of delinquent loans it shares an area or company with.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import brentq
from scipy.special import expit
from scipy.stats import truncnorm

from dymgnn.dataprep import FEATURES, LoanPanel, panel_from_frame
from dymgnn.exceptions import ConfigException, DataException
from dymgnn.utils import is_valid_period, period_range

logger = logging.getLogger(__name__)

# mean, std, min, max
NUMERIC_TARGETS: Dict[str, Tuple[float, float, float, float]] = {
    'fico': (752.76, 44.75, 565.0, 832.0),
    'mi_pct': (2.40, 7.40, 0.0, 35.0),
    'dti': (33.61, 11.15, 1.0, 65.0),
    'ltv': (69.30, 16.07, 7.0, 97.0),
    'current_upb': (173036.6, 97258.3, 13829.33, 716617.5),
    'mths_remng': (304.58, 65.55, 73.0, 574.0),
    'current_int_rt': (4.88, 0.45, 3.25, 7.25),
}
BINARY_RATES = {
    'if_fthb': 0.137,
    'if_prim_res': 0.914,
    'if_corr': 0.397,
    'if_sf': 0.716,
    'if_purc': 0.358,
    'if_sc': 0.0094,
}
UNIT_COUNTS = (1, 2, 3, 4)
UNIT_SHARES = (0.97, 0.02, 0.005, 0.005)
DECIMALS = {'current_upb': 2, 'current_int_rt': 3}

RISK_WEIGHTS = {
    'fico': -0.6,
    'dti': 0.3,
    'ltv': 0.3,
    'mi_pct': 0.1,
    'if_fthb': 0.1,
    'cnt_borr': -0.2,
    'current_int_rt': 0.3,
}
ONSET_INTERCEPT = -2.3
ONSET_RISK = 0.4
ONSET_NEIGHBOURS = 0.8
ONSET_SHOCK = 0.5
CURE_PROBABILITY = 0.35
DELINQUENCY_WEIGHT = 2.0
SIGNALS = ('full', 'delinquency')
MAX_AREAS = 90


@dataclass(frozen=True)
class SynthSpec:
    """Size, calibration and seed of a generated panel."""

    n_loans: int = 2000
    months: int = 18
    start_period: str = '2012-01'
    n_areas: int = 40
    n_companies: int = 12
    base_rate: float = 0.05
    contagion: float = 1.5
    horizon: int = 12
    seed: int = 0
    signal: str = 'full'

    def validate(self):
        if self.n_loans < 1 or self.months < 1 or self.horizon < 1:
            raise ConfigException("n_loans, months and horizon must be positive")
        if not 1 <= self.n_areas <= MAX_AREAS:
            raise ConfigException(f"n_areas must be in 1..{MAX_AREAS}, got {self.n_areas}")
        if self.n_companies < 1:
            raise ConfigException(f"n_companies must be positive, got {self.n_companies}")
        if not 0.0 < self.base_rate < 1.0:
            raise ConfigException(f"base_rate must be in (0, 1), got {self.base_rate}")
        if self.contagion < 0.0:
            raise ConfigException(f"contagion must be non-negative, got {self.contagion}")
        if self.signal not in SIGNALS:
            raise ConfigException(f"signal must be one of {', '.join(SIGNALS)}")
        if not is_valid_period(self.start_period):
            raise ConfigException(f"start_period must be YYYY-MM, got {self.start_period!r}")


def _stratified_uniforms(rng: np.random.Generator, n: int) -> np.ndarray:
    return (rng.permutation(n) + rng.uniform(size=n)) / n


def _calibrated_truncnorm(mean: float, std: float, low: float, high: float):
    """Truncated normal on [low, high] with scale std whose mean equals mean."""
    def gap(loc):
        return truncnorm.mean((low - loc) / std, (high - loc) / std, loc=loc, scale=std) - mean
    loc = brentq(gap, low - 10.0 * std, high + 10.0 * std, xtol=1e-9)
    return truncnorm((low - loc) / std, (high - loc) / std, loc=loc, scale=std)


def draw_static(rng: np.random.Generator, n: int) -> Dict[str, np.ndarray]:
    """Application features and opening balances for n loans (stratified draws)."""
    columns = {}
    for name, (mean, std, low, high) in NUMERIC_TARGETS.items():
        values = _calibrated_truncnorm(mean, std, low, high).ppf(_stratified_uniforms(rng, n))
        columns[name] = np.clip(values, low, high)
    for name, rate in BINARY_RATES.items():
        columns[name] = (_stratified_uniforms(rng, n) < rate).astype(np.float64)
    columns['cnt_units'] = rng.choice(UNIT_COUNTS, size=n, p=UNIT_SHARES).astype(np.float64)
    columns['cnt_borr'] = 1.0 + (rng.uniform(size=n) < 0.5)
    for name in ('fico', 'mi_pct', 'dti', 'ltv', 'mths_remng'):
        columns[name] = np.round(columns[name])
    return columns


def risk_score(static: Dict[str, np.ndarray]) -> np.ndarray:
    """Weighted sum of standardized application features."""
    score = np.zeros_like(static['fico'])
    for name, weight in RISK_WEIGHTS.items():
        if name in NUMERIC_TARGETS:
            mean, std = NUMERIC_TARGETS[name][:2]
        elif name in BINARY_RATES:
            rate = BINARY_RATES[name]
            mean, std = rate, np.sqrt(rate * (1.0 - rate))
        else:
            mean, std = 1.5, 0.5
        score += weight * (static[name] - mean) / std
    return score


def _neighbour_share(flags: np.ndarray, active: np.ndarray, groups: np.ndarray,
                     n_groups: int) -> np.ndarray:
    """Share of the other active members of each loan's group that are flagged."""
    members = np.bincount(groups, weights=active.astype(np.float64), minlength=n_groups)
    flagged = np.bincount(groups, weights=(flags & active).astype(np.float64), minlength=n_groups)
    others = members[groups] - active
    hits = flagged[groups] - (flags & active)
    return np.divide(hits, others, out=np.zeros_like(hits, dtype=np.float64), where=others > 0)


@dataclass
class _Draws:
    """Every random number a simulation consumes, drawn once per seed."""

    onset: np.ndarray
    cure: np.ndarray
    default: np.ndarray
    shock: np.ndarray


def _simulate(spec: SynthSpec, intercept: float, risk: np.ndarray, areas: np.ndarray,
              companies: np.ndarray, draws: _Draws):
    """
    Delinquency paths and default months for a default-hazard intercept.

    Returns:
        (delinquent: total_months x n bool, event: n int, -1 when no default)
    """
    n = risk.shape[0]
    total = spec.months + spec.horizon
    delinquent = np.zeros((total, n), dtype=bool)
    event = np.full(n, -1, dtype=np.int64)
    active = np.ones(n, dtype=bool)
    state = np.zeros(n, dtype=bool)

    for t in range(total):
        share = 0.5 * (_neighbour_share(state, active, areas, spec.n_areas)
                       + _neighbour_share(state, active, companies, spec.n_companies))
        if t > 0:
            onset = expit(ONSET_INTERCEPT + ONSET_RISK * risk
                          + spec.contagion * (ONSET_NEIGHBOURS * share
                                              + ONSET_SHOCK * draws.shock[t, areas]))
            start = ~state & (draws.onset[t] < onset)
            cured = state & (draws.cure[t] < CURE_PROBABILITY)
            state = (state | start) & ~cured
        delinquent[t] = state & active

        if t == 0:
            continue
        if spec.signal == 'delinquency':
            logit = intercept + DELINQUENCY_WEIGHT * state
        else:
            logit = intercept + risk + DELINQUENCY_WEIGHT * state + spec.contagion * share
        defaults = active & (draws.default[t] < expit(logit))
        event[defaults] = t
        active &= ~defaults
    return delinquent, event


def _flag_rate(spec: SynthSpec, event: np.ndarray) -> float:
    """Share of emitted loan-months whose loan defaults within the horizon."""
    months = np.arange(spec.months)[:, None]
    last = np.where(event < 0, spec.months, np.minimum(event, spec.months))
    emitted = months < last[None, :]
    flagged = emitted & (event[None, :] > months) & (event[None, :] <= months + spec.horizon)
    rows = emitted.sum()
    return float(flagged.sum() / rows) if rows else 0.0


def calibrate_intercept(spec: SynthSpec, risk: np.ndarray, areas: np.ndarray,
                        companies: np.ndarray, draws: _Draws) -> float:
    """Hazard intercept whose flag rate matches spec.base_rate under fixed draws."""
    def gap(intercept):
        _, event = _simulate(spec, intercept, risk, areas, companies, draws)
        return _flag_rate(spec, event) - spec.base_rate

    low, high = -20.0, 5.0
    if gap(high) <= 0.0:
        logger.warning(f"Base rate {spec.base_rate} is out of reach; using intercept {high}")
        return high
    if gap(low) >= 0.0:
        return low
    return float(brentq(gap, low, high, xtol=1e-4))


def synth_generate(spec: SynthSpec) -> pd.DataFrame:
    """
    Generate a loan-month panel frame (panel CSV columns plus default_month).

    Rows stop the month before a loan's default; the default column is the
    horizon flag of each emitted loan-month.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.n_loans
    total = spec.months + spec.horizon

    static = draw_static(rng, n)
    areas = rng.integers(0, spec.n_areas, size=n)
    companies = rng.integers(0, spec.n_companies, size=n)
    zip_tails = rng.integers(0, 1000, size=n)
    draws = _Draws(
        onset=rng.uniform(size=(total, n)),
        cure=rng.uniform(size=(total, n)),
        default=rng.uniform(size=(total, n)),
        shock=rng.standard_normal(size=(total, spec.n_areas)),
    )
    risk = risk_score(static)

    intercept = calibrate_intercept(spec, risk, areas, companies, draws)
    delinquent, event = _simulate(spec, intercept, risk, areas, companies, draws)

    periods = period_range(spec.start_period, total)
    rate = static['current_int_rt'] / 1200.0
    upb = static['current_upb'].copy()
    term = static['mths_remng'].copy()
    payment = upb * rate / (1.0 - (1.0 + rate) ** (-term))

    blocks = []
    for t in range(spec.months):
        alive = (event < 0) | (event > t)
        if t > 0:
            paying = ~delinquent[t]
            principal = np.minimum(upb, np.maximum(payment - upb * rate, 0.0))
            upb = np.where(paying, upb - principal, upb)
            term = np.maximum(term - 1.0, 1.0)
        flags = ((event > t) & (event <= t + spec.horizon)).astype(np.int64)
        block = {name: static[name] for name in FEATURES if name in static}
        block.update({
            'loan_id': [f"L{i + 1:06d}" for i in range(n)],
            'period': periods[t],
            'current_upb': np.round(upb, DECIMALS['current_upb']),
            'mths_remng': term,
            'current_int_rt': np.round(static['current_int_rt'], DECIMALS['current_int_rt']),
            'if_delq_sts': delinquent[t].astype(np.float64),
            'zipcode': [f"{10 + a:02d}{z:03d}" for a, z in zip(areas, zip_tails)],
            'company': [f"C{c:02d}" for c in companies],
            'default': flags,
            'default_month': [periods[e] if e >= 0 else '' for e in event],
        })
        blocks.append(pd.DataFrame(block)[alive])

    frame = pd.concat(blocks, ignore_index=True)
    for name in ('fico', 'mi_pct', 'cnt_units', 'dti', 'ltv', 'cnt_borr', 'mths_remng') + \
            tuple(BINARY_RATES) + ('if_delq_sts',):
        frame[name] = frame[name].astype(np.int64)
    columns = ['loan_id', 'period'] + list(FEATURES) + ['zipcode', 'company', 'default',
                                                        'default_month']
    frame = frame[columns].sort_values(['loan_id', 'period'], kind='mergesort')
    frame = frame.reset_index(drop=True)

    logger.info(f"Generated {len(frame)} loan-months for {n} loans "
                f"(flag rate {frame['default'].mean():.4f}, intercept {intercept:.3f})")
    return frame


def synth_panel(spec: SynthSpec) -> LoanPanel:
    """Generated panel, validated like an ingested one."""
    frame = synth_generate(spec)
    panel = panel_from_frame(frame, horizon=spec.horizon)
    if panel.rejects:
        raise DataException(f"Generated panel has {len(panel.rejects)} invalid rows")
    return panel
