"""Divide-and-conquer search for interventional targets: series whose dependence on the failure regime
cannot be explained away by other series."""

from collections import Counter
from dataclasses import dataclass
from functools import partial
from itertools import combinations
import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import norm

from src.errors import InputError, InsufficientDataError
from src.rca.severity import SeverityVector
from src.telemetry.core_model import AnalysisWindow, SeriesRef, TimeSeries
from src.workers import parallel_map

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.05
DEFAULT_CHUNK_SIZE = 10
DEFAULT_MAX_COND_SIZE = 2
DEFAULT_MAX_LEVELS = 32
CONSTANT_VARIANCE = 1e-12
SINGULAR_TOLERANCE = 1e-12
R_CLIP = 1.0 - 1e-15

F_COLUMN = 0


@dataclass(frozen=True)
class CausalConfig:
    alpha: float = DEFAULT_ALPHA
    chunk_size: int = DEFAULT_CHUNK_SIZE
    max_cond_size: int = DEFAULT_MAX_COND_SIZE
    seed: int = 0
    max_levels: int = DEFAULT_MAX_LEVELS

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise InputError('alpha must lie in (0, 1), got %s' % self.alpha)
        if self.chunk_size < 2:
            raise InputError('chunk_size must be >= 2, got %s' % self.chunk_size)
        if self.max_cond_size < 0:
            raise InputError('max_cond_size must be >= 0, got %s' % self.max_cond_size)
        if self.max_levels < 1:
            raise InputError('max_levels must be >= 1, got %s' % self.max_levels)


@dataclass(frozen=True)
class TargetScore:
    ref: SeriesRef
    p_value: float

    def sort_key(self):
        return (self.p_value, self.ref.service, self.ref.indicator, self.ref.source.value)


def _partial_corr(corr: np.ndarray, i: int, j: int, cond: Sequence[int]) -> Optional[float]:
    """Partial correlation from a correlation matrix; None when the conditioning set is singular."""
    if len(cond) == 0:
        return float(corr[i, j])
    if len(cond) == 1:
        k = cond[0]
        denom = (1.0 - corr[i, k] ** 2) * (1.0 - corr[j, k] ** 2)
        if denom <= SINGULAR_TOLERANCE:
            return None
        return float((corr[i, j] - corr[i, k] * corr[j, k]) / math.sqrt(denom))
    index = [i, j, *cond]
    sub = corr[np.ix_(index, index)]
    if np.linalg.cond(sub[2:, 2:]) > 1.0 / SINGULAR_TOLERANCE:
        return None
    try:
        precision = np.linalg.inv(sub)
    except np.linalg.LinAlgError:
        return None
    denom = precision[0, 0] * precision[1, 1]
    if denom <= 0:
        return None
    return float(-precision[0, 1] / math.sqrt(denom))


def fisher_z_from_corr(corr: np.ndarray, n: int, i: int, j: int, cond: Sequence[int] = (),
                       counters: Optional[Counter] = None) -> float:
    """Two-sided Fisher-z p-value of the partial correlation of i and j given cond.

    :param corr: The correlation matrix of the data.
    :param n: Number of rows the correlations were estimated on.
    :param counters: Optional diagnostics counter; singular conditioning sets are counted.
    :return: The p-value; 1.0 when the conditioning set is singular.
    """
    cond = list(cond)
    dof = n - len(cond) - 3
    if dof <= 0:
        raise InsufficientDataError('Fisher-z needs more than %d rows, got %d' % (len(cond) + 3, n))
    if i == j:
        return 0.0
    r = _partial_corr(corr, i, j, cond)
    if r is None or not math.isfinite(r):
        if counters is not None:
            counters['ci_tests_singular'] += 1
        return 1.0
    r = min(R_CLIP, max(-R_CLIP, r))
    z = 0.5 * math.log((1.0 + r) / (1.0 - r)) * math.sqrt(dof)
    return float(min(1.0, 2.0 * norm.sf(abs(z))))


def fisher_z(data, i: int, j: int, cond: Sequence[int] = (), counters: Optional[Counter] = None) -> float:
    """Fisher-z conditional independence test of columns i and j given the columns in cond."""
    data = np.asarray(data, dtype=float)
    corr = np.corrcoef(data, rowvar=False)
    return fisher_z_from_corr(np.atleast_2d(corr), data.shape[0], i, j, cond, counters)


class RegimeMatrix:
    """Pooled normal and abnormal bins with a leading regime column F (0 normal, 1 abnormal).

    Every column is standardised; constant series are dropped and recorded.
    """

    def __init__(self, series: Sequence[TimeSeries], window: AnalysisWindow) -> None:
        self.window = window
        regime = np.concatenate([np.zeros(window.n_normal), np.ones(window.n_abnormal)])
        columns, refs, dropped = [regime], [], []
        for ts in series:
            if len(ts) != window.n_bins:
                raise InputError('Series %s/%s does not span the window' % (ts.service, ts.indicator))
            if np.var(ts.values) < CONSTANT_VARIANCE:
                dropped.append(ts.ref)
                continue
            columns.append(ts.values)
            refs.append(ts.ref)
        data = np.column_stack(columns)
        self.data = (data - data.mean(axis=0)) / data.std(axis=0)
        self.refs: List[SeriesRef] = refs
        self.dropped: List[SeriesRef] = dropped
        self.corr = np.atleast_2d(np.corrcoef(self.data, rowvar=False))

    @property
    def n(self) -> int:
        return self.data.shape[0]

    def column(self, ref: SeriesRef) -> int:
        return self.refs.index(ref) + 1

    def test(self, i: int, j: int, cond: Sequence[int] = (), counters: Optional[Counter] = None) -> float:
        return fisher_z_from_corr(self.corr, self.n, i, j, cond, counters)


def find_targets(series: Sequence[TimeSeries], window: AnalysisWindow, cfg: CausalConfig,
                 counters: Optional[Counter] = None) -> List[TargetScore]:
    """Find the interventional targets within one chunk.

    A series is a target when it depends on F marginally and survives PC-style levels: at level s, every
    s-subset of the series still F-dependent at the start of the level is tried as a conditioning set, and
    a series rendered independent of F leaves the pool for later levels. Targets are scored by their
    marginal p(F, X).

    :return: Targets sorted by p-value ascending, ties by (service, indicator).
    """
    counters = counters if counters is not None else Counter()
    if not series:
        raise InputError('Cannot search an empty chunk')
    if window.n_bins < cfg.max_cond_size + 5:
        raise InsufficientDataError('%d pooled bins are too few for conditioning sets of size %d'
                                    % (window.n_bins, cfg.max_cond_size))
    matrix = RegimeMatrix(series, window)
    counters['constant_columns_dropped'] += len(matrix.dropped)
    if not matrix.refs:
        return []

    marginal = {c: matrix.test(F_COLUMN, c, (), counters) for c in range(1, len(matrix.refs) + 1)}
    adjacent = sorted(c for c, p in marginal.items() if p <= cfg.alpha)

    for size in range(1, cfg.max_cond_size + 1):
        # conditioning sets come from the adjacency at the start of the level, so test order is irrelevant
        level_adjacent = list(adjacent)
        separated = set()
        for x in level_adjacent:
            others = [c for c in level_adjacent if c != x]
            if any(matrix.test(F_COLUMN, x, cond, counters) > cfg.alpha for cond in combinations(others, size)):
                separated.add(x)
        adjacent = [c for c in adjacent if c not in separated]
        logger.debug('level %d: %d of %d series still depend on F', size, len(adjacent), len(level_adjacent))
        if len(adjacent) <= size + 1:
            break

    targets = [TargetScore(matrix.refs[x - 1], marginal[x]) for x in adjacent]
    targets.sort(key=TargetScore.sort_key)
    return targets


def _chunk_task(chunk: Sequence[TimeSeries], window: AnalysisWindow,
                cfg: CausalConfig) -> Tuple[List[TargetScore], Counter]:
    counters = Counter()
    return find_targets(chunk, window, cfg, counters), counters


def rank_chunked(series: Sequence[TimeSeries], window: AnalysisWindow, cfg: CausalConfig, threads: int = 1,
                 counters: Optional[Counter] = None) -> List[TargetScore]:
    """Recursively partition series into random chunks, keeping only each chunk's targets.

    Stops when the survivors fit one chunk, when a level no longer shrinks the survivor set, or after
    `max_levels` levels.

    :return: The final targets sorted by p-value ascending, ties by (service, indicator).
    """
    counters = counters if counters is not None else Counter()
    if not series:
        raise InputError('CausalRanker needs at least one series')
    rng = np.random.default_rng(cfg.seed)
    by_ref = {ts.ref: ts for ts in series}
    survivors = sorted(series, key=lambda ts: ts.ref.sort_key())
    scores: Dict[SeriesRef, TargetScore] = {}

    for level in range(cfg.max_levels):
        if len(survivors) <= cfg.chunk_size:
            return find_targets(survivors, window, cfg, counters)
        # the permutation is drawn before dispatch, so scheduling cannot change the partition
        order = rng.permutation(len(survivors))
        chunks = [[survivors[i] for i in order[start:start + cfg.chunk_size]]
                  for start in range(0, len(order), cfg.chunk_size)]
        results = parallel_map(partial(_chunk_task, window=window, cfg=cfg), chunks, threads)
        scores = {}
        for targets, chunk_counters in results:
            counters.update(chunk_counters)
            scores.update({t.ref: t for t in targets})
        logger.debug('causal level %d: %d series in %d chunks -> %d targets',
                     level, len(survivors), len(chunks), len(scores))
        if len(scores) == len(survivors):
            break
        survivors = sorted((by_ref[ref] for ref in scores), key=lambda ts: ts.ref.sort_key())
        if not survivors:
            return []

    return sorted(scores.values(), key=TargetScore.sort_key)


def rank_services(members: Sequence[str], targets: Sequence[TargetScore],
                  vectors: Dict[str, SeverityVector]) -> List[Tuple[str, float]]:
    """Lift series targets to a service ranking.

    Services with targets come first, by their smallest p-value; the remaining members follow by mean
    severity, descending. Ties break by name.

    :return: A list of (service, score) where score is the smallest target p-value, 1.0 without targets.
    """
    member_set = set(members)
    best: Dict[str, float] = {}
    for target in targets:
        service = target.ref.service
        if service in member_set:
            best[service] = min(best.get(service, 1.0), target.p_value)
    targeted = sorted(best, key=lambda s: (best[s], s))
    untargeted = sorted((s for s in member_set if s not in best),
                        key=lambda s: (-vectors[s].mean if s in vectors else 0.0, s))
    return [(s, best[s]) for s in targeted] + [(s, 1.0) for s in untargeted]
