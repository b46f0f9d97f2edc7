"""Shared vocabulary: services, sources, aligned time series and the analysis window."""

from dataclasses import dataclass, field
from enum import Enum
import math
from typing import Dict, FrozenSet, Iterable, List, NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd

from src.errors import InputError, InsufficientDataError

DEFAULT_BIN = 15.0
MIN_NORMAL_BINS = 2


class SourceKind(Enum):
    METRIC = 'metric'
    LOG = 'log'
    TRACE = 'trace'


class SeriesRef(NamedTuple):
    """Identity of one indicator; sorts by service, then indicator, then source."""
    service: str
    indicator: str
    source: SourceKind

    def sort_key(self) -> Tuple[str, str, str]:
        return self.service, self.indicator, self.source.value


@dataclass(frozen=True)
class SystemSnapshot:
    services: Tuple[str, ...]

    def __post_init__(self) -> None:
        if len(set(self.services)) != len(self.services):
            raise InputError('Duplicate service names in snapshot')
        if list(self.services) != sorted(self.services):
            raise InputError('Snapshot services must be in lexicographic order')

    @classmethod
    def from_names(cls, names: Iterable[str]) -> 'SystemSnapshot':
        return cls(tuple(sorted(set(names))))

    @property
    def n(self) -> int:
        return len(self.services)


@dataclass(frozen=True)
class AnalysisWindow:
    """Normal period [t0, tA) followed by the abnormal period [tA, tA + T), cut into bins."""
    t0: float
    tA: float
    T: float
    bin: float = DEFAULT_BIN

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (self.t0, self.tA, self.T, self.bin)):
            raise InputError('Window bounds must be finite')
        if self.bin <= 0:
            raise InputError('Bin width must be positive, got %s' % self.bin)
        if self.T <= 0:
            raise InputError('Abnormal duration must be positive, got %s' % self.T)
        if self.t0 >= self.tA:
            raise InsufficientDataError('Normal period is empty: t0=%s, tA=%s' % (self.t0, self.tA))
        if self.tA - self.t0 < MIN_NORMAL_BINS * self.bin:
            raise InsufficientDataError(
                'Normal period of %ss holds fewer than %d bins of %ss' % (self.tA - self.t0, MIN_NORMAL_BINS, self.bin))

    @property
    def n_bins(self) -> int:
        return int(math.ceil((self.tA + self.T - self.t0) / self.bin))

    @property
    def n_normal(self) -> int:
        # a bin straddling tA belongs to the abnormal half
        return int(math.floor((self.tA - self.t0) / self.bin))

    @property
    def n_abnormal(self) -> int:
        return self.n_bins - self.n_normal

    @property
    def end(self) -> float:
        return self.tA + self.T

    def bin_indexes(self, timestamps) -> np.ndarray:
        """Map timestamps onto bin indexes; timestamps outside the window map to -1."""
        ts = np.asarray(timestamps, dtype=float)
        idx = np.floor((ts - self.t0) / self.bin).astype(np.int64)
        idx[(ts < self.t0) | (ts >= self.end) | (idx >= self.n_bins)] = -1
        return idx


@dataclass(frozen=True, eq=False)
class TimeSeries:
    service: str
    indicator: str
    source: SourceKind
    values: np.ndarray
    missing: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        missing = np.zeros(len(values), dtype=bool) if self.missing is None else np.array(self.missing, dtype=bool)
        if values.ndim != 1 or missing.shape != values.shape:
            raise InputError('Series %s/%s must be a 1-d vector with a matching mask' % (self.service, self.indicator))
        if not np.all(np.isfinite(values)):
            raise InputError('Series %s/%s holds non-finite values' % (self.service, self.indicator))
        values.flags.writeable = False
        missing.flags.writeable = False
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'missing', missing)

    @property
    def ref(self) -> SeriesRef:
        return SeriesRef(self.service, self.indicator, self.source)

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class NormalStats:
    mean: float
    std: float
    median: float
    iqr: float


@dataclass(frozen=True)
class TelemetryBundle:
    snapshot: SystemSnapshot
    window: AnalysisWindow
    series: Tuple[TimeSeries, ...]
    availability: Dict[str, FrozenSet[SourceKind]]
    templates: Dict[Tuple[str, str], str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        known = set(self.snapshot.services)
        seen = set()
        for ts in self.series:
            if ts.service not in known:
                raise InputError('Series for unknown service %s' % ts.service)
            if ts.ref in seen:
                raise InputError('Duplicate indicator %s for service %s (%s)'
                                 % (ts.indicator, ts.service, ts.source.value))
            if len(ts) != self.window.n_bins:
                raise InputError('Series %s/%s has %d bins, window expects %d'
                                 % (ts.service, ts.indicator, len(ts), self.window.n_bins))
            seen.add(ts.ref)

    def series_for(self, service: str) -> List[TimeSeries]:
        return [ts for ts in self.series if ts.service == service]

    def is_available(self, service: str, source: SourceKind) -> bool:
        return source in self.availability.get(service, frozenset())

    @property
    def blind_spots(self) -> List[str]:
        """Services without any trace data."""
        return [s for s in self.snapshot.services if not self.is_available(s, SourceKind.TRACE)]


def fill_missing(raw) -> Tuple[np.ndarray, np.ndarray]:
    """Forward-fill NaN bins from the last observation, zero-fill leading gaps.

    :param raw: Per-bin values with NaN marking empty bins.
    :return: A tuple of the filled values and the missing-mask.
    """
    raw = pd.Series(np.asarray(raw, dtype=float))
    missing = raw.isna().to_numpy()
    values = raw.ffill().fillna(0.0).to_numpy()
    return values, missing


def split_window(ts: TimeSeries, w: AnalysisWindow) -> Tuple[np.ndarray, np.ndarray]:
    """Split a series at the anomaly detection time.

    :param ts: A series spanning the whole window.
    :param w: The analysis window.
    :return: A tuple of the normal-period values and the abnormal-period values.
    """
    if len(ts) != w.n_bins:
        raise InputError('Series %s/%s has %d bins but the window implies %d'
                         % (ts.service, ts.indicator, len(ts), w.n_bins))
    return ts.values[:w.n_normal], ts.values[w.n_normal:]


def normal_stats(values) -> NormalStats:
    """Learn mean, population standard deviation, median and IQR of normal-period values.

    Percentiles use linear interpolation between closest ranks.
    """
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        raise InsufficientDataError('Normal statistics need at least 2 values, got %d' % len(values))
    q1, median, q3 = np.percentile(values, [25, 50, 75])
    return NormalStats(
        mean=float(np.mean(values)),
        std=float(np.std(values)),
        median=float(median),
        iqr=float(q3 - q1),
    )
