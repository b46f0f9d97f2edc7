"""Anomaly severity of every series, condensed into one [metric, log, trace] vector per service."""

from dataclasses import dataclass
import logging
import math
from typing import Dict, FrozenSet, Iterable, List

import numpy as np

from src.errors import InputError
from src.telemetry.core_model import AnalysisWindow, SeriesRef, SourceKind, TelemetryBundle, TimeSeries, \
    normal_stats, split_window

logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-6


@dataclass(frozen=True)
class SeriesSeverity:
    ref: SeriesRef
    rho: float


@dataclass(frozen=True)
class SeverityVector:
    service: str
    rho_m: float
    rho_l: float
    rho_tc: float
    available: FrozenSet[SourceKind]

    def as_array(self) -> np.ndarray:
        return np.array([self.rho_m, self.rho_l, self.rho_tc], dtype=float)

    @property
    def mean(self) -> float:
        return (self.rho_m + self.rho_l + self.rho_tc) / 3.0


def score_series(ts: TimeSeries, w: AnalysisWindow) -> SeriesSeverity:
    """Largest abnormal-period deviation from the normal mean, in units of normal standard deviation.

    :param ts: The series to score.
    :param w: The analysis window.
    :return: The series severity.
    """
    normal, abnormal = split_window(ts, w)
    if len(abnormal) == 0:
        raise InputError('Series %s/%s has an empty abnormal window' % (ts.service, ts.indicator))
    if np.any(np.isnan(abnormal)):
        raise InputError('Series %s/%s has NaN abnormal bins' % (ts.service, ts.indicator))
    stats = normal_stats(normal)
    sigma = max(stats.std, SIGMA_FLOOR)
    rho = float(np.max(np.abs(abnormal - stats.mean)) / sigma)
    return SeriesSeverity(ts.ref, rho)


def service_vector(service: str, severities: Iterable[SeriesSeverity],
                   available: FrozenSet[SourceKind]) -> SeverityVector:
    """Sum metric and trace severities, take the most anomalous log template; absent sources score 0.

    :param service: The service the severities belong to.
    :param severities: Series severities of this service.
    :param available: Sources the service emits.
    :return: The service's severity vector.
    """
    by_source: Dict[SourceKind, List[float]] = {kind: [] for kind in SourceKind}
    for severity in severities:
        if severity.ref.service != service:
            raise ValueError('Severity of %s passed for service %s' % (severity.ref.service, service))
        by_source[severity.ref.source].append(severity.rho)

    def component(kind, reduce):
        if kind not in available or not by_source[kind]:
            return 0.0
        return float(reduce(by_source[kind]))

    return SeverityVector(
        service=service,
        rho_m=component(SourceKind.METRIC, math.fsum),
        rho_l=component(SourceKind.LOG, max),
        rho_tc=component(SourceKind.TRACE, math.fsum),
        available=frozenset(available),
    )


def all_vectors(bundle: TelemetryBundle) -> List[SeverityVector]:
    """Severity vectors for every service, in snapshot order."""
    by_service = {service: [] for service in bundle.snapshot.services}
    for ts in sorted(bundle.series, key=lambda s: s.ref.sort_key()):
        by_service[ts.service].append(score_series(ts, bundle.window))
    vectors = [service_vector(s, by_service[s], bundle.availability.get(s, frozenset()))
               for s in bundle.snapshot.services]
    for v in vectors:
        logger.debug('severity %s: m=%.3f l=%.3f tc=%.3f', v.service, v.rho_m, v.rho_l, v.rho_tc)
    return vectors
