"""Severity, clustering and causal ranking composed into one ranked, fine-grained root-cause report."""

from collections import Counter
from contextlib import contextmanager
from dataclasses import asdict, dataclass
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.errors import InputError
from src.rca.causal_ranker import CausalConfig, DEFAULT_ALPHA, DEFAULT_CHUNK_SIZE, DEFAULT_MAX_COND_SIZE, \
    rank_chunked, rank_services
from src.rca.report import RankedIndicator, RankedService, RcaReport
from src.rca.severity import SeverityVector, all_vectors
from src.rca.symptom_cluster import ClusterRanking, DEFAULT_K_MAX, DEFAULT_TAU, rank_clusters, select_k
from src.telemetry.core_model import AnalysisWindow, SeriesRef, TelemetryBundle, TimeSeries, normal_stats, \
    split_window

logger = logging.getLogger(__name__)

IQR_FLOOR = 1e-6
# full pipeline, then the single-stage ablations
VARIANTS = ('full', 'severity', 'causal', 'fine')


@dataclass(frozen=True)
class RcaConfig:
    alpha: float = DEFAULT_ALPHA
    chunk_size: int = DEFAULT_CHUNK_SIZE
    max_cond_size: int = DEFAULT_MAX_COND_SIZE
    tau: float = DEFAULT_TAU
    k_max: int = DEFAULT_K_MAX
    seed: int = 0
    threads: int = 1
    variant: str = 'full'

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise InputError('Unknown variant %r, expected one of %s' % (self.variant, ', '.join(VARIANTS)))
        if not 0.0 <= self.tau <= 1.0:
            raise InputError('tau must lie in [0, 1], got %s' % self.tau)
        if self.k_max < 1:
            raise InputError('k_max must be >= 1, got %s' % self.k_max)
        self.causal_config()

    def causal_config(self) -> CausalConfig:
        return CausalConfig(alpha=self.alpha, chunk_size=self.chunk_size, max_cond_size=self.max_cond_size,
                            seed=self.seed)

    def echo(self, window: AnalysisWindow) -> dict:
        """Everything that shapes the output; the thread count never does."""
        config = {k: v for k, v in asdict(self).items() if k != 'threads'}
        config.update({'bin': window.bin, 'normal_window': window.tA - window.t0, 'abnormal_window': window.T})
        return config


@dataclass(frozen=True)
class IndicatorScore:
    ref: SeriesRef
    gamma: float


@contextmanager
def stage(name: str):
    """Tag input errors escaping a pipeline stage with the stage name."""
    try:
        yield
    except InputError as e:
        raise type(e)('%s: %s' % (name, e)) from e


def aggregate(cluster_ranking: ClusterRanking, rankings: Sequence[Sequence[str]]) -> List[str]:
    """Concatenate per-cluster service rankings in cluster order; a service keeps its first occurrence.

    :param cluster_ranking: Clusters ordered by severity.
    :param rankings: One service ranking per cluster, in the same order.
    :return: The aggregated service ranking.
    """
    if len(rankings) != len(cluster_ranking.clusters):
        raise InputError('%d rankings for %d clusters' % (len(rankings), len(cluster_ranking.clusters)))
    ranked, seen = [], set()
    for ranking in rankings:
        for service in ranking:
            if service not in seen:
                seen.add(service)
                ranked.append(service)
    return ranked


def gamma_score(ts: TimeSeries, w: AnalysisWindow) -> IndicatorScore:
    """Largest abnormal-period deviation from the normal median, in units of normal IQR."""
    normal, abnormal = split_window(ts, w)
    if len(abnormal) == 0:
        raise InputError('Series %s/%s has an empty abnormal window' % (ts.service, ts.indicator))
    stats = normal_stats(normal)
    iqr = max(stats.iqr, IQR_FLOOR)
    return IndicatorScore(ts.ref, float(np.max(np.abs(abnormal - stats.median)) / iqr))


def fine_grain(ranked: Sequence[str], bundle: TelemetryBundle) -> Dict[str, List[IndicatorScore]]:
    """Rank every indicator of each ranked service by gamma, descending; ties by indicator name.

    :return: A mapping of service to its ranked indicator scores.
    """
    if not ranked:
        raise InputError('Nothing to fine-grain: no ranked services')
    result = {}
    for service in ranked:
        scores = [gamma_score(ts, bundle.window) for ts in bundle.series_for(service)]
        scores.sort(key=lambda s: (-s.gamma, s.ref.indicator, s.ref.source.value))
        result[service] = scores
    return result


def _causal_ranking(services: Sequence[str], bundle: TelemetryBundle, config: RcaConfig,
                    by_service: Dict[str, SeverityVector], counters: Counter) -> List[Tuple[str, float]]:
    series = [ts for s in services for ts in bundle.series_for(s)]
    targets = rank_chunked(series, bundle.window, config.causal_config(), config.threads, counters) if series else []
    return rank_services(services, targets, by_service)


def _full_ranking(bundle: TelemetryBundle, config: RcaConfig, vectors: List[SeverityVector],
                  counters: Counter) -> Tuple[List[str], Dict[str, float], ClusterRanking]:
    services = list(bundle.snapshot.services)
    by_service = {v.service: v for v in vectors}
    points = np.array([v.as_array() for v in vectors])

    with stage('symptom_cluster'):
        k, model = select_k(points, config.k_max, config.seed)
        clusters = rank_clusters(model, points, services, config.tau)
    logger.info('symptom clusters: k=%d, %d non-empty', k, len(clusters.clusters))

    rankings, scores = [], {}
    with stage('causal_ranker'):
        for cluster in clusters.clusters:
            ranking = _causal_ranking(cluster.services, bundle, config, by_service, counters)
            rankings.append([s for s, _ in ranking])
            for s, score in ranking:
                scores.setdefault(s, score)

    with stage('rank_aggregation'):
        ranked = aggregate(clusters, rankings)
        missing = [s for s in services if s not in ranked]
        assert not missing, 'every service belongs to a cluster'
    return ranked, scores, clusters


def _ablation_ranking(bundle: TelemetryBundle, config: RcaConfig, vectors: List[SeverityVector],
                      counters: Counter) -> Tuple[List[str], Dict[str, float]]:
    """A single stage ranks every service on its own."""
    services = list(bundle.snapshot.services)
    by_service = {v.service: v for v in vectors}
    if config.variant == 'severity':
        return sorted(services, key=lambda s: (-by_service[s].mean, s)), {}
    if config.variant == 'causal':
        with stage('causal_ranker'):
            ranking = _causal_ranking(services, bundle, config, by_service, counters)
        return [s for s, _ in ranking], dict(ranking)
    with stage('fine_grainer'):
        top = {s: max((gamma_score(ts, bundle.window).gamma for ts in bundle.series_for(s)), default=0.0)
               for s in services}
    return sorted(services, key=lambda s: (-top[s], s)), {}


def run_rca(bundle: TelemetryBundle, config: Optional[RcaConfig] = None,
            counters: Optional[Counter] = None) -> RcaReport:
    """Rank root-cause services and, within each, root-cause indicators.

    The `full` variant clusters services by severity, ranks each cluster causally and concatenates the
    cluster rankings. The `severity`, `causal` and `fine` variants rank all services by mean severity, by
    causal score over every series, or by their largest indicator gamma; every service then sits in cluster 0.

    :param bundle: The ingested telemetry.
    :param config: Pipeline parameters.
    :param counters: Diagnostics gathered so far (for example during ingestion).
    :return: The report. A service's score is its smallest target p-value, 1.0 without one or when the
        variant runs no causal stage.
    """
    config = config or RcaConfig()
    counters = Counter(counters or {})
    window = bundle.window

    with stage('severity'):
        vectors = all_vectors(bundle)
    if config.variant == 'full':
        ranked, scores, clusters = _full_ranking(bundle, config, vectors, counters)
        cluster_index = {s: clusters.cluster_of(s) for s in ranked}
    else:
        ranked, scores = _ablation_ranking(bundle, config, vectors, counters)
        cluster_index = {s: 0 for s in ranked}

    with stage('fine_grainer'):
        indicators = fine_grain(ranked, bundle)

    ranked_services = tuple(
        RankedService(
            rank=rank,
            service=service,
            score=scores.get(service, 1.0),
            cluster=cluster_index[service],
            indicators=tuple(RankedIndicator(i, s.ref.indicator, s.ref.source, s.gamma)
                             for i, s in enumerate(indicators[service], start=1)),
        ) for rank, service in enumerate(ranked, start=1))
    logger.info('%s top root causes: %s', config.variant, ranked[:5])
    return RcaReport(window, ranked_services, config.echo(window), dict(counters))
