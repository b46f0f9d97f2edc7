import json
import math

import numpy as np
import pytest

from src.errors import InputError, InsufficientDataError
from src.rca.pipeline import IQR_FLOOR, RcaConfig, aggregate, fine_grain, gamma_score, run_rca, stage
from src.rca.report import REPORT_VERSION, read_indicator_ranking, read_ranking, write_report
from src.rca.symptom_cluster import Cluster, ClusterRanking
from src.telemetry.core_model import SourceKind
from src.telemetry.ingest import build_bundle
from tests.helpers import make_series, make_window, noise_series

SERVICES = ['a', 'b', 'c', 'd', 'e', 'f']


def ranking_of(*groups):
    clusters = tuple(Cluster(tuple((s, 1.0) for s in group), float(len(groups) - i), i)
                     for i, group in enumerate(groups))
    return ClusterRanking(clusters, {})


def faulty_bundle(seed=0):
    """Six services; `c` suffers an 8 sigma cpu shift that reaches `d`'s latency one bin later."""
    window = make_window(40, 20)
    rng = np.random.default_rng(seed)
    series = []
    for s in SERVICES:
        series.append(noise_series(rng, s, 'cpu', window, shift=8.0 if s == 'c' else 0.0))
        series.append(noise_series(rng, s, 'mem', window))
        series.append(make_series(s, 'log:1', rng.poisson(5, window.n_bins), SourceKind.LOG))
        series.append(noise_series(rng, s, 'op:serve:latency', window, shift=4.0 if s == 'd' else 0.0,
                                   source=SourceKind.TRACE, lag=1))
    return build_bundle(series, [], [], window, {(s, 'log:1'): 'gc pause <*> ms' for s in SERVICES})


def test_aggregate_concatenates_clusters_in_order():
    assert aggregate(ranking_of(['a', 'c'], ['e', 'p', 't']), [['a', 'c'], ['e', 'p', 't']]) == \
        ['a', 'c', 'e', 'p', 't']


def test_aggregate_keeps_first_occurrence():
    assert aggregate(ranking_of(['a', 'c'], ['c', 'e']), [['c', 'a'], ['e', 'c']]) == ['c', 'a', 'e']


def test_aggregate_needs_one_ranking_per_cluster():
    with pytest.raises(InputError):
        aggregate(ranking_of(['a'], ['b']), [['a']])


def test_gamma_score_examples(small_window):
    assert gamma_score(make_series('a', 'x', [1, 2, 3, 4, 10, 2]), small_window).gamma == pytest.approx(5.0)
    assert gamma_score(make_series('a', 'x', [3, 3, 3, 3, 3, 3]), small_window).gamma == 0.0
    assert gamma_score(make_series('a', 'x', [3, 3, 3, 3, 4, 3]), small_window).gamma == \
        pytest.approx(1 / IQR_FLOOR)


def _percentile(ordered, q):
    position = (len(ordered) - 1) * q
    lo = int(math.floor(position))
    hi = min(lo + 1, len(ordered) - 1)
    return ordered[lo] + (position - lo) * (ordered[hi] - ordered[lo])


def test_gamma_score_matches_brute_force():
    rng = np.random.default_rng(31)
    for _ in range(1000):
        w = make_window(int(rng.integers(2, 30)), int(rng.integers(1, 15)))
        values = rng.normal(rng.uniform(-100, 100), rng.uniform(0.01, 20), w.n_bins)
        ordered = sorted(values[:w.n_normal].tolist())
        median = _percentile(ordered, 0.5)
        iqr = max(_percentile(ordered, 0.75) - _percentile(ordered, 0.25), IQR_FLOOR)
        expected = max(abs(v - median) / iqr for v in values[w.n_normal:].tolist())
        assert gamma_score(make_series('a', 'x', values), w).gamma == pytest.approx(expected, rel=1e-9)


def test_gamma_survives_a_contaminated_normal_window(window, rng):
    """Outliers in the tail of the normal period barely move the median and IQR."""
    hits = 0
    for _ in range(20):
        truth = rng.normal(0, 1, window.n_bins)
        truth[window.n_normal - 4:] += 8.0
        others = [rng.normal(0, 1, window.n_bins) for _ in range(6)]
        series = [make_series('a', 'truth', truth)] + [make_series('a', 'x%d' % i, v) for i, v in enumerate(others)]
        bundle = build_bundle(series, [], [], window)
        hits += fine_grain(['a'], bundle)['a'][0].ref.indicator == 'truth'
    assert hits == 20


def test_fine_grain_orders_by_gamma_then_name(small_window):
    series = [
        make_series('a', 'zz', [1, 2, 3, 4, 10, 2]),
        make_series('a', 'bb', [1, 2, 3, 4, 5, 2]),
        make_series('a', 'aa', [1, 2, 3, 4, 5, 2], SourceKind.TRACE),
    ]
    scores = fine_grain(['a'], build_bundle(series, [], [], small_window))['a']
    assert [s.ref.indicator for s in scores] == ['zz', 'aa', 'bb']
    with pytest.raises(InputError):
        fine_grain([], build_bundle(series, [], [], small_window))


def test_stage_prefixes_input_errors():
    with pytest.raises(InsufficientDataError, match='^severity: too short$'):
        with stage('severity'):
            raise InsufficientDataError('too short')


def test_config_echo_ignores_threads(window):
    echo = RcaConfig(threads=4).echo(window)
    assert echo == RcaConfig(threads=1).echo(window)
    assert 'threads' not in echo
    assert echo['bin'] == 15.0 and echo['normal_window'] == 600.0 and echo['abnormal_window'] == 300.0
    with pytest.raises(InputError):
        RcaConfig(tau=1.5)
    with pytest.raises(InputError):
        RcaConfig(alpha=2.0)


def test_run_rca_finds_the_faulty_service():
    report = run_rca(faulty_bundle())
    assert report.ranked_services[0] == 'c'
    assert sorted(report.ranked_services) == SERVICES
    top = report.services[0]
    assert top.indicators[0].indicator == 'cpu'
    assert top.cluster == 0
    assert 0.0 <= top.score < 0.05


def test_report_json_layout(tmp_path):
    report = run_rca(faulty_bundle())
    data = json.loads(report.to_json())
    assert list(data) == ['version', 'anomaly_at', 'config', 'services', 'diagnostics']
    assert data['version'] == REPORT_VERSION
    assert data['anomaly_at'] == report.window.tA
    assert [s['rank'] for s in data['services']] == list(range(1, len(SERVICES) + 1))
    for s in data['services']:
        assert list(s) == ['rank', 'service', 'score', 'cluster', 'indicators']
        assert [i['rank'] for i in s['indicators']] == list(range(1, 5))
        gammas = [i['gamma'] for i in s['indicators']]
        assert gammas == sorted(gammas, reverse=True)
        assert {i['source'] for i in s['indicators']} == {'metric', 'log', 'trace'}
    assert list(data['diagnostics']) == sorted(data['diagnostics'])

    path = tmp_path / 'report.json'
    write_report(report, str(path))
    assert read_ranking(str(path)) == report.ranked_services
    assert read_indicator_ranking(str(path), 'c')[0] == 'cpu'
    assert read_indicator_ranking(str(path), 'nobody') == []


def test_read_ranking_rejects_other_documents(tmp_path):
    path = tmp_path / 'other.json'
    path.write_text(json.dumps({'version': 'something-else', 'services': []}), encoding='utf-8')
    with pytest.raises(InputError):
        read_ranking(str(path))


def test_run_rca_is_deterministic():
    config = RcaConfig(seed=5, chunk_size=4)
    assert run_rca(faulty_bundle(3), config).to_json() == run_rca(faulty_bundle(3), config).to_json()


@pytest.mark.parametrize('variant', ['severity', 'causal', 'fine'])
def test_ablation_variants_flatten_the_clusters(variant, window):
    report = run_rca(faulty_bundle(), RcaConfig(variant=variant))
    assert report.ranked_services[0] == 'c'
    assert sorted(report.ranked_services) == SERVICES
    assert {s.cluster for s in report.services} == {0}
    assert report.services[0].indicators[0].indicator == 'cpu'
    assert RcaConfig(variant=variant).echo(window)['variant'] == variant


def test_unknown_variant_is_rejected():
    with pytest.raises(InputError):
        RcaConfig(variant='nope')


def test_read_indicator_ranking_rejects_malformed_reports(tmp_path):
    path = tmp_path / 'report.json'
    path.write_text('{"version": ', encoding='utf-8')
    with pytest.raises(InputError):
        read_indicator_ranking(str(path), 'c')
    path.write_text(json.dumps({'version': REPORT_VERSION}), encoding='utf-8')
    with pytest.raises(InputError):
        read_ranking(str(path))
    path.write_text(json.dumps({'version': REPORT_VERSION, 'services': [
        {'rank': 1, 'service': 'c', 'indicators': [{'rank': 1}]}]}), encoding='utf-8')
    with pytest.raises(InputError):
        read_indicator_ranking(str(path), 'c')
