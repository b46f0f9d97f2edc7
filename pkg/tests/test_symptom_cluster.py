import math

import numpy as np
import pytest

from src.errors import InputError
from src.rca.symptom_cluster import MIN_COMPONENT_MASS, VARIANCE_FLOOR, GmmModel, bic, fit_gmm, rank_clusters, select_k

CENTERS = np.array([[0.0, 0.0, 0.0], [10.0, 0.0, 0.0], [0.0, 10.0, 0.0]])


def blobs(seed, per_blob=30, std=1.0):
    rng = np.random.default_rng(seed)
    return np.vstack([rng.normal(c, std, size=(per_blob, 3)) for c in CENTERS])


def manual_model(weights, means, variances=None):
    means = np.asarray(means, dtype=float)
    variances = np.ones_like(means) if variances is None else np.asarray(variances, dtype=float)
    return GmmModel(len(weights), np.asarray(weights, dtype=float), means, variances, 0.0, 0)


def test_single_component_mean_is_sample_mean():
    points = blobs(1)
    model = fit_gmm(points, 1, seed=0)
    assert model.means[0] == pytest.approx(points.mean(axis=0), abs=1e-9)
    assert model.weights.tolist() == [1.0]


def test_two_groups_are_recovered():
    rng = np.random.default_rng(2)
    points = np.vstack([rng.normal(0, 0.1, size=(10, 3)), rng.normal(10, 0.1, size=(10, 3))])
    model = fit_gmm(points, 2, seed=0)
    means = sorted(model.means.tolist())
    assert np.allclose(means[0], [0, 0, 0], atol=0.5)
    assert np.allclose(means[1], [10, 10, 10], atol=0.5)
    assert model.weights.sum() == pytest.approx(1.0, abs=1e-9)


def test_identical_points_clamp_variance():
    points = np.tile([1.0, 2.0, 3.0], (5, 1))
    model = fit_gmm(points, 1, seed=0)
    assert np.allclose(model.variances, VARIANCE_FLOOR)
    assert select_k(points, 3, seed=0)[0] == 1


def test_single_point():
    k, model = select_k([[1.0, 2.0, 3.0]], 8, seed=0)
    assert k == 1
    assert model.means.tolist() == [[1.0, 2.0, 3.0]]


def test_too_many_components():
    with pytest.raises(InputError):
        fit_gmm(np.zeros((2, 3)), 3, seed=0)
    with pytest.raises(InputError):
        fit_gmm(np.zeros((2, 3)), 0, seed=0)


def test_bic_formula():
    model = GmmModel(1, np.ones(1), np.zeros((1, 3)), np.ones((1, 3)), -20.0, 0)
    assert bic(model, 10) == pytest.approx(6 * math.log(10) + 40)
    better = GmmModel(1, np.ones(1), np.zeros((1, 3)), np.ones((1, 3)), -10.0, 0)
    assert bic(better, 10) < bic(model, 10)
    assert manual_model([0.5, 0.5], np.zeros((2, 3))).n_parameters == 13


def test_one_cluster_data_prefers_one_component():
    points = np.random.default_rng(4).normal(5, 1, size=(60, 3))
    assert bic(fit_gmm(points, 1, 0), 60) < bic(fit_gmm(points, 2, 0), 60)


def test_select_k_recovers_three_blobs():
    for seed in range(5):
        assert select_k(blobs(seed), 8, seed)[0] == 3


def test_select_k_never_keeps_a_singleton_component():
    rng = np.random.default_rng(7)
    points = np.vstack([rng.normal(0, 1, size=(20, 3)), [[60.0, 60.0, 60.0]]])
    assert select_k(points, 8, seed=0)[0] == 1
    for seed in range(20):
        _, model = select_k(blobs(seed), 8, seed)
        assert float(np.min(model.weights)) * len(blobs(seed)) >= MIN_COMPONENT_MASS


def test_select_k_is_deterministic():
    points = blobs(9)
    k1, m1 = select_k(points, 8, seed=3)
    k2, m2 = select_k(points, 8, seed=3)
    assert k1 == k2
    assert np.array_equal(m1.means, m2.means)
    assert np.array_equal(m1.variances, m2.variances)


def test_clusters_ranked_by_mean_severity():
    rng = np.random.default_rng(5)
    points = np.vstack([rng.normal(1, 0.2, size=(6, 3)), rng.normal(8, 0.2, size=(4, 3))])
    services = ['s%d' % i for i in range(10)]
    _, model = select_k(points, 8, seed=0)
    ranking = rank_clusters(model, points, services, tau=0.1)
    high, low = services[6:], services[:6]
    assert set(ranking.clusters[0].services) <= set(high)
    assert max(ranking.cluster_of(s) for s in high) < min(ranking.cluster_of(s) for s in low)
    scores = [c.severity_score for c in ranking.clusters]
    assert scores == sorted(scores, reverse=True)
    for resp in ranking.responsibilities.values():
        assert sum(resp) == pytest.approx(1.0, abs=1e-6)
    assert {s for c in ranking.clusters for s in c.services} == set(services)


def test_severity_score_is_mean_of_component_mean():
    model = manual_model([0.5, 0.5], [[6, 3, 0], [0, 0, 0]], np.full((2, 3), 0.01))
    ranking = rank_clusters(model, [[6, 3, 0], [0, 0, 0]], ['a', 'b'])
    assert ranking.clusters[0].severity_score == pytest.approx(3.0)
    assert ranking.clusters[0].services == ['a']
    assert ranking.cluster_of('b') == 1


def test_soft_membership_threshold():
    model = manual_model([0.85, 0.15], [[1, 1, 1], [1, 1, 1]])
    soft = rank_clusters(model, [[1, 1, 1]], ['a'], tau=0.1)
    assert [c.services for c in soft.clusters] == [['a'], ['a']]
    assert soft.responsibilities['a'] == pytest.approx((0.85, 0.15))
    hard = rank_clusters(model, [[1, 1, 1]], ['a'], tau=0.2)
    assert [c.services for c in hard.clusters] == [['a']]


def test_every_service_joins_every_cluster_at_zero_tau():
    points = blobs(6, per_blob=5)
    services = ['s%02d' % i for i in range(len(points))]
    model = fit_gmm(points, 3, seed=0)
    ranking = rank_clusters(model, points, services, tau=0.0)
    assert all(sorted(c.services) == services for c in ranking.clusters)


def test_equal_severity_ties_break_on_member_name():
    model = manual_model([0.5, 0.5], [[1, 2, 3], [3, 2, 1]], np.full((2, 3), 0.01))
    ranking = rank_clusters(model, [[1, 2, 3], [3, 2, 1]], ['b', 'a'])
    assert [c.services for c in ranking.clusters] == [['a'], ['b']]


@pytest.mark.slow
def test_select_k_recovery_rate():
    hits = sum(select_k(blobs(seed), 8, seed)[0] == 3 for seed in range(100))
    assert hits >= 95
