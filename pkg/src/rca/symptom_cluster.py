"""Group services by severity symptoms with a BIC-selected Gaussian mixture and rank the groups."""

from dataclasses import dataclass
import logging
import math
from typing import Dict, List, Sequence, Tuple
import warnings

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm
from sklearn.mixture import GaussianMixture

from src.errors import InputError

logger = logging.getLogger(__name__)

DEFAULT_K_MAX = 8
DEFAULT_TAU = 0.1
N_RESTARTS = 5
MAX_ITER = 200
TOLERANCE = 1e-6
VARIANCE_FLOOR = 1e-6
# fewer expected points than this lets EM collapse a component onto a single point
MIN_COMPONENT_MASS = 2.0


@dataclass(frozen=True, eq=False)
class GmmModel:
    """Diagonal-covariance Gaussian mixture over severity vectors."""
    k: int
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_likelihood: float
    seed: int

    @property
    def dims(self) -> int:
        return self.means.shape[1]

    def log_joint(self, points) -> np.ndarray:
        """Per-point, per-component log of weight times density."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        dens = norm.logpdf(points[:, None, :], loc=self.means[None, :, :], scale=np.sqrt(self.variances)[None, :, :])
        return np.log(self.weights)[None, :] + dens.sum(axis=2)

    def responsibilities(self, points) -> np.ndarray:
        joint = self.log_joint(points)
        return np.exp(joint - logsumexp(joint, axis=1, keepdims=True))

    def score(self, points) -> float:
        return float(np.sum(logsumexp(self.log_joint(points), axis=1)))

    @property
    def n_parameters(self) -> int:
        return (self.k - 1) + 2 * self.k * self.dims


@dataclass(frozen=True)
class Cluster:
    members: Tuple[Tuple[str, float], ...]
    severity_score: float
    component: int

    @property
    def services(self) -> List[str]:
        return [service for service, _ in self.members]


@dataclass(frozen=True)
class ClusterRanking:
    clusters: Tuple[Cluster, ...]
    responsibilities: Dict[str, Tuple[float, ...]]

    def cluster_of(self, service: str) -> int:
        """Index of the first (most severe) cluster holding the service."""
        for i, cluster in enumerate(self.clusters):
            if service in cluster.services:
                return i
        raise KeyError(service)


def _as_points(points) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points.reshape(-1, 1)
    return points


def fit_gmm(points, k: int, seed: int) -> GmmModel:
    """EM with diagonal covariances, k-means++ seeding and the best of several restarts.

    :param points: An (n, d) array of severity vectors.
    :param k: Component count.
    :param seed: Seed for initialisation.
    :return: The fitted model.
    """
    points = _as_points(points)
    n = len(points)
    if k < 1:
        raise InputError('GMM needs k >= 1, got %s' % k)
    if k > n:
        raise InputError('Cannot fit %d components to %d points' % (k, n))

    if n == 1:
        # a single point is its own component; EM has nothing to iterate on
        weights = np.ones(1)
        means = points.copy()
        variances = np.full_like(points, VARIANCE_FLOOR)
    else:
        gmm = GaussianMixture(n_components=k, covariance_type='diag', tol=TOLERANCE, reg_covar=VARIANCE_FLOOR,
                              max_iter=MAX_ITER, n_init=N_RESTARTS, init_params='k-means++', random_state=seed)
        with warnings.catch_warnings():
            # duplicate severity vectors routinely trigger convergence and k-means warnings
            warnings.simplefilter('ignore')
            gmm.fit(points)
        weights = gmm.weights_ / gmm.weights_.sum()
        means = gmm.means_
        variances = np.maximum(gmm.covariances_, VARIANCE_FLOOR)

    model = GmmModel(k, weights, means, variances, 0.0, seed)
    model = GmmModel(k, weights, means, variances, model.score(points), seed)
    for array in (model.weights, model.means, model.variances):
        array.flags.writeable = False
    return model


def bic(model: GmmModel, n: int) -> float:
    """Bayesian information criterion: p * ln(n) - 2 * log-likelihood."""
    if n < 1:
        raise InputError('BIC needs n >= 1')
    return model.n_parameters * math.log(n) - 2.0 * model.log_likelihood


def select_k(points, k_max: int = DEFAULT_K_MAX, seed: int = 0) -> Tuple[int, GmmModel]:
    """Fit k = 1..min(k_max, n) and keep the lowest BIC, ties going to the smaller k.

    A candidate with k > 1 is skipped when any component carries an expected point count n * weight
    below MIN_COMPONENT_MASS; such fits win BIC through a variance collapsed onto the floor.

    :return: A tuple of the chosen component count and its model.
    """
    points = _as_points(points)
    if k_max < 1:
        raise InputError('k_max must be >= 1, got %s' % k_max)
    best = None
    for k in range(1, min(k_max, len(points)) + 1):
        model = fit_gmm(points, k, seed)
        if k > 1 and float(np.min(model.weights)) * len(points) < MIN_COMPONENT_MASS:
            logger.debug('gmm k=%d skipped: component mass %.3f', k, float(np.min(model.weights)) * len(points))
            continue
        score = bic(model, len(points))
        logger.debug('gmm k=%d bic=%.4f', k, score)
        if best is None or score < best[0]:
            best = (score, k, model)
    return best[1], best[2]


def rank_clusters(model: GmmModel, points, services: Sequence[str], tau: float = DEFAULT_TAU) -> ClusterRanking:
    """Order the mixture components by mean severity and assign services softly.

    A service always joins its most responsible component, and additionally any component whose
    responsibility reaches `tau`. Components left without members are omitted.
    """
    points = _as_points(points)
    if len(points) != len(services):
        raise InputError('%d points for %d services' % (len(points), len(services)))
    resp = model.responsibilities(points)
    best = np.argmax(resp, axis=1)

    clusters = []
    for c in range(model.k):
        members = [(s, float(resp[i, c])) for i, s in enumerate(services) if best[i] == c or resp[i, c] >= tau]
        if not members:
            continue
        members.sort(key=lambda m: (-m[1], m[0]))
        clusters.append(Cluster(tuple(members), float(np.mean(model.means[c])), c))
    clusters.sort(key=lambda cl: (-cl.severity_score, min(cl.services)))

    responsibilities = {s: tuple(float(v) for v in resp[i]) for i, s in enumerate(services)}
    logger.debug('clusters: %s', [(cl.severity_score, cl.services) for cl in clusters])
    assert clusters, 'every service joins at least its most responsible cluster'
    return ClusterRanking(tuple(clusters), responsibilities)
