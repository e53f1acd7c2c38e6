"""
Classical comparison detectors behind one interface.

Every detector takes a RateSeries, scores its valid samples and returns a
BaselineResult whose ``flagged`` holds rate indices.
"""

import logging
import time
import warnings
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import stats
from sklearn.cluster import KMeans
from sklearn.ensemble import IsolationForest
from sklearn.exceptions import ConvergenceWarning
from sklearn.neighbors import LocalOutlierFactor, NearestNeighbors

from apps.mixture.em import MIN_FIT_SAMPLES
from apps.preprocess.series import RateSeries
from emodm.exceptions import DataError, DegenerateData, TooFewSamples

logger = logging.getLogger(__name__)

BANDWIDTH_RULES = ('silverman', 'scott')
PERFECT_FIT_TOLERANCE = 1e-12


@dataclass(frozen=True)
class BaselineResult:
    method_name: str
    flagged: Tuple[int, ...]
    abnormal_fraction: float
    wall_time: float = 0.0

    @property
    def flagged_count(self):
        return len(self.flagged)

    def as_dict(self):
        return {
            'method': self.method_name,
            'flagged': list(self.flagged),
            'flagged_count': self.flagged_count,
            'abnormal_fraction': self.abnormal_fraction,
            'wall_time': self.wall_time,
        }


def _valid_samples(rates, minimum=MIN_FIT_SAMPLES):
    if not isinstance(rates, RateSeries):
        rates = RateSeries.from_samples(rates)
    indices = rates.valid_indices()
    if indices.size < minimum:
        raise TooFewSamples(indices.size, minimum)
    return rates.valid_rates(), indices


def _result(name, indices, mask, started):
    flagged = tuple(int(i) for i in indices[mask])
    result = BaselineResult(
        method_name=name,
        flagged=flagged,
        abnormal_fraction=len(flagged) / indices.size,
        wall_time=time.perf_counter() - started,
    )
    logger.debug(f'{name}: {len(flagged)} of {indices.size} flagged in {result.wall_time:.3f}s')
    return result


def _above_quantile(scores, quantile):
    if not 0.0 <= quantile <= 1.0:
        raise DataError(f'quantile must lie in [0, 1]: {quantile}')
    return scores > np.quantile(scores, quantile)


def lrm_detector(rates, z_threshold=3.0):
    """Least-squares line over index -> rate; flags standardized residuals |z| >= z_threshold."""
    started = time.perf_counter()
    y, indices = _valid_samples(rates)
    if np.ptp(y) == 0:
        raise DegenerateData('zero residual variance')

    fit = stats.linregress(indices.astype(float), y)
    residuals = y - (fit.intercept + fit.slope * indices)
    spread = np.std(residuals)
    if spread <= PERFECT_FIT_TOLERANCE * np.max(np.abs(y)):
        # exact line up to rounding
        return _result('lrm', indices, np.zeros(y.size, dtype=bool), started)
    return _result('lrm', indices, np.abs(residuals / spread) >= z_threshold, started)


def kde_detector(rates, bandwidth_rule='silverman', density_quantile=0.05):
    """
    Gaussian-kernel density with a plug-in bandwidth; flags samples whose
    leave-one-out density falls below the ``density_quantile`` of all densities.
    """
    started = time.perf_counter()
    if bandwidth_rule not in BANDWIDTH_RULES:
        raise DataError(f'unknown bandwidth rule {bandwidth_rule!r}; expected one of {", ".join(BANDWIDTH_RULES)}')
    y, indices = _valid_samples(rates)
    if np.ptp(y) == 0:
        raise DegenerateData('zero bandwidth')

    bandwidth = float(np.sqrt(stats.gaussian_kde(y, bw_method=bandwidth_rule).covariance[0, 0]))
    if not bandwidth > 0:
        raise DegenerateData('zero bandwidth')

    kernel = stats.norm.pdf((y[:, None] - y[None, :]) / bandwidth)
    np.fill_diagonal(kernel, 0.0)
    density = kernel.sum(axis=1) / ((y.size - 1) * bandwidth)
    return _result('kde', indices, density < np.quantile(density, density_quantile), started)


def knn_detector(rates, k=10, score_quantile=0.95):
    """Score = distance to the k-th nearest other sample; flags scores above the quantile."""
    started = time.perf_counter()
    y, indices = _valid_samples(rates)
    if not 1 <= k < y.size:
        raise DataError(f'k must lie in [1, {y.size}): {k}')

    samples = y.reshape(-1, 1)
    # each sample is its own nearest neighbour at distance 0
    distances, _ = NearestNeighbors(n_neighbors=k + 1).fit(samples).kneighbors(samples)
    scores = distances[:, k]
    return _result('knn', indices, _above_quantile(scores, score_quantile), started)


def _two_means(y, seed):
    with warnings.catch_warnings():
        warnings.simplefilter('ignore', ConvergenceWarning)
        model = KMeans(n_clusters=2, n_init=1, random_state=seed).fit(y.reshape(-1, 1))
    labels = model.labels_
    sizes = np.bincount(labels, minlength=2)
    return labels, sizes, model.cluster_centers_[:, 0]


def kmeans_detector(rates, seed=0):
    """
    Two-cluster k-means in 1-D; the smaller cluster is flagged.

    An empty cluster re-seeds once. Equal sizes flag the cluster with the
    larger spread, then the larger center.
    """
    started = time.perf_counter()
    y, indices = _valid_samples(rates)

    labels, sizes, centers = _two_means(y, seed)
    if sizes.min() == 0:
        logger.info(f'k-means left a cluster empty with seed {seed}; re-seeding')
        labels, sizes, centers = _two_means(y, seed + 1)
        if sizes.min() == 0:
            raise DegenerateData('k-means found a single cluster')

    if sizes[0] != sizes[1]:
        abnormal = int(np.argmin(sizes))
    else:
        spreads = [np.std(y[labels == c]) for c in (0, 1)]
        if spreads[0] != spreads[1]:
            abnormal = int(np.argmax(spreads))
        else:
            abnormal = int(np.argmax(centers))
    return _result('kmeans', indices, labels == abnormal, started)


def iforest_detector(rates, trees=100, subsample=None, score_quantile=0.95, seed=0):
    """Isolation forest path-length scores on 1-D samples; flags the top fraction."""
    started = time.perf_counter()
    y, indices = _valid_samples(rates)
    subsample = min(256, y.size) if subsample is None else subsample
    if not 1 <= subsample <= y.size:
        raise DataError(f'subsample must lie in [1, {y.size}]: {subsample}')
    if trees < 1:
        raise DataError(f'trees must be positive: {trees}')

    forest = IsolationForest(n_estimators=trees, max_samples=subsample, random_state=seed)
    samples = y.reshape(-1, 1)
    scores = -forest.fit(samples).score_samples(samples)
    return _result('iforest', indices, _above_quantile(scores, score_quantile), started)


def lof_detector(rates, n_neighbors=20, score_quantile=0.95):
    """Local outlier factor; flags factors above the quantile."""
    started = time.perf_counter()
    y, indices = _valid_samples(rates)
    neighbors = min(n_neighbors, y.size - 1)

    model = LocalOutlierFactor(n_neighbors=neighbors)
    model.fit(y.reshape(-1, 1))
    scores = -model.negative_outlier_factor_
    return _result('lof', indices, _above_quantile(scores, score_quantile), started)
