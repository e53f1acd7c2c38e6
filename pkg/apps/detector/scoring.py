"""
Posterior scoring, thresholding and segment merging.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from django.conf import settings
from scipy.special import logsumexp

from apps.mixture.em import default_init, fit_em, weighted_log_densities
from apps.mixture.params import FitConfig, FitResult, MixtureParams
from apps.preprocess.series import RateSeries
from emodm.exceptions import DataError, InvalidSample

logger = logging.getLogger(__name__)

WEIGHT_TIE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class DetectionConfig:
    alpha_f: float = 0.95
    warmup_count: int = 50
    refit_period: int = 100
    fit: FitConfig = field(default_factory=FitConfig)

    def __post_init__(self):
        if not (0.0 < self.alpha_f < 1.0):
            raise DataError(f'alpha_f must lie strictly between 0 and 1: {self.alpha_f}')
        if self.warmup_count < 1 or self.refit_period < 1:
            raise DataError('warmup_count and refit_period must be positive')

    @classmethod
    def from_settings(cls, fit=None, **overrides):
        config = settings.EMODM
        values = {
            'alpha_f': config['ALPHA_F'],
            'warmup_count': config['WARMUP_COUNT'],
            'refit_period': config['REFIT_PERIOD'],
        }
        values.update({key: value for key, value in overrides.items() if value is not None})
        return cls(fit=fit or FitConfig.from_settings(), **values)

    def as_dict(self):
        return {
            'alpha_f': self.alpha_f,
            'warmup_count': self.warmup_count,
            'refit_period': self.refit_period,
            'fit': self.fit.as_dict(),
        }


@dataclass(frozen=True, eq=False)
class DetectionReport:
    """
    Result of scoring one RateSeries.

    ``posteriors`` is aligned to the rate series and holds NaN at invalid
    entries; ``flagged`` and ``segments`` use 0-based rate indices.
    """

    posteriors: np.ndarray
    flagged: Tuple[int, ...]
    segments: List[Tuple[int, int]]
    failure_probability: float
    params: MixtureParams
    alpha_f: float = 0.95

    @property
    def flagged_count(self):
        return len(self.flagged)

    def flag_mask(self):
        mask = np.zeros(self.posteriors.size, dtype=bool)
        mask[list(self.flagged)] = True
        return mask


def posterior_matrix(y, params):
    """N x 2 posteriors (p(S=1|y), p(S=2|y)) in the log domain."""
    y = np.asarray(y, dtype=float).reshape(-1)
    if not np.all(np.isfinite(y)):
        raise InvalidSample(y[~np.isfinite(y)][0])
    joint = weighted_log_densities(y, params)
    return np.exp(joint - logsumexp(joint, axis=1, keepdims=True))


def posterior_abnormal(y, params):
    """
    p(S=2|y) = eta f2(y) / ((1 - eta) f1(y) + eta f2(y)).

    Scalar in, float out; arrays are scored element-wise.
    """
    values = posterior_matrix(y, params)[:, 1]
    return float(values[0]) if np.ndim(y) == 0 else values


def failure_probability(params):
    """Global abnormal probability P_f, the fitted abnormal weight."""
    return params.abnormal_weight


def canonicalize_components(params):
    """
    Put the smaller-weight component in the abnormal slot.

    On an even split the component with the larger std_dev is abnormal.
    """
    if abs(params.abnormal_weight - 0.5) < WEIGHT_TIE_TOLERANCE:
        if params.normal.std_dev > params.abnormal.std_dev:
            return params.swapped()
        return params
    if params.abnormal_weight > 0.5:
        return params.swapped()
    return params


def merge_segments(indices):
    """Maximal runs of consecutive indices as inclusive (start, end) pairs."""
    segments = []
    for index in sorted(indices):
        if segments and index == segments[-1][1] + 1:
            segments[-1] = (segments[-1][0], index)
        else:
            segments.append((index, index))
    return segments


def flag_posteriors(posteriors, valid, alpha_f):
    """Indices i with valid(i) and posteriors[i] >= alpha_f."""
    posteriors = np.asarray(posteriors, dtype=float)
    valid = np.asarray(valid, dtype=bool)
    hits = np.zeros(posteriors.size, dtype=bool)
    hits[valid] = posteriors[valid] >= alpha_f
    return tuple(int(i) for i in np.flatnonzero(hits))


def flag_and_segment(rates, params, config):
    posteriors = np.full(len(rates), np.nan)
    if rates.valid_count:
        posteriors[rates.valid] = posterior_abnormal(rates.valid_rates(), params)

    flagged = flag_posteriors(posteriors, rates.valid, config.alpha_f)
    return DetectionReport(
        posteriors=posteriors,
        flagged=flagged,
        segments=merge_segments(flagged),
        failure_probability=failure_probability(params),
        params=params,
        alpha_f=config.alpha_f,
    )


def fit_and_flag(rates, config, init: Optional[MixtureParams] = None):
    """
    Batch pipeline: fit (default_init unless ``init`` is given), canonicalize,
    score. Returns ``(DetectionReport, FitResult)``.
    """
    if not isinstance(rates, RateSeries):
        rates = RateSeries.from_samples(rates)
    fit: FitResult = fit_em(rates, init or default_init(rates), config.fit)
    params = canonicalize_components(fit.params)
    report = flag_and_segment(rates, params, config)
    logger.info(
        f'{report.flagged_count} of {rates.valid_count} rate(s) flagged in '
        f'{len(report.segments)} segment(s), P_f={report.failure_probability:.4%}'
    )
    return report, fit
