"""
EM fitting of the two-state Gaussian mixture.

All sums run over the samples sorted by value, so permuting the input
leaves every fitted quantity bit-identical.
"""

import logging
import math

import numpy as np
from scipy.special import logsumexp

from apps.preprocess.series import as_samples
from emodm.exceptions import (
    DegenerateData,
    EmptyComponent,
    InvalidSample,
    ResponsibilityUndefined,
    TooFewSamples,
)

from .params import FitResult, GaussianComponent, MixtureParams, ResponsibilityMatrix

logger = logging.getLogger(__name__)

MIN_FIT_SAMPLES = 10
INITIAL_ABNORMAL_WEIGHT = 0.05
CENTRAL_BAND = (5.0, 95.0)
MONOTONE_SLACK = 1e-9

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def log_density(y, component):
    """Log of the Gaussian density, vectorised over y."""
    z = (np.asarray(y, dtype=float) - component.mean) / component.std_dev
    return -0.5 * z * z - math.log(component.std_dev) - _LOG_SQRT_2PI


def normal_density(x, component):
    """(1 / (sigma sqrt(2 pi))) exp(-(x - mu)^2 / (2 sigma^2))."""
    if not math.isfinite(x):
        raise InvalidSample(x)
    return math.exp(float(log_density(x, component)))


def weighted_log_densities(y, params):
    """N x 2 array of log(eta_k f(y_i; mu_k, sigma_k))."""
    with np.errstate(divide='ignore'):
        log_weights = np.log([params.normal_weight, params.abnormal_weight])
    return np.column_stack([
        log_weights[0] + log_density(y, params.normal),
        log_weights[1] + log_density(y, params.abnormal),
    ])


def e_step(samples, params):
    """
    Responsibilities D_ik for the valid samples, computed in the log domain.
    """
    y = as_samples(samples)
    joint = weighted_log_densities(y, params)
    norm = logsumexp(joint, axis=1, keepdims=True)

    bad = ~np.isfinite(norm[:, 0])
    if np.any(bad):
        raise ResponsibilityUndefined(int(np.flatnonzero(bad)[0]))

    values = np.exp(joint - norm)
    values /= values.sum(axis=1, keepdims=True)
    return ResponsibilityMatrix(values)


def m_step(samples, resp, variance_floor=0.0):
    """
    Weighted mean, standard deviation and eta from the responsibilities.

    The standard deviation is floored at ``variance_floor``.
    """
    y = as_samples(samples)
    weights = resp.values if isinstance(resp, ResponsibilityMatrix) else np.asarray(resp, dtype=float)
    if weights.shape[0] != y.size:
        raise ValueError(f'{weights.shape[0]} responsibility rows for {y.size} samples')

    order = np.argsort(y, kind='stable')
    y = y[order]
    weights = weights[order]

    components = []
    totals = []
    for k in range(2):
        d = weights[:, k]
        total = np.sum(d)
        if not total > 0:
            raise EmptyComponent(k + 1)
        mean = np.sum(d * y) / total
        variance = np.sum(d * (y - mean) ** 2) / total
        std_dev = max(math.sqrt(variance), variance_floor)
        if std_dev <= 0:
            raise EmptyComponent(k + 1)
        components.append(GaussianComponent(float(mean), float(std_dev)))
        totals.append(total)

    eta = float(totals[1] / y.size)
    return MixtureParams(
        normal=components[0],
        abnormal=components[1],
        abnormal_weight=min(max(eta, 0.0), 1.0),
    )


def observed_log_likelihood(samples, params):
    """sum_i log((1 - eta) f(y_i; mu1, sigma1) + eta f(y_i; mu2, sigma2))."""
    y = np.sort(as_samples(samples), kind='stable')
    return float(np.sum(logsumexp(weighted_log_densities(y, params), axis=1)))


def _check_fit_samples(y):
    if y.size < MIN_FIT_SAMPLES:
        raise TooFewSamples(y.size, MIN_FIT_SAMPLES)
    if np.ptp(y) == 0:
        raise DegenerateData()


def default_init(samples):
    """
    Quantile-based starting point.

    Component 1 takes the mean/std of samples inside the 5th-95th percentile
    band, component 2 those outside it; eta starts at 0.05.
    """
    y = np.sort(as_samples(samples), kind='stable')
    if y.size < MIN_FIT_SAMPLES:
        raise TooFewSamples(y.size, MIN_FIT_SAMPLES)

    lower, upper = np.percentile(y, CENTRAL_BAND)
    inside = (y >= lower) & (y <= upper)
    central = y[inside]
    mu1 = float(np.mean(central))
    sigma1 = float(np.std(central))
    if sigma1 == 0:
        raise DegenerateData('central spread is zero')

    tail = y[~inside]
    if tail.size == 0:
        mu2, sigma2 = mu1 + 3.0 * sigma1, 3.0 * sigma1
    else:
        # a single tail sample has no spread of its own
        mu2, sigma2 = float(np.mean(tail)), max(float(np.std(tail)), sigma1)

    return MixtureParams(
        normal=GaussianComponent(mu1, sigma1),
        abnormal=GaussianComponent(mu2, sigma2),
        abnormal_weight=INITIAL_ABNORMAL_WEIGHT,
    )


def variance_floor(samples, factor):
    """factor * population std of the valid samples."""
    y = np.sort(as_samples(samples), kind='stable')
    return factor * float(np.std(y))


def _floored(params, floor):
    if params.normal.std_dev >= floor and params.abnormal.std_dev >= floor:
        return params
    return MixtureParams(
        normal=GaussianComponent(params.normal.mean, max(params.normal.std_dev, floor)),
        abnormal=GaussianComponent(params.abnormal.mean, max(params.abnormal.std_dev, floor)),
        abnormal_weight=params.abnormal_weight,
    )


def fit_em(samples, init, config):
    """
    Alternate E and M steps until the relative log-likelihood change drops
    below ``config.rel_loglik_tolerance`` or ``config.max_iterations``.
    """
    y = as_samples(samples)
    _check_fit_samples(y)

    floor = variance_floor(y, config.variance_floor_factor)
    params = _floored(init, floor)
    previous = observed_log_likelihood(y, params)
    trace = [previous]
    converged = False
    iterations = 0

    for iteration in range(1, config.max_iterations + 1):
        resp = e_step(y, params)
        try:
            params = m_step(y, resp, variance_floor=floor)
        except EmptyComponent as exc:
            raise exc.at_iteration(iteration) from exc

        current = observed_log_likelihood(y, params)
        trace.append(current)
        iterations = iteration

        if current < previous - MONOTONE_SLACK:
            logger.warning(
                f'log-likelihood decreased at iteration {iteration}: {previous:.12g} -> {current:.12g}'
            )

        if abs(current - previous) / max(1.0, abs(previous)) < config.rel_loglik_tolerance:
            converged = True
            break
        previous = current

    logger.debug(
        f'EM {"converged" if converged else "stopped"} after {iterations} iteration(s), '
        f'log-likelihood {trace[-1]:.6g}'
    )

    return FitResult(
        params=params,
        responsibilities=e_step(y, params),
        loglik_trace=trace,
        iterations_used=iterations,
        converged=converged,
    )
