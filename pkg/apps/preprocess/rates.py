"""
Raw series transforms feeding the mixture fit.
"""

import logging

import numpy as np

from emodm.exceptions import NonPositiveValue, SeriesTooShort

from .series import RateSeries, RawSeries

logger = logging.getLogger(__name__)

DEFAULT_EPSILON_FACTOR = 1e-12


def default_denom_epsilon(raw, factor=DEFAULT_EPSILON_FACTOR):
    """Guard relative to the series scale: factor * max|x|."""
    scale = float(np.max(np.abs(raw.values))) if len(raw) else 0.0
    return factor * scale


def relative_change_rate(raw, denom_epsilon=None):
    """
    y_i = (x_i - x_{i-1}) / x_{i-1} for i >= 1.

    Rates whose denominator satisfies |x_{i-1}| < denom_epsilon are marked
    invalid. Rate i labels raw index i (the interval end).
    """
    if len(raw) < 2:
        raise SeriesTooShort(len(raw))
    if denom_epsilon is None:
        denom_epsilon = default_denom_epsilon(raw)

    x = raw.values
    previous = x[:-1]
    valid = np.abs(previous) >= denom_epsilon
    # an all-zero series has epsilon 0 and zero denominators
    valid &= previous != 0.0

    rates = np.zeros(previous.size)
    np.divide(x[1:] - previous, previous, out=rates, where=valid)

    invalid_count = int((~valid).sum())
    if invalid_count:
        logger.debug(f'{invalid_count} rate(s) marked invalid by the denominator guard')

    return RateSeries(
        rates=rates,
        valid=valid,
        origin_index=np.arange(1, len(raw)),
    )


def log10_transform(raw):
    """Element-wise base-10 logarithm; timestamps are kept."""
    non_positive = np.flatnonzero(raw.values <= 0)
    if non_positive.size:
        index = int(non_positive[0])
        raise NonPositiveValue(index, float(raw.values[index]))
    return RawSeries(values=np.log10(raw.values), timestamps=raw.timestamps)


def reconstruct(first_value, rates):
    """x_i = x_0 * prod_{j<=i}(1 + y_j) for a fully valid RateSeries."""
    return first_value * np.concatenate(([1.0], np.cumprod(1.0 + rates.rates)))
