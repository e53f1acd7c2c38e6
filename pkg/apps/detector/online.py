"""
Online detection loop over a growing window.

Each new raw value adds one rate. Once enough valid rates are buffered the
mixture is refitted (warm-started from the previous fit, with a full refit
from ``default_init`` every ``refit_period`` samples) and the newest rate is
scored.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from django.conf import settings

from apps.mixture.em import MIN_FIT_SAMPLES, default_init, fit_em
from apps.mixture.params import MixtureParams
from apps.preprocess.rates import DEFAULT_EPSILON_FACTOR
from apps.preprocess.series import RateSeries
from emodm.exceptions import DataError, InvalidSample, NumericalError

from .scoring import canonicalize_components, posterior_abnormal

logger = logging.getLogger(__name__)

STATUS_INSUFFICIENT = 'insufficient data'
STATUS_SCORED = 'scored'
STATUS_INVALID_RATE = 'invalid rate'
STATUS_UNAVAILABLE = 'model unavailable'


def _empty_buffer():
    return RateSeries(rates=np.empty(0), valid=np.empty(0, dtype=bool), origin_index=np.empty(0, dtype=int))


@dataclass(frozen=True)
class Alarm:
    index: int
    value: float
    rate: float
    posterior: float

    def as_dict(self):
        return {'index': self.index, 'value': self.value, 'posterior': self.posterior}


@dataclass(frozen=True, eq=False)
class OnlineDetectorState:
    """
    Immutable snapshot of the online detector; ``online_step`` returns a new one.

    ``seen`` counts raw values consumed, so the newest value has raw index
    ``seen - 1``.
    """

    buffer: RateSeries = field(default_factory=_empty_buffer)
    last_params: Optional[MixtureParams] = None
    samples_since_refit: int = 0
    last_value: Optional[float] = None
    seen: int = 0
    scale: float = 0.0
    status: str = STATUS_INSUFFICIENT
    last_posterior: Optional[float] = None
    epsilon_factor: float = DEFAULT_EPSILON_FACTOR

    @property
    def failure_probability(self):
        return None if self.last_params is None else self.last_params.abnormal_weight


def _append_rate(state, value):
    """Buffer the rate ending at ``value``; the guard follows the running max |x|."""
    scale = max(state.scale, abs(value))
    previous = state.last_value
    epsilon = state.epsilon_factor * scale
    valid = previous != 0.0 and abs(previous) >= epsilon
    rate = (value - previous) / previous if valid else 0.0
    buffer = state.buffer.append(rate, valid, origin=state.seen)
    return buffer, rate, valid, scale


def _refit(samples, state, config):
    """Return ``(params, full)`` or ``(None, True)`` when no model can be fitted."""
    full = state.last_params is None or state.samples_since_refit >= config.refit_period

    if not full:
        try:
            return fit_em(samples, state.last_params, config.fit).params, False
        except NumericalError as exc:
            logger.warning(f'warm start failed ({exc}); falling back to a full refit')
        except DataError as exc:
            logger.warning(f'model unavailable: {exc}')
            return None, True

    try:
        result = fit_em(samples, default_init(samples), config.fit)
    except (NumericalError, DataError) as exc:
        logger.warning(f'model unavailable: {exc}')
        return None, True
    logger.debug(f'full refit on {samples.valid_count} sample(s)')
    return result.params, True


def online_step(state, new_raw_value, config):
    """
    Consume one raw value. Returns ``(new_state, alarm_or_None)``; the new
    state's ``status`` tells why no alarm was raised.
    """
    value = float(new_raw_value)
    if not math.isfinite(value):
        raise InvalidSample(new_raw_value)

    if state.last_value is None:
        next_state = replace(
            state, last_value=value, seen=state.seen + 1, scale=abs(value),
            status=STATUS_INSUFFICIENT, last_posterior=None,
        )
        return next_state, None

    index = state.seen
    buffer, rate, valid, scale = _append_rate(state, value)
    advanced = replace(
        state,
        buffer=buffer,
        last_value=value,
        seen=index + 1,
        scale=scale,
        samples_since_refit=state.samples_since_refit + 1,
        last_posterior=None,
    )

    if buffer.valid_count < max(config.warmup_count, MIN_FIT_SAMPLES):
        return replace(advanced, status=STATUS_INSUFFICIENT), None

    params, full = _refit(buffer, advanced, config)
    if params is None:
        # keep the previous model; the next step retries a full refit
        return replace(advanced, status=STATUS_UNAVAILABLE, samples_since_refit=config.refit_period), None

    params = canonicalize_components(params)
    advanced = replace(
        advanced,
        last_params=params,
        samples_since_refit=0 if full else advanced.samples_since_refit,
    )

    if not valid:
        return replace(advanced, status=STATUS_INVALID_RATE), None

    posterior = posterior_abnormal(rate, params)
    advanced = replace(advanced, status=STATUS_SCORED, last_posterior=posterior)
    if posterior >= config.alpha_f:
        logger.info(f'alarm at index {index}: posterior {posterior:.6f}')
        return advanced, Alarm(index=index, value=value, rate=rate, posterior=posterior)
    return advanced, None


def run_online(values, config, state=None):
    """Feed a sequence through ``online_step``; returns ``(state, alarms)``."""
    state = state or OnlineDetectorState(epsilon_factor=settings.EMODM['DENOM_EPSILON_FACTOR'])
    alarms = []
    for value in values:
        state, alarm = online_step(state, value, config)
        if alarm is not None:
            alarms.append(alarm)
    return state, alarms