"""
Sallen-Key low-pass filter benchmark.

The filter output obeys

    R1 R2 C1 C2 V'' + (R1 + R2) C2 V' + V = V_in

which is integrated as the first-order system u = (V, V') with a fixed-step
three-stage Radau IIA scheme (order 5, stiffly accurate). Abnormal periods
replace (R1, C1, C2) by Monte-Carlo draws from the drift distribution.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from emodm.exceptions import DataError, IntegrationError, RejectionExhausted

from .schedule import SimTrace

logger = logging.getLogger(__name__)

SINGLE = 'single'
DOUBLE = 'double'
INPUT_KINDS = (SINGLE, DOUBLE)

INPUT_AMPLITUDE = 100.0
BASE_FREQUENCY = 400.0
STEPS_PER_PERIOD = 20
MAX_REDRAW_ROUNDS = 100

_SQRT6 = math.sqrt(6.0)


class RadauIIA5:
    """
    IRK, based on Radau (right) quadrature.
    """
    A = np.array([[(88. - 7 * _SQRT6) / 360., (296. - 169 * _SQRT6) / 1800., (-2. + 3 * _SQRT6) / 225.],
                  [(296. + 169 * _SQRT6) / 1800., (88. + 7 * _SQRT6) / 360., (-2. - 3 * _SQRT6) / 225.],
                  [(16. - _SQRT6) / 36., (16. + _SQRT6) / 36., 1. / 9]])
    b = np.array([(16. - _SQRT6) / 36., (16. + _SQRT6) / 36., 1. / 9])
    c = np.array([(4. - _SQRT6) / 10., (4. + _SQRT6) / 10., 1.])
    order = 5


@dataclass(frozen=True)
class CircuitParams:
    r1: float
    r2: float
    c1: float
    c2: float

    def __post_init__(self):
        for name in ('r1', 'r2', 'c1', 'c2'):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise DataError(f'{name} must be positive and finite: {value}')

    @classmethod
    def nominal(cls):
        """R1 = R2 = 1 kOhm, C1 = C2 = 0.4 uF (cutoff near 398 Hz)."""
        return cls(r1=1000.0, r2=1000.0, c1=0.4e-6, c2=0.4e-6)

    def coefficients(self):
        """(a, b) of a V'' + b V' + V = V_in."""
        return self.r1 * self.r2 * self.c1 * self.c2, (self.r1 + self.r2) * self.c2

    def time_constants(self):
        """1 / |Re s| for both roots of a s^2 + b s + 1."""
        roots = np.roots([*self.coefficients(), 1.0])
        return tuple(sorted(1.0 / np.abs(roots.real)))

    def gain(self, omega):
        """|H(j omega)| of the filter."""
        a, b = self.coefficients()
        return 1.0 / math.sqrt((1.0 - omega ** 2 * a) ** 2 + (omega * b) ** 2)

    def as_dict(self):
        return {'r1': self.r1, 'r2': self.r2, 'c1': self.c1, 'c2': self.c2}


@dataclass(frozen=True)
class DriftDistribution:
    """
    Abnormal-pattern parameter distribution.

    The second parameter of each pair is a variance. Draws are truncated to
    positive values by redrawing.
    """

    r1_mean: float = 1000.0
    r1_var: float = 1000.0
    c1_mean: float = 2.0
    c1_var: float = 1.0
    c2_mean: float = 2.0
    c2_var: float = 1.0
    rejection_tail: float = 0.04

    def __post_init__(self):
        for name in ('r1', 'c1', 'c2'):
            if getattr(self, f'{name}_var') < 0:
                raise DataError(f'{name}_var must be non-negative')
            if getattr(self, f'{name}_mean') <= 0:
                raise DataError(f'{name}_mean must be positive')
        if not (0.0 <= self.rejection_tail < 0.5):
            raise DataError(f'rejection_tail must lie in [0, 0.5): {self.rejection_tail}')

    def draw(self, rng, size):
        """(r1, c1, c2) arrays of ``size`` positive draws."""
        return tuple(
            _positive_normal(rng, getattr(self, f'{name}_mean'), getattr(self, f'{name}_var'), size)
            for name in ('r1', 'c1', 'c2')
        )

    def as_dict(self):
        return {
            'r1_mean': self.r1_mean, 'r1_var': self.r1_var,
            'c1_mean': self.c1_mean, 'c1_var': self.c1_var,
            'c2_mean': self.c2_mean, 'c2_var': self.c2_var,
            'rejection_tail': self.rejection_tail,
        }


def _positive_normal(rng, mean, variance, size):
    values = rng.normal(mean, math.sqrt(variance), size)
    for _ in range(MAX_REDRAW_ROUNDS):
        bad = values <= 0
        if not bad.any():
            return values
        values[bad] = rng.normal(mean, math.sqrt(variance), int(bad.sum()))
    raise DataError(f'cannot draw positive values from N({mean}, {variance})')


def input_voltage(t, kind=SINGLE):
    """100 sin(800 pi t), plus 100 sin(1600 pi t) for the double-component input."""
    if kind not in INPUT_KINDS:
        raise DataError(f'unknown input kind {kind!r}')
    t = np.asarray(t, dtype=float)
    volts = INPUT_AMPLITUDE * np.sin(2 * np.pi * BASE_FREQUENCY * t)
    if kind == DOUBLE:
        volts = volts + INPUT_AMPLITUDE * np.sin(4 * np.pi * BASE_FREQUENCY * t)
    return volts if volts.ndim else float(volts)


def describe_input(kind):
    frequencies = [BASE_FREQUENCY] if kind == SINGLE else [BASE_FREQUENCY, 2 * BASE_FREQUENCY]
    return {'kind': kind, 'amplitude_v': INPUT_AMPLITUDE, 'frequencies_hz': frequencies, 'phase': 0.0}


def _step_maps(a, b, h):
    """
    Per-draw one-step maps u_next = P u + Q g for u' = J u + (0, V_in / a).

    ``a`` and ``b`` have shape (D,); P is (D, 2, 2) and Q is (D, 2, 3), one
    column per stage forcing value.
    """
    tableau = RadauIIA5
    draws = a.size
    jac = np.zeros((draws, 2, 2))
    jac[:, 0, 1] = 1.0
    jac[:, 1, 0] = -1.0 / a
    jac[:, 1, 1] = -b / a

    # stage system (I - h A (x) J) U = 1 (x) u + h A (x) e2 g / a
    system = np.tile(np.eye(6), (draws, 1, 1))
    for i in range(3):
        for j in range(3):
            system[:, 2 * i:2 * i + 2, 2 * j:2 * j + 2] -= h * tableau.A[i, j] * jac

    rhs = np.zeros((draws, 6, 5))
    for i in range(3):
        rhs[:, 2 * i, 0] = 1.0
        rhs[:, 2 * i + 1, 1] = 1.0
        for j in range(3):
            rhs[:, 2 * i + 1, 2 + j] = h * tableau.A[i, j] / a

    try:
        solved = np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError as exc:
        raise IntegrationError(0.0, f'singular stage system: {exc}') from exc

    # stiffly accurate: the last stage is the step result
    last = solved[:, 4:6, :]
    return last[:, :, :2], last[:, :, 2:]


def _propagate(a, b, state, t0, steps, h, waveform):
    """Advance a batch of states ``steps`` fixed steps from t0; returns the end states."""
    transition, forcing = _step_maps(a, b, h)
    c = RadauIIA5.c
    for n in range(steps):
        t = t0 + n * h
        g = waveform(t + c * h)
        state = np.einsum('dij,dj->di', transition, state) + forcing @ g
        if not np.all(np.isfinite(state)):
            raise IntegrationError(t + h, 'non-finite state')
    return state


def integrate_filter(params, waveform, t_span, initial=(0.0, 0.0), step=None, samples=None):
    """
    Integrate the filter ODE over ``t_span`` with a fixed step.

    Returns ``(times, v_out, v_rate)`` sampled at ``samples`` + 1 uniform
    points including t0 (default: every step). The step is shrunk so that
    each sampling interval holds a whole number of steps.
    """
    t0, t1 = (float(v) for v in t_span)
    if not t1 > t0:
        raise DataError(f'empty time span {t_span}')
    if step is None or not step > 0:
        raise DataError(f'step must be positive: {step}')

    total_steps = max(1, math.ceil((t1 - t0) / step - 1e-9))
    samples = samples or total_steps
    per_sample = max(1, math.ceil(total_steps / samples))
    h = (t1 - t0) / (samples * per_sample)

    a, b = params.coefficients()
    a, b = np.array([a]), np.array([b])
    state = np.asarray(initial, dtype=float).reshape(1, 2)

    times = t0 + (t1 - t0) * np.arange(samples + 1) / samples
    trajectory = np.empty((samples + 1, 2))
    trajectory[0] = state[0]
    for k in range(samples):
        state = _propagate(a, b, state, times[k], per_sample, h, waveform)
        trajectory[k + 1] = state[0]
    return times, trajectory[:, 0], trajectory[:, 1]


def _reject(outputs, tail):
    """Mask of draws inside the empirical [tail/2, 1 - tail/2] output band."""
    if tail == 0:
        return np.ones(outputs.size, dtype=bool)
    lower, upper = np.quantile(outputs, [tail / 2, 1 - tail / 2])
    return (outputs >= lower) & (outputs <= upper)


def run_benchmark(schedule, nominal, drift, input_kind=SINGLE, mc_draws=1000, seed=0,
                  steps_per_period=STEPS_PER_PERIOD):
    """
    Simulate the labelled filter output, one value per period end.

    The nominal circuit runs through every period. An abnormal period
    reports the fault circuit instead: ``mc_draws`` drifted circuits, each
    switched in from rest at the period start and driven by the same input.
    The period output is the mean of the draws inside the rejection band.
    The nominal state is never touched, so the trace is back on the nominal
    waveform as soon as the segment ends.
    """
    if mc_draws < 1:
        raise DataError(f'mc_draws must be positive: {mc_draws}')
    rng = np.random.default_rng(seed)
    labels = schedule.labels()
    h = schedule.period_duration / steps_per_period

    def waveform(t):
        return input_voltage(t, input_kind)

    a_nom, b_nom = (np.array([v]) for v in nominal.coefficients())
    state = np.zeros((1, 2))
    outputs = np.empty(schedule.total_periods)

    for period in range(schedule.total_periods):
        t0 = period * schedule.period_duration
        state = _propagate(a_nom, b_nom, state, t0, steps_per_period, h, waveform)
        if labels[period] == 1:
            outputs[period] = state[0, 0]
            continue

        r1, c1, c2 = drift.draw(rng, mc_draws)
        a = r1 * nominal.r2 * c1 * c2
        b = (r1 + nominal.r2) * c2
        draws = _propagate(a, b, np.zeros((mc_draws, 2)), t0, steps_per_period, h, waveform)

        keep = _reject(draws[:, 0], drift.rejection_tail)
        if not keep.any():
            raise RejectionExhausted(period + 1)
        logger.debug(f'period {period + 1}: {mc_draws - int(keep.sum())} of {mc_draws} draw(s) rejected')
        outputs[period] = draws[keep, 0].mean()

    description = describe_input(input_kind)
    description.update({
        'benchmark': 'sallen-key',
        'nominal': nominal.as_dict(),
        'drift': drift.as_dict(),
        'mc_draws': mc_draws,
        'steps_per_period': steps_per_period,
        'seed': seed,
    })
    return SimTrace.from_schedule(schedule, outputs, input_description=description)
