"""
Nanomagnet benchmark: spherical Landau-Lifshitz-Gilbert dynamics with
spin-transfer torque.

Time runs in physical seconds. The dimensionless effective field is scaled
by omega = gamma * 2 k_u / M_s; the spin torque already carries 1/s.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from emodm.exceptions import CoordinateSingularity, DataError, IntegrationError

from .schedule import SimTrace

logger = logging.getLogger(__name__)

POLE_EPSILON = 1e-10
POLE_NUDGE = 1e-9
DEFAULT_MAX_STEP = 1e-12
NOMINAL_THETA = math.pi / 4

# Adams-Bashforth (predictor) and Adams-Moulton (corrector) weights, order 4
_AB4 = np.array([55.0, -59.0, 37.0, -9.0]) / 24.0
_AM4 = np.array([9.0, 19.0, -5.0, 1.0]) / 24.0


@dataclass(frozen=True)
class LlgParams:
    """Nanomagnet constants in CGS units; ``i_s`` in amperes."""

    k_u: float = 3.14e4
    gamma: float = 1.76e7
    damping: float = 0.007
    h_d: float = 0.0
    q: float = 1.6e-19
    m_s: float = 780.0
    volume: float = 2.72e-17
    mu_b: float = 9.274e-21
    i_s: float = 1.814e-4
    polarization: Tuple[float, float, float] = (0.0, 0.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, 'polarization', tuple(float(v) for v in self.polarization))
        if self.gamma <= 0:
            raise DataError(f'gamma must be positive: {self.gamma}')
        if self.damping < 0:
            raise DataError(f'damping must be non-negative: {self.damping}')
        if min(self.m_s, self.volume, self.mu_b, self.q, self.k_u) <= 0:
            raise DataError('m_s, volume, mu_b, q and k_u must be positive')
        if abs(np.linalg.norm(self.polarization) - 1.0) > 1e-9:
            raise DataError(f'polarization must be a unit vector: {self.polarization}')

    @property
    def omega(self):
        """Field-to-rate scale, 1/s."""
        return self.gamma * 2.0 * self.k_u / self.m_s

    def as_dict(self):
        return {
            'k_u': self.k_u, 'gamma': self.gamma, 'damping': self.damping, 'h_d': self.h_d,
            'q': self.q, 'm_s': self.m_s, 'volume': self.volume, 'mu_b': self.mu_b,
            'i_s': self.i_s, 'polarization': list(self.polarization),
        }


@dataclass(frozen=True)
class MagnetState:
    theta: float
    phi: float

    def cartesian(self):
        sin_theta = math.sin(self.theta)
        return np.array([sin_theta * math.cos(self.phi), sin_theta * math.sin(self.phi), math.cos(self.theta)])

    @property
    def m_x(self):
        return math.sin(self.theta) * math.cos(self.phi)


def spin_count(params):
    """N_s = M_s V / mu_B."""
    return params.m_s * params.volume / params.mu_b


def effective_field(m, params):
    """Dimensionless H = (0, -h_d m_y, m_z)."""
    m = np.asarray(m, dtype=float)
    return np.array([0.0, -params.h_d * m[1], m[2]])


def spin_torque(m, params):
    """m x (I x m) / (q N_s) with I = i_s * polarization."""
    m = np.asarray(m, dtype=float)
    current = params.i_s * np.asarray(params.polarization)
    return np.cross(m, np.cross(current, m)) / (params.q * spin_count(params))


def cartesian_rhs(m, params):
    """
    dm/dt of (1 + l^2) dm/dt = -w m x H - l w m x (m x H) + tau + l m x tau.
    """
    h = effective_field(m, params)
    tau = spin_torque(m, params)
    lam, omega = params.damping, params.omega
    m_cross_h = np.cross(m, h)
    rate = -omega * m_cross_h - lam * omega * np.cross(m, m_cross_h) + tau + lam * np.cross(m, tau)
    return rate / (1.0 + lam * lam)


def llg_rhs(state, params):
    """(d theta/dt, d phi/dt) by projecting dm/dt onto the tangent basis."""
    sin_theta = math.sin(state.theta)
    if abs(sin_theta) < POLE_EPSILON:
        raise CoordinateSingularity(state.theta)
    cos_theta = math.cos(state.theta)
    sin_phi, cos_phi = math.sin(state.phi), math.cos(state.phi)

    rate = cartesian_rhs(state.cartesian(), params)
    theta_hat = np.array([cos_theta * cos_phi, cos_theta * sin_phi, -sin_theta])
    phi_hat = np.array([-sin_phi, cos_phi, 0.0])
    return float(rate @ theta_hat), float(rate @ phi_hat) / sin_theta


class _GuardedRhs:
    """llg_rhs on arrays; nudges theta off a pole and reports it."""

    def __init__(self, params):
        self.params = params
        self.nudges = 0

    def __call__(self, y, t):
        try:
            return y, np.array(llg_rhs(MagnetState(y[0], y[1]), self.params))
        except CoordinateSingularity:
            direction = 1.0 if math.cos(y[0]) > 0 else -1.0
            nudged = np.array([y[0] + direction * POLE_NUDGE, y[1]])
            self.nudges += 1
            logger.warning(f'theta={y[0]:.3g} at the pole at t={t:.6g}s; nudged by {POLE_NUDGE:g}')
            return nudged, np.array(llg_rhs(MagnetState(nudged[0], nudged[1]), self.params))


def _rk4_step(rhs, y, f, t, h):
    k1 = f
    _, k2 = rhs(y + 0.5 * h * k1, t + 0.5 * h)
    _, k3 = rhs(y + 0.5 * h * k2, t + 0.5 * h)
    _, k4 = rhs(y + h * k3, t + h)
    return y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_llg(initial, params, t_span, sample_count, max_step=DEFAULT_MAX_STEP) -> List[MagnetState]:
    """
    Fourth-order Adams-Bashforth-Moulton PECE on (theta, phi).

    The first three steps are taken with classical RK4. Returns the states
    at ``sample_count`` uniform times spanning ``t_span`` inclusively.
    """
    if sample_count < 2:
        raise DataError(f'sample_count must be at least 2: {sample_count}')
    t0, t1 = (float(v) for v in t_span)
    if not t1 > t0:
        raise DataError(f'empty time span {t_span}')

    intervals = sample_count - 1
    per_sample = max(1, math.ceil((t1 - t0) / intervals / max_step - 1e-9))
    h = (t1 - t0) / (intervals * per_sample)

    rhs = _GuardedRhs(params)
    y, f = rhs(np.array([initial.theta, initial.phi], dtype=float), t0)
    history = [f]
    states = [MagnetState(float(y[0]), float(y[1]))]

    step = 0
    for _ in range(intervals):
        for _ in range(per_sample):
            t = t0 + step * h
            if len(history) < 4:
                candidate = _rk4_step(rhs, y, f, t, h)
            else:
                predicted = y + h * (_AB4 @ np.array(history[-1:-5:-1]))
                _, f_predicted = rhs(predicted, t + h)
                candidate = y + h * (_AM4 @ np.array([f_predicted, *history[-1:-4:-1]]))
            if not np.all(np.isfinite(candidate)):
                raise IntegrationError(t + h, 'non-finite state')

            y_next, f = rhs(candidate, t + h)
            if y_next is not candidate:
                # a nudge breaks the multistep history; bootstrap again
                history = []
            y = y_next
            history = (history + [f])[-4:]
            step += 1
        states.append(MagnetState(float(y[0]), float(y[1])))

    if rhs.nudges:
        logger.warning(f'{rhs.nudges} pole nudge(s) during integration')
    return states


@dataclass(frozen=True)
class AzimuthFault:
    """Distribution of the re-drawn polar angle at each abnormal segment start."""

    mean: float = math.pi / 4
    std: float = math.pi / 12

    def __post_init__(self):
        if self.std < 0:
            raise DataError(f'fault std must be non-negative: {self.std}')

    def draw(self, rng):
        return float(rng.normal(self.mean, self.std)) if self.std > 0 else float(self.mean)

    def as_dict(self):
        return {'mean': self.mean, 'std': self.std}


def run_llg_benchmark(schedule, params, azimuth_fault=(math.pi / 4, math.pi / 12), noise_fraction=0.01, seed=0,
                      initial=None, max_step=DEFAULT_MAX_STEP):
    """
    Labelled m_x trace, one value per period end.

    The magnet starts at theta0 = pi/4. At each abnormal segment start theta
    is re-drawn (phi kept) and the dynamics continue from the disturbed
    state, through the segment and past its end; the trajectory never jumps
    back.
    """
    if noise_fraction < 0:
        raise DataError(f'noise_fraction must be non-negative: {noise_fraction}')
    fault = azimuth_fault if isinstance(azimuth_fault, AzimuthFault) else AzimuthFault(*azimuth_fault)
    initial = initial or MagnetState(NOMINAL_THETA, 0.0)
    rng = np.random.default_rng(seed)
    period = schedule.period_duration
    clean = np.empty(schedule.total_periods)

    def advance(state, first, last):
        # periods first+1 .. last, starting from ``state`` at first * period
        if last <= first:
            return state
        states = integrate_llg(state, params, (first * period, last * period), last - first + 1, max_step)
        clean[first:last] = [s.m_x for s in states[1:]]
        return states[-1]

    state, position = initial, 0
    for start, end in schedule.abnormal_segments:
        state = advance(state, position, start - 1)
        faulty = MagnetState(fault.draw(rng), state.phi)
        logger.debug(f'segment {start}-{end}: theta {state.theta:.4f} -> {faulty.theta:.4f}')
        state = advance(faulty, start - 1, end)
        position = end
    advance(state, position, schedule.total_periods)

    outputs = clean
    noise_std = noise_fraction * float(np.ptp(clean))
    if noise_fraction > 0:
        outputs = clean + rng.normal(0.0, noise_std, clean.size)

    description = {
        'benchmark': 'llg',
        'output': 'm_x',
        'params': params.as_dict(),
        'azimuth_fault': fault.as_dict(),
        'initial': {'theta': initial.theta, 'phi': initial.phi},
        'noise_fraction': noise_fraction,
        'noise_std': noise_std,
        'max_step': max_step,
        'seed': seed,
    }
    return SimTrace.from_schedule(schedule, outputs, input_description=description)
