"""
Parameter and result types for the two-state Gaussian mixture.

Component 1 (``normal``) is the correct working pattern, component 2
(``abnormal``) the abnormal one; ``abnormal_weight`` is eta.
"""

import math
from dataclasses import dataclass, field
from typing import List

import numpy as np
from django.conf import settings

from emodm.exceptions import DataError


@dataclass(frozen=True)
class GaussianComponent:
    mean: float
    std_dev: float

    def __post_init__(self):
        if not (math.isfinite(self.mean) and math.isfinite(self.std_dev)):
            raise DataError(f'component must be finite: mean={self.mean}, std_dev={self.std_dev}')
        if self.std_dev <= 0:
            raise DataError(f'component std_dev must be positive: {self.std_dev}')

    def scaled(self, factor):
        return GaussianComponent(self.mean * factor, self.std_dev * abs(factor))


@dataclass(frozen=True)
class MixtureParams:
    normal: GaussianComponent
    abnormal: GaussianComponent
    abnormal_weight: float

    def __post_init__(self):
        if not (0.0 <= self.abnormal_weight <= 1.0):
            raise DataError(f'abnormal_weight must lie in [0, 1]: {self.abnormal_weight}')

    @property
    def normal_weight(self):
        return 1.0 - self.abnormal_weight

    def swapped(self):
        """Exchange the two slots; weights follow their components."""
        return MixtureParams(
            normal=self.abnormal,
            abnormal=self.normal,
            abnormal_weight=1.0 - self.abnormal_weight,
        )

    def as_dict(self):
        return {
            'normal': {'mean': self.normal.mean, 'std_dev': self.normal.std_dev},
            'abnormal': {'mean': self.abnormal.mean, 'std_dev': self.abnormal.std_dev},
            'abnormal_weight': self.abnormal_weight,
        }

    @classmethod
    def from_values(cls, mu1, sigma1, mu2, sigma2, eta):
        """Build from the five-parameter tuple {mu1, sigma1, mu2, sigma2, eta}."""
        return cls(
            normal=GaussianComponent(float(mu1), float(sigma1)),
            abnormal=GaussianComponent(float(mu2), float(sigma2)),
            abnormal_weight=float(eta),
        )


@dataclass(frozen=True)
class ResponsibilityMatrix:
    """
    Soft assignments D_ik, one row per valid sample.
    """

    values: np.ndarray

    ROW_TOLERANCE = 1e-12

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] != 2:
            raise DataError(f'responsibilities must be N x 2, got shape {values.shape}')
        if np.any(values < 0) or np.any(values > 1):
            raise DataError('responsibilities must lie in [0, 1]')
        if values.shape[0] and np.max(np.abs(values.sum(axis=1) - 1.0)) > self.ROW_TOLERANCE:
            raise DataError('responsibility rows must sum to 1')
        object.__setattr__(self, 'values', values)

    @property
    def rows(self):
        return self.values.shape[0]

    @property
    def abnormal(self):
        return self.values[:, 1]


@dataclass(frozen=True)
class FitConfig:
    max_iterations: int = 500
    rel_loglik_tolerance: float = 1e-8
    variance_floor_factor: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise DataError(f'max_iterations must be >= 1: {self.max_iterations}')
        if self.rel_loglik_tolerance <= 0 or self.variance_floor_factor <= 0:
            raise DataError('tolerances must be positive')

    @classmethod
    def from_settings(cls, **overrides):
        config = settings.EMODM
        values = {
            'max_iterations': config['MAX_ITERATIONS'],
            'rel_loglik_tolerance': config['REL_LOGLIK_TOLERANCE'],
            'variance_floor_factor': config['VARIANCE_FLOOR_FACTOR'],
            'seed': config['SEED'],
        }
        values.update(overrides)
        return cls(**values)

    def as_dict(self):
        return {
            'max_iterations': self.max_iterations,
            'rel_loglik_tolerance': self.rel_loglik_tolerance,
            'variance_floor_factor': self.variance_floor_factor,
            'seed': self.seed,
        }


@dataclass(frozen=True)
class FitResult:
    params: MixtureParams
    responsibilities: ResponsibilityMatrix
    loglik_trace: List[float] = field(default_factory=list)
    iterations_used: int = 0
    converged: bool = False

    @property
    def final_loglik(self):
        return self.loglik_trace[-1]
