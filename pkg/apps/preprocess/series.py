"""
Series types: raw system output and the relative-change-rate sample set.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from emodm.exceptions import DataError, InvalidSample


@dataclass(frozen=True)
class RawSeries:
    """
    System output x_0..x_N with optional timestamps.

    Timestamps are labels only (seconds, indices or datetime64); the rate
    transform is index based.
    """

    values: np.ndarray
    timestamps: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(values)):
            bad = int(np.flatnonzero(~np.isfinite(values))[0])
            raise InvalidSample(values[bad])
        object.__setattr__(self, 'values', values)

        if self.timestamps is not None:
            timestamps = np.asarray(self.timestamps).reshape(-1)
            if timestamps.shape != values.shape:
                raise DataError(
                    f'timestamps length {timestamps.size} does not match values length {values.size}'
                )
            if timestamps.size > 1 and not np.all(timestamps[1:] > timestamps[:-1]):
                raise DataError('timestamps must be strictly increasing')
            object.__setattr__(self, 'timestamps', timestamps)

    def __len__(self):
        return self.values.size

    def timestamp_labels(self):
        """Timestamps as a list of JSON/CSV friendly labels (index when absent)."""
        if self.timestamps is None:
            return list(range(len(self)))
        if np.issubdtype(self.timestamps.dtype, np.datetime64):
            return [str(np.datetime_as_string(ts, unit='D')) for ts in self.timestamps]
        return self.timestamps.tolist()


@dataclass(frozen=True)
class RateSeries:
    """
    Relative change rates y_1..y_N aligned with a validity mask.

    ``origin_index[i]`` is the raw index the rate i labels (interval end).
    Invalid entries carry no numeric meaning and never enter statistics.
    """

    rates: np.ndarray
    valid: np.ndarray
    origin_index: np.ndarray = field(default=None)

    def __post_init__(self):
        rates = np.asarray(self.rates, dtype=float).reshape(-1)
        valid = np.asarray(self.valid, dtype=bool).reshape(-1)
        if valid.shape != rates.shape:
            raise DataError('validity mask does not match rates')
        if self.origin_index is None:
            origin = np.arange(1, rates.size + 1)
        else:
            origin = np.asarray(self.origin_index, dtype=int).reshape(-1)
            if origin.shape != rates.shape:
                raise DataError('origin index does not match rates')
        if np.any(valid & ~np.isfinite(rates)):
            raise InvalidSample(rates[valid & ~np.isfinite(rates)][0])
        object.__setattr__(self, 'rates', rates)
        object.__setattr__(self, 'valid', valid)
        object.__setattr__(self, 'origin_index', origin)

    @classmethod
    def from_samples(cls, samples):
        """Wrap plain samples as a fully valid series."""
        samples = np.asarray(samples, dtype=float).reshape(-1)
        return cls(rates=samples, valid=np.ones(samples.size, dtype=bool))

    def __len__(self):
        return self.rates.size

    @property
    def valid_count(self):
        return int(self.valid.sum())

    def valid_rates(self):
        """Valid samples in ascending index order."""
        return self.rates[self.valid]

    def valid_indices(self):
        return np.flatnonzero(self.valid)

    def append(self, rate, is_valid, origin):
        """Return a new series with one more entry."""
        return RateSeries(
            rates=np.append(self.rates, rate if is_valid else 0.0),
            valid=np.append(self.valid, bool(is_valid)),
            origin_index=np.append(self.origin_index, int(origin)),
        )

    def prefix(self, length):
        return RateSeries(
            rates=self.rates[:length],
            valid=self.valid[:length],
            origin_index=self.origin_index[:length],
        )


def as_samples(samples):
    """
    Valid samples of a RateSeries, or a validated 1-D array of plain values.
    """
    if isinstance(samples, RateSeries):
        return samples.valid_rates()
    values = np.asarray(samples, dtype=float).reshape(-1)
    if not np.all(np.isfinite(values)):
        raise InvalidSample(values[~np.isfinite(values)][0])
    return values
