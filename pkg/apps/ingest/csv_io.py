"""
CSV ingestion for real-world series.

Two layouts are understood:

* ``long``: columns ``key``, ``timestamp``, ``value``; one row per sample.
* ``wide``: a timestamp column followed by one value column per key.

Timestamps are ISO-8601 dates or plain reals. Missing cells are errors;
nothing is imputed.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import pandas as pd

from apps.preprocess.series import RawSeries
from emodm.exceptions import IngestError

logger = logging.getLogger(__name__)

LONG = 'long'
WIDE = 'wide'
LAYOUTS = (LONG, WIDE)

KEY_COLUMN = 'key'
TIMESTAMP_COLUMN = 'timestamp'
VALUE_COLUMN = 'value'

FLOAT_FORMAT = '%.17g'


@dataclass(frozen=True, eq=False)
class Dataset:
    series_by_key: Dict[str, RawSeries]
    frequency_hint: Optional[str] = None
    source: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        if not self.series_by_key:
            raise IngestError('dataset holds no series')
        for key, series in self.series_by_key.items():
            if len(series) == 0:
                raise IngestError(f'series {key!r} is empty')

    @property
    def keys(self):
        return list(self.series_by_key)

    def __getitem__(self, key):
        try:
            return self.series_by_key[key]
        except KeyError:
            raise IngestError(f'unknown series key {key!r}; available: {", ".join(self.keys)}') from None


def _load_frame(path):
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8')
    except FileNotFoundError:
        raise IngestError(f'input file not found: {path}') from None
    except (OSError, UnicodeDecodeError, pd.errors.ParserError) as exc:
        raise IngestError(f'cannot read {path}: {exc}') from exc
    except pd.errors.EmptyDataError:
        raise IngestError(f'{path} has no header row') from None
    frame.columns = [str(column).strip() for column in frame.columns]
    return frame


def _float_or_nan(cell):
    # float() is correctly rounded, so 17-digit cells read back bit-exactly
    try:
        return float(cell)
    except ValueError:
        return float('nan')


def _cell_error(problem, row, column):
    # row is the 0-based data row; line 1 is the header
    return IngestError(f'{problem} cell at line {row + 2}, column {column!r}')


def _parse_values(frame, column):
    raw = frame[column].str.strip()
    blank = raw == ''
    if blank.any():
        raise _cell_error('blank', int(np.flatnonzero(blank.to_numpy())[0]), column)
    values = raw.map(_float_or_nan).to_numpy(dtype=float)
    bad = ~np.isfinite(values)
    if bad.any():
        raise _cell_error('unparseable', int(np.flatnonzero(bad)[0]), column)
    return values


def _parse_timestamps(frame, column):
    raw = frame[column].str.strip()
    blank = raw == ''
    if blank.any():
        raise _cell_error('blank', int(np.flatnonzero(blank.to_numpy())[0]), column)

    numeric = raw.map(_float_or_nan).to_numpy(dtype=float)
    if np.all(np.isfinite(numeric)):
        return numeric

    dates = pd.to_datetime(raw, errors='coerce', format='ISO8601')
    if dates.isna().any():
        raise _cell_error('unparseable timestamp', int(np.flatnonzero(dates.isna().to_numpy())[0]), column)
    return dates.to_numpy(dtype='datetime64[ns]')


def _require_columns(frame, columns, path):
    missing = [column for column in columns if column not in frame.columns]
    if missing:
        raise IngestError(f'{path}: missing column(s) {", ".join(missing)}')


def _frequency_hint(timestamps):
    if not np.issubdtype(timestamps.dtype, np.datetime64) or timestamps.size < 3:
        return None
    try:
        return pd.infer_freq(pd.DatetimeIndex(timestamps))
    except (TypeError, ValueError):
        return None


def _sorted_series(key, timestamps, values):
    order = np.argsort(timestamps, kind='stable')
    timestamps = timestamps[order]
    if timestamps.size > 1:
        repeats = np.flatnonzero(timestamps[1:] == timestamps[:-1])
        if repeats.size:
            raise IngestError(f'duplicate timestamp {timestamps[repeats[0]]} for key {key!r}')
    return RawSeries(values=values[order], timestamps=timestamps)


def _read_long(frame, path, keys):
    _require_columns(frame, (KEY_COLUMN, TIMESTAMP_COLUMN, VALUE_COLUMN), path)
    key_cells = frame[KEY_COLUMN].str.strip()
    if (key_cells == '').any():
        raise _cell_error('blank', int(np.flatnonzero((key_cells == '').to_numpy())[0]), KEY_COLUMN)

    timestamps = _parse_timestamps(frame, TIMESTAMP_COLUMN)
    values = _parse_values(frame, VALUE_COLUMN)

    series = {}
    for key in pd.unique(key_cells):
        if keys and key not in keys:
            continue
        mask = (key_cells == key).to_numpy()
        series[key] = _sorted_series(key, timestamps[mask], values[mask])
    return series, timestamps


def _read_wide(frame, path, keys, timestamp_column):
    if frame.columns.size < 2:
        raise IngestError(f'{path}: wide layout needs a timestamp column and at least one value column')
    timestamp_column = timestamp_column or frame.columns[0]
    _require_columns(frame, (timestamp_column,), path)
    if frame.columns.duplicated().any():
        raise IngestError(f'{path}: duplicate column names')

    value_columns = [column for column in frame.columns if column != timestamp_column]
    if keys:
        _require_columns(frame, keys, path)
        value_columns = [column for column in value_columns if column in keys]

    timestamps = _parse_timestamps(frame, timestamp_column)
    series = {
        column: _sorted_series(column, timestamps, _parse_values(frame, column))
        for column in value_columns
    }
    return series, timestamps


def read_csv(path, layout=WIDE, keys=None, timestamp_column=None):
    """
    Load a Dataset from ``path``.

    ``keys`` restricts the series read; ``timestamp_column`` names the wide
    layout's timestamp column (default: the first column).
    """
    if layout not in LAYOUTS:
        raise IngestError(f'unknown layout {layout!r}; expected one of {", ".join(LAYOUTS)}')
    frame = _load_frame(path)
    if frame.empty:
        raise IngestError(f'{path} has a header but no rows')

    keys = list(keys) if keys else None
    if layout == LONG:
        series, timestamps = _read_long(frame, path, keys)
    else:
        series, timestamps = _read_wide(frame, path, keys, timestamp_column)

    if keys:
        missing = [key for key in keys if key not in series]
        if missing:
            raise IngestError(f'{path}: no series for key(s) {", ".join(missing)}')

    first = next(iter(series.values()), None)
    hint = _frequency_hint(first.timestamps) if first is not None else None
    logger.debug(f'read {len(series)} series from {path} ({layout} layout)')
    return Dataset(series_by_key=series, frequency_hint=hint, source=str(path))


def read_column(path, column):
    """Raw values of one column, or None when the file has no such column."""
    frame = _load_frame(path)
    if column not in frame.columns:
        return None
    return _parse_values(frame, column)


def aggregate_sum(data, keys=None):
    """Element-wise sum of the selected series (all keys by default)."""
    keys = list(keys) if keys else data.keys
    selected = [data[key] for key in keys]
    reference = selected[0]

    for key, series in zip(keys[1:], selected[1:]):
        if len(series) != len(reference):
            raise IngestError(
                f'cannot aggregate {keys[0]!r} ({len(reference)} values) with {key!r} ({len(series)} values)'
            )
        if (series.timestamps is None) != (reference.timestamps is None):
            raise IngestError(f'{key!r} and {keys[0]!r} disagree on having timestamps')
        if reference.timestamps is not None:
            diverged = np.flatnonzero(series.timestamps != reference.timestamps)
            if diverged.size:
                i = int(diverged[0])
                raise IngestError(
                    f'timestamps diverge at position {i}: {reference.timestamps[i]} '
                    f'({keys[0]!r}) vs {series.timestamps[i]} ({key!r})'
                )

    total = np.sum(np.vstack([series.values for series in selected]), axis=0)
    return RawSeries(values=total, timestamps=reference.timestamps)


def _format_timestamps(timestamps, length):
    if timestamps is None:
        return [str(i) for i in range(length)]
    if np.issubdtype(timestamps.dtype, np.datetime64):
        days = timestamps.astype('datetime64[D]')
        unit = 'D' if np.all(days == timestamps) else 'auto'
        return [str(ts) for ts in np.datetime_as_string(timestamps, unit=unit)]
    return [FLOAT_FORMAT % ts for ts in timestamps]


def write_csv(data, path, layout=WIDE):
    """Write a Dataset; values keep 17 significant digits."""
    if layout not in LAYOUTS:
        raise IngestError(f'unknown layout {layout!r}; expected one of {", ".join(LAYOUTS)}')

    if layout == LONG:
        rows = []
        for key, series in data.series_by_key.items():
            stamps = _format_timestamps(series.timestamps, len(series))
            rows.extend(zip([key] * len(series), stamps, series.values))
        frame = pd.DataFrame(rows, columns=[KEY_COLUMN, TIMESTAMP_COLUMN, VALUE_COLUMN])
    else:
        reference = next(iter(data.series_by_key.values()))
        for key, series in data.series_by_key.items():
            same = len(series) == len(reference) and (
                (series.timestamps is None and reference.timestamps is None)
                or (series.timestamps is not None and reference.timestamps is not None
                    and np.array_equal(series.timestamps, reference.timestamps))
            )
            if not same:
                raise IngestError(f'series {key!r} does not share the wide layout timestamps')
        frame = pd.DataFrame({TIMESTAMP_COLUMN: _format_timestamps(reference.timestamps, len(reference))})
        for key, series in data.series_by_key.items():
            frame[key] = series.values

    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return Path(path)
