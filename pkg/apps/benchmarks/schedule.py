"""
Fault schedules and labelled simulation traces.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np
import pandas as pd

from apps.detector.evaluation import ABNORMAL, NORMAL, label_segments
from apps.preprocess.series import RawSeries
from emodm.exceptions import IngestError, MissingLabels, ScheduleError

TRACE_COLUMNS = ('period_index', 'time_s', 'output', 'label')


@dataclass(frozen=True)
class FaultSchedule:
    """
    Pattern process S_t over ``total_periods`` periods.

    Segments are 1-based inclusive period ranges; the first period is
    always normal.
    """

    total_periods: int
    period_duration: float
    abnormal_segments: Tuple[Tuple[int, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'abnormal_segments', tuple(tuple(int(v) for v in s) for s in self.abnormal_segments))
        if self.total_periods < 1:
            raise ScheduleError(f'total_periods must be positive: {self.total_periods}')
        if not self.period_duration > 0:
            raise ScheduleError(f'period_duration must be positive: {self.period_duration}')

        previous_end = 1
        for start, end in self.abnormal_segments:
            if start > end:
                raise ScheduleError(f'segment {start}-{end} ends before it starts')
            if start <= previous_end:
                if start == 1:
                    raise ScheduleError('the first period must be normal')
                raise ScheduleError(f'segment {start}-{end} overlaps or precedes the previous one')
            if end > self.total_periods:
                raise ScheduleError(f'segment {start}-{end} exceeds {self.total_periods} periods')
            previous_end = end

    @classmethod
    def from_duration(cls, total_periods, total_time, abnormal_segments=()):
        return cls(total_periods, total_time / total_periods, tuple(abnormal_segments))

    @property
    def total_time(self):
        return self.total_periods * self.period_duration

    def labels(self):
        """Pattern per period (index 0 is period 1)."""
        labels = np.full(self.total_periods, NORMAL, dtype=int)
        for start, end in self.abnormal_segments:
            labels[start - 1:end] = ABNORMAL
        return labels

    def period_end_times(self):
        return self.period_duration * np.arange(1, self.total_periods + 1)

    @property
    def abnormal_fraction(self):
        return float(np.mean(self.labels() == ABNORMAL))

    def as_dict(self):
        return {
            'total_periods': self.total_periods,
            'period_duration': self.period_duration,
            'abnormal_segments': [list(s) for s in self.abnormal_segments],
        }


@dataclass(frozen=True, eq=False)
class SimTrace:
    """One output value per period with the matching pattern labels."""

    outputs: RawSeries
    labels: np.ndarray
    input_description: Dict = field(default_factory=dict)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=int).reshape(-1)
        if labels.size != len(self.outputs):
            raise ScheduleError(f'{labels.size} label(s) for {len(self.outputs)} output(s)')
        object.__setattr__(self, 'labels', labels)

    @classmethod
    def from_schedule(cls, schedule, outputs, input_description=None):
        labels = schedule.labels()
        series = RawSeries(values=outputs, timestamps=schedule.period_end_times())
        return cls(outputs=series, labels=labels, input_description=input_description or {})

    def frame(self):
        return pd.DataFrame({
            'period_index': np.arange(1, len(self.outputs) + 1),
            'time_s': self.outputs.timestamps,
            'output': self.outputs.values,
            'label': self.labels,
        })

    def to_csv(self, path):
        self.frame().to_csv(path, index=False, float_format='%.17g')
        return path


def read_trace(path, require_labels=True):
    """Load a SimTrace CSV written by ``SimTrace.to_csv``."""
    try:
        frame = pd.read_csv(path, float_precision='round_trip')
    except FileNotFoundError:
        raise IngestError(f'input file not found: {path}') from None
    except (OSError, ValueError) as exc:
        raise IngestError(f'cannot read {path}: {exc}') from exc

    missing = [c for c in ('time_s', 'output') if c not in frame.columns]
    if missing:
        raise IngestError(f'{path}: missing column(s) {", ".join(missing)}')
    if 'label' not in frame.columns:
        if require_labels:
            raise MissingLabels(path)
        labels = np.full(len(frame), NORMAL)
    else:
        if frame['label'].isna().any():
            raise IngestError(f'{path}: blank label cells')
        labels = frame['label'].to_numpy()
    if frame[['time_s', 'output']].isna().any().any():
        raise IngestError(f'{path}: blank cells in time_s/output')

    outputs = RawSeries(values=frame['output'].to_numpy(dtype=float), timestamps=frame['time_s'].to_numpy(dtype=float))
    return SimTrace(outputs=outputs, labels=labels, input_description={'source': str(path)})


def is_trace_file(path):
    """True when the CSV header starts with the SimTrace columns."""
    try:
        header = pd.read_csv(path, nrows=0).columns
    except (OSError, ValueError):
        return False
    return tuple(header[:3]) == TRACE_COLUMNS[:3]


def segments_of(labels) -> List[Tuple[int, int]]:
    """1-based inclusive abnormal segments of a label vector."""
    return [(start + 1, end + 1) for start, end in label_segments(labels)]


def parse_segments(text):
    """'151-160,211-220' -> ((151, 160), (211, 220)); an empty string means none."""
    segments = []
    for part in filter(None, (p.strip() for p in (text or '').split(','))):
        try:
            start, end = (int(v) for v in part.split('-'))
        except ValueError:
            raise ScheduleError(f'bad segment {part!r}; expected START-END') from None
        segments.append((start, end))
    return tuple(segments)
