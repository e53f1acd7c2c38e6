"""
Ground-truth evaluation of a flag set against pattern labels.

Labels are aligned to raw indices (1 normal, 2 abnormal); a flagged rate
counts at the raw index it labels. A true segment is detected when at least
one flagged point overlaps it.
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from emodm.exceptions import DataError

NORMAL = 1
ABNORMAL = 2


@dataclass(frozen=True)
class SegmentHit:
    start: int
    end: int
    flagged_count: int

    @property
    def length(self):
        return self.end - self.start + 1

    @property
    def ratio(self):
        return self.flagged_count / self.length

    @property
    def detected(self):
        return self.flagged_count > 0

    def as_dict(self):
        return {
            'start': self.start,
            'end': self.end,
            'flagged_count': self.flagged_count,
            'segment_ratio': self.ratio,
            'detected': self.detected,
        }


@dataclass(frozen=True)
class SegmentEvaluation:
    true_count: int
    flagged_count: int
    detected_abnormal: int
    false_flags: int
    normal_count: int
    segments: List[SegmentHit]

    @property
    def segment_recall(self) -> Optional[float]:
        """None (not applicable) when the labels hold no abnormal segment."""
        if not self.segments:
            return None
        return sum(hit.detected for hit in self.segments) / len(self.segments)

    @property
    def false_flag_rate(self):
        return self.false_flags / self.normal_count if self.normal_count else 0.0

    def as_dict(self):
        return {
            'true_count': self.true_count,
            'flagged_count': self.flagged_count,
            'detected_abnormal': self.detected_abnormal,
            'false_flags': self.false_flags,
            'false_flag_rate': self.false_flag_rate,
            'segment_recall': self.segment_recall,
            'segments': [hit.as_dict() for hit in self.segments],
        }


def label_segments(labels) -> List[Tuple[int, int]]:
    """Maximal runs of abnormal labels as inclusive raw-index pairs."""
    abnormal = np.asarray(labels) == ABNORMAL
    edges = np.diff(np.concatenate(([0], abnormal.astype(int), [0])))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    return [(int(s), int(e)) for s, e in zip(starts, ends)]


def evaluate_flags(labels, flagged, origin_index, valid=None):
    """
    Compare flagged rate indices with raw-index labels.

    Only raw indices that carry a valid rate enter the normal/abnormal
    counts; the first raw value never has one.
    """
    labels = np.asarray(labels)
    origin_index = np.asarray(origin_index, dtype=int)
    if np.any(~np.isin(labels, (NORMAL, ABNORMAL))):
        raise DataError('labels must be 1 (normal) or 2 (abnormal)')
    if origin_index.size and origin_index.max() >= labels.size:
        raise DataError(f'{labels.size} label(s) do not cover raw index {origin_index.max()}')

    scored = np.zeros(labels.size, dtype=bool)
    scored[origin_index if valid is None else origin_index[np.asarray(valid, dtype=bool)]] = True
    hit = np.zeros(labels.size, dtype=bool)
    hit[origin_index[list(flagged)]] = True

    abnormal = labels == ABNORMAL
    segments = [
        SegmentHit(start, end, int(hit[start:end + 1].sum()))
        for start, end in label_segments(labels)
    ]
    return SegmentEvaluation(
        true_count=int((abnormal & scored).sum()),
        flagged_count=int(hit.sum()),
        detected_abnormal=int((hit & abnormal).sum()),
        false_flags=int((hit & ~abnormal).sum()),
        normal_count=int((~abnormal & scored).sum()),
        segments=segments,
    )


def evaluate_report(labels, report, rates):
    return evaluate_flags(labels, report.flagged, rates.origin_index, rates.valid)
