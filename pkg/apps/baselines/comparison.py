"""
Comparison harness: EMODM and the classical detectors on one labelled trace.
"""

import logging
import time
from dataclasses import asdict, dataclass
from typing import Dict, Optional

import numpy as np
import pandas as pd
from django.conf import settings

from apps.detector.evaluation import evaluate_flags
from apps.detector.scoring import DetectionConfig, fit_and_flag
from apps.preprocess.rates import default_denom_epsilon, relative_change_rate
from emodm.exceptions import DataError, EmodmError
from emodm.runs import SCHEMA_VERSION, write_json

from .detectors import (
    BaselineResult,
    iforest_detector,
    kde_detector,
    kmeans_detector,
    knn_detector,
    lof_detector,
    lrm_detector,
)

logger = logging.getLogger(__name__)

EMODM = 'emodm'
DETECTORS = {
    'lrm': lrm_detector,
    'kde': kde_detector,
    'knn': knn_detector,
    'kmeans': kmeans_detector,
    'iforest': iforest_detector,
    'lof': lof_detector,
}
DEFAULT_METHODS = ('lrm', 'kde', 'knn', 'kmeans', 'iforest')
SEEDED = ('kmeans', 'iforest')

# errors a detector may raise besides our own
LIBRARY_ERRORS = (EmodmError, ValueError, ArithmeticError, np.linalg.LinAlgError)


@dataclass
class ComparisonRow:
    method: str
    flagged_count: Optional[int] = None
    abnormal_fraction: Optional[float] = None
    failure_probability: Optional[float] = None
    wall_time: Optional[float] = None
    true_count: Optional[int] = None
    detected_abnormal: Optional[int] = None
    false_flags: Optional[int] = None
    false_flag_rate: Optional[float] = None
    segment_recall: Optional[float] = None
    error: Optional[str] = None

    def as_dict(self):
        return asdict(self)


def _row(result, labels, rates, failure_probability=None):
    evaluation = evaluate_flags(labels, result.flagged, rates.origin_index, rates.valid)
    return ComparisonRow(
        method=result.method_name,
        flagged_count=result.flagged_count,
        abnormal_fraction=result.abnormal_fraction,
        failure_probability=failure_probability,
        wall_time=result.wall_time,
        true_count=evaluation.true_count,
        detected_abnormal=evaluation.detected_abnormal,
        false_flags=evaluation.false_flags,
        false_flag_rate=evaluation.false_flag_rate,
        segment_recall=evaluation.segment_recall,
    )


def _run_emodm(rates, detection):
    started = time.perf_counter()
    report, _ = fit_and_flag(rates, detection)
    result = BaselineResult(
        method_name=EMODM,
        flagged=report.flagged,
        abnormal_fraction=report.flagged_count / rates.valid_count,
        wall_time=time.perf_counter() - started,
    )
    return result, report.failure_probability


def run_comparison(trace, configs: Optional[Dict[str, dict]] = None, seed=0, methods=DEFAULT_METHODS,
                   detection=None):
    """
    Score one trace with EMODM and each method in ``methods``.

    ``configs`` maps a method name to keyword overrides. A failing method
    yields a row carrying its error; the other rows are unaffected.
    """
    configs = configs or {}
    unknown = [name for name in methods if name not in DETECTORS]
    if unknown:
        raise DataError(f'unknown method(s) {", ".join(unknown)}; available: {", ".join(DETECTORS)}')

    raw = trace.outputs
    rates = relative_change_rate(raw, denom_epsilon=default_denom_epsilon(raw, settings.EMODM['DENOM_EPSILON_FACTOR']))
    detection = detection or DetectionConfig()

    rows = []
    try:
        result, failure_probability = _run_emodm(rates, detection)
        rows.append(_row(result, trace.labels, rates, failure_probability))
    except LIBRARY_ERRORS as exc:
        logger.warning(f'{EMODM} failed: {exc}')
        rows.append(ComparisonRow(method=EMODM, error=str(exc)))

    for name in methods:
        options = dict(configs.get(name, {}))
        if name in SEEDED:
            options.setdefault('seed', seed)
        try:
            result = DETECTORS[name](rates, **options)
        except LIBRARY_ERRORS as exc:
            logger.warning(f'{name} failed: {exc}')
            rows.append(ComparisonRow(method=name, error=str(exc)))
            continue
        rows.append(_row(result, trace.labels, rates))
    return rows


def comparison_frame(rows):
    return pd.DataFrame([row.as_dict() for row in rows], columns=list(ComparisonRow.__dataclass_fields__))


def write_comparison(rows, output_dir, config=None):
    """comparison.csv and comparison.json under ``output_dir``."""
    csv_path = output_dir / 'comparison.csv'
    comparison_frame(rows).to_csv(csv_path, index=False, float_format='%.17g')
    json_path = write_json(output_dir / 'comparison.json', {
        'schema_version': SCHEMA_VERSION,
        'rows': [row.as_dict() for row in rows],
        'config': config or {},
    })
    return csv_path, json_path
