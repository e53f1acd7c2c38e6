"""
Serialisation of detection results: report.json and posteriors.csv.
"""

import numpy as np
import pandas as pd

from emodm.runs import SCHEMA_VERSION, write_json


def report_payload(report, fit, rates, config, evaluation=None, source=None):
    """JSON-ready dict for one scored series."""
    payload = {
        'schema_version': SCHEMA_VERSION,
        'source': source,
        'params': report.params.as_dict(),
        'failure_probability': report.failure_probability,
        'alpha_f': report.alpha_f,
        'flagged': [int(i) for i in report.flagged],
        'flagged_raw_index': [int(rates.origin_index[i]) for i in report.flagged],
        'segments': [
            {
                'start': int(start),
                'end': int(end),
                'raw_start': int(rates.origin_index[start]),
                'raw_end': int(rates.origin_index[end]),
            }
            for start, end in report.segments
        ],
        'counts': {
            'rates': len(rates),
            'valid': rates.valid_count,
            'flagged': report.flagged_count,
        },
        'convergence': {
            'converged': fit.converged,
            'iterations_used': fit.iterations_used,
            'final_loglik': fit.final_loglik,
        },
        'config': config.as_dict(),
    }
    if evaluation is not None:
        payload['evaluation'] = evaluation.as_dict()
    return payload


def write_report(path, payload):
    return write_json(path, payload)


def posteriors_frame(report, rates, raw):
    """One row per rate: index, timestamp, rate, posterior, flagged."""
    labels = raw.timestamp_labels()
    rate_values = np.where(rates.valid, rates.rates, np.nan)
    return pd.DataFrame({
        'index': rates.origin_index,
        'timestamp': [labels[i] for i in rates.origin_index],
        'rate': rate_values,
        'posterior': report.posteriors,
        'flagged': report.flag_mask(),
    })


def write_posteriors(path, report, rates, raw):
    posteriors_frame(report, rates, raw).to_csv(path, index=False, float_format='%.17g')
    return path
