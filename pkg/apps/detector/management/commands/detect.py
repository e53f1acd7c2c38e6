"""
Management command to run batch abnormal-pattern detection on a CSV file.
Writes report.json, posteriors.csv and manifest.json.
"""

import logging

import pandas as pd
from django.conf import settings
from django.core.management.base import BaseCommand

from apps.benchmarks.schedule import is_trace_file
from apps.detector.evaluation import evaluate_report
from apps.detector.reports import posteriors_frame, report_payload, write_report
from apps.detector.scoring import DetectionConfig, fit_and_flag
from apps.ingest.csv_io import LAYOUTS, WIDE, aggregate_sum, read_column, read_csv
from apps.mixture.params import FitConfig
from apps.preprocess.rates import default_denom_epsilon, log10_transform, relative_change_rate
from emodm.runs import SCHEMA_VERSION, RunConfig, command_errors

logger = logging.getLogger(__name__)

AGGREGATE_KEY = 'aggregate'


class Command(BaseCommand):
    help = 'Fit the two-state mixture to a series and flag abnormal time points'

    def add_arguments(self, parser):
        parser.add_argument('--input', required=True, help='CSV file (long or wide layout, or a trace.csv)')
        parser.add_argument('--layout', choices=LAYOUTS, default=WIDE)
        parser.add_argument('--key', action='append', dest='keys', help='Series to score (repeatable)')
        parser.add_argument('--aggregate', action='store_true', help='Sum the selected series before scoring')
        parser.add_argument('--log10', action='store_true', help='Apply log10 before computing rates')
        parser.add_argument('--value-column', help='Score one column of a wide file, e.g. output')
        parser.add_argument('--timestamp-column', help='Wide layout timestamp column (default: first)')
        parser.add_argument('--labels-column', default='label', help='Ground-truth column used for evaluation')
        parser.add_argument('--threshold', type=float, help='Posterior threshold alpha_f')
        parser.add_argument('--max-iterations', type=int)
        parser.add_argument('--warmup', type=int)
        parser.add_argument('--refit-period', type=int)
        parser.add_argument('--seed', type=int)
        parser.add_argument('--output-dir')

    def handle(self, *args, **options):
        run = RunConfig.from_options('detect', options)
        with command_errors():
            config = DetectionConfig.from_settings(
                fit=FitConfig.from_settings(
                    seed=run.seed,
                    **({'max_iterations': options['max_iterations']} if options['max_iterations'] else {}),
                ),
                alpha_f=options['threshold'],
                warmup_count=options['warmup'],
                refit_period=options['refit_period'],
            )
            run.params.update({
                'input': options['input'],
                'layout': options['layout'],
                'keys': options['keys'],
                'aggregate': options['aggregate'],
                'log10': options['log10'],
                'value_column': options['value_column'],
                'detection': config.as_dict(),
            })

            series = self.load_series(options)
            labels = self.load_labels(options)
            logger.info(f'scoring {len(series)} series from {options["input"]}')

            payloads, frames = {}, []
            for key, raw in series.items():
                payload, frame = self.score(key, raw, labels, config, options)
                payloads[key] = payload
                frames.append(frame.assign(key=key) if len(series) > 1 else frame)

            run.prepare()
            if len(payloads) == 1:
                write_report(run.path('report.json'), next(iter(payloads.values())))
            else:
                write_report(run.path('report.json'), {'schema_version': SCHEMA_VERSION, 'series': payloads})
            frame = pd.concat(frames, ignore_index=True)
            if len(series) > 1:
                frame = frame[['key', *[c for c in frame.columns if c != 'key']]]
            frame.to_csv(run.path('posteriors.csv'), index=False, float_format='%.17g')
            run.write_manifest()

        for key, payload in payloads.items():
            self.stdout.write(self.style.SUCCESS(
                f'{key}: {payload["counts"]["flagged"]} flagged in {len(payload["segments"])} segment(s), '
                f'P_f={payload["failure_probability"]:.2%}'
            ))

    def load_series(self, options):
        value_column, timestamp_column = options['value_column'], options['timestamp_column']
        if (options['layout'] == WIDE and not value_column and not options['keys']
                and is_trace_file(options['input'])):
            logger.info(f'{options["input"]} is a simulation trace; scoring its output column')
            value_column, timestamp_column = 'output', timestamp_column or 'time_s'

        if value_column:
            data = read_csv(options['input'], layout=WIDE, keys=[value_column], timestamp_column=timestamp_column)
        else:
            data = read_csv(
                options['input'], layout=options['layout'], keys=options['keys'],
                timestamp_column=timestamp_column,
            )
        series = dict(data.series_by_key)
        if options['layout'] == WIDE and not options['keys']:
            # the ground-truth column is never scored
            series.pop(options['labels_column'], None)

        if options['aggregate']:
            return {AGGREGATE_KEY: aggregate_sum(data, options['keys'] or list(series))}
        return series

    def load_labels(self, options):
        if options['layout'] != WIDE and not options['value_column']:
            return None
        return read_column(options['input'], options['labels_column'])

    def score(self, key, raw, labels, config, options):
        if options['log10']:
            raw = log10_transform(raw)
        epsilon = default_denom_epsilon(raw, settings.EMODM['DENOM_EPSILON_FACTOR'])
        rates = relative_change_rate(raw, denom_epsilon=epsilon)
        report, fit = fit_and_flag(rates, config)

        evaluation = None
        if labels is not None and len(labels) == len(raw):
            evaluation = evaluate_report(labels.astype(int), report, rates)
        payload = report_payload(report, fit, rates, config, evaluation=evaluation, source=f"{options['input']}#{key}")
        return payload, posteriors_frame(report, rates, raw)

