"""
Management command to compare EMODM with the classical detectors on a
labelled trace. Writes comparison.csv, comparison.json and manifest.json.
"""

import logging

from django.core.management.base import BaseCommand

from apps.baselines.comparison import DEFAULT_METHODS, run_comparison, write_comparison
from apps.benchmarks.schedule import read_trace
from apps.detector.scoring import DetectionConfig
from apps.mixture.params import FitConfig
from emodm.runs import RunConfig, command_errors

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = 'Run EMODM and the baseline detectors on one labelled trace'

    def add_arguments(self, parser):
        parser.add_argument('--input', required=True, help='Labelled trace.csv written by simulate')
        parser.add_argument('--threshold', type=float, help='EMODM posterior threshold alpha_f')
        parser.add_argument('--with-lof', action='store_true', help='Also run the local outlier factor detector')
        parser.add_argument('--seed', type=int)
        parser.add_argument('--output-dir')

    def handle(self, *args, **options):
        run = RunConfig.from_options('compare', options)
        methods = DEFAULT_METHODS + (('lof',) if options['with_lof'] else ())
        with command_errors():
            trace = read_trace(options['input'], require_labels=True)
            detection = DetectionConfig.from_settings(
                fit=FitConfig.from_settings(seed=run.seed),
                alpha_f=options['threshold'],
            )
            run.params.update({
                'input': options['input'],
                'methods': ['emodm', *methods],
                'detection': detection.as_dict(),
            })
            logger.info(f'comparing {len(methods) + 1} method(s) on {options["input"]}')

            rows = run_comparison(trace, seed=run.seed, methods=methods, detection=detection)
            run.prepare()
            write_comparison(rows, run.output_dir, config=run.params)
            run.write_manifest()

        for row in rows:
            if row.error:
                self.stdout.write(self.style.WARNING(f'{row.method}: failed ({row.error})'))
            else:
                self.stdout.write(self.style.SUCCESS(
                    f'{row.method}: {row.flagged_count} flagged ({row.abnormal_fraction:.2%}), '
                    f'{row.detected_abnormal} abnormal, {row.wall_time:.3f}s'
                ))
