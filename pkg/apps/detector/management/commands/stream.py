"""
Management command to run the online detector over a value stream.
Reads one value per line from --input or stdin and prints one JSON line per
alarm, followed by a summary line.
"""

import json
import logging
import math
import sys

from django.conf import settings
from django.core.management.base import BaseCommand

from apps.detector.online import OnlineDetectorState, online_step
from apps.detector.scoring import DetectionConfig
from apps.detector.services import AlarmNotifier
from apps.mixture.params import FitConfig
from emodm.exceptions import IngestError
from emodm.runs import ReportEncoder, RunConfig, command_errors

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = 'Run online abnormal-pattern detection on values read one per line'
    stealth_options = ('stdin',)

    def add_arguments(self, parser):
        parser.add_argument('--input', help='Text/CSV file with one value per line (default: stdin)')
        parser.add_argument('--threshold', type=float, help='Posterior threshold alpha_f')
        parser.add_argument('--warmup', type=int, help='Valid rates buffered before scoring starts')
        parser.add_argument('--refit-period', type=int, help='Samples between full refits')
        parser.add_argument('--seed', type=int)
        parser.add_argument('--output-dir')
        parser.add_argument('--notify', action='store_true', help='Post alarms to the configured Telegram chat')

    def handle(self, *args, **options):
        run = RunConfig.from_options('stream', options)
        with command_errors():
            config = DetectionConfig.from_settings(
                fit=FitConfig.from_settings(seed=run.seed),
                alpha_f=options['threshold'],
                warmup_count=options['warmup'],
                refit_period=options['refit_period'],
            )
            run.params.update({
                'input': options['input'] or '-',
                'notify': options['notify'],
                'detection': config.as_dict(),
            })
            notifier = AlarmNotifier() if options['notify'] else None
            if notifier is not None and not notifier.is_enabled():
                logger.warning('--notify given but Telegram credentials are not configured')

            state = OnlineDetectorState(epsilon_factor=settings.EMODM['DENOM_EPSILON_FACTOR'])
            alarms, skipped = 0, 0
            for line_number, line in enumerate(self.open_lines(options), start=1):
                value = self.parse_line(line)
                if value is None:
                    if line.strip():
                        skipped += 1
                        logger.warning(f'line {line_number}: cannot parse {line.strip()!r}; skipped')
                    continue

                state, alarm = online_step(state, value, config)
                if alarm is None:
                    continue
                alarms += 1
                self.emit(alarm.as_dict())
                if notifier is not None:
                    notifier.notify_alarm(alarm, source=options['input'])

            summary = {
                'summary': True,
                'consumed': state.seen,
                'alarms': alarms,
                'skipped': skipped,
                'failure_probability': state.failure_probability,
                'status': state.status,
            }
            self.emit(summary)
            run.params['summary'] = summary
            run.prepare()
            run.write_manifest()

    def open_lines(self, options):
        if options['input']:
            try:
                with open(options['input'], encoding='utf-8') as handle:
                    yield from handle
            except OSError as exc:
                raise IngestError(f'cannot read {options["input"]}: {exc}') from exc
        else:
            yield from options.get('stdin') or sys.stdin

    @staticmethod
    def parse_line(line):
        # a CSV row contributes its last cell
        cell = line.strip().split(',')[-1].strip()
        try:
            value = float(cell)
        except ValueError:
            return None
        return value if math.isfinite(value) else None

    def emit(self, payload):
        self.stdout.write(json.dumps(payload, cls=ReportEncoder, sort_keys=True))
