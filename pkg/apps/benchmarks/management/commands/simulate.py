"""
Management command to generate a labelled synthetic benchmark trace.
Writes trace.csv and manifest.json to the output directory.
"""

import dataclasses
import logging

from django.core.management.base import BaseCommand, CommandError

from apps.benchmarks.llg import AzimuthFault, run_llg_benchmark
from apps.benchmarks.presets import DEFAULT_PRESETS, KINDS, LLG, SALLEN_KEY, get_preset
from apps.benchmarks.sallen_key import INPUT_KINDS, run_benchmark
from apps.benchmarks.schedule import FaultSchedule, parse_segments
from emodm.exceptions import DataError, ScheduleError
from emodm.runs import RunConfig, command_errors

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = 'Simulate the Sallen-Key or LLG benchmark with injected abnormal segments'

    def add_arguments(self, parser):
        parser.add_argument('kind', choices=KINDS)
        parser.add_argument(
            '--preset', help='Named setup (default: reference-single / reference-multi; paper-* names accepted)'
        )
        parser.add_argument('--seed', type=int, help='RNG seed (falls back to EMODM_SEED)')
        parser.add_argument('--output-dir', help='Directory for trace.csv and manifest.json')
        parser.add_argument('--periods', type=int, help='Override the number of periods')
        parser.add_argument('--duration', type=float, help='Override the total simulated time (s)')
        parser.add_argument('--segments', help='Override abnormal segments, e.g. 151-160,211-220')
        parser.add_argument('--input', choices=INPUT_KINDS, help='Sallen-Key input waveform')
        parser.add_argument('--mc-draws', type=int, help='Sallen-Key Monte-Carlo draws per abnormal period')
        parser.add_argument('--rejection-tail', type=float, help='Sallen-Key two-tail rejection probability')
        parser.add_argument('--noise', type=float, help='LLG noise as a fraction of the clean peak-to-peak')
        parser.add_argument('--fault-mean', type=float, help='LLG re-drawn theta mean (rad)')
        parser.add_argument('--fault-std', type=float, help='LLG re-drawn theta std (rad)')

    def handle(self, *args, **options):
        kind = options['kind']
        try:
            preset = get_preset(kind, options['preset'])
            schedule = self.build_schedule(preset.schedule, options)
        except ScheduleError as exc:
            raise CommandError(str(exc), returncode=2) from exc

        run = RunConfig.from_options('simulate', options)
        with command_errors():
            if kind == SALLEN_KEY:
                trace, params = self.run_sallen_key(preset, schedule, options, run.seed)
            else:
                trace, params = self.run_llg(preset, schedule, options, run.seed)

            run.params.update(params)
            run.prepare()
            trace.to_csv(run.path('trace.csv'))
            run.write_manifest()

        abnormal = int((trace.labels == 2).sum())
        self.stdout.write(self.style.SUCCESS(
            f'{kind}: {len(trace.outputs)} periods, {abnormal} abnormal -> {run.path("trace.csv")}'
        ))

    def build_schedule(self, base, options):
        periods = options['periods'] or base.total_periods
        duration = options['duration'] or (
            base.total_time if periods == base.total_periods else base.period_duration * periods
        )
        segments = base.abnormal_segments if options['segments'] is None else parse_segments(options['segments'])
        return FaultSchedule.from_duration(periods, duration, segments)

    def run_sallen_key(self, preset, schedule, options, seed):
        drift = preset.drift
        if options['rejection_tail'] is not None:
            try:
                drift = dataclasses.replace(drift, rejection_tail=options['rejection_tail'])
            except DataError as exc:
                raise CommandError(str(exc), returncode=2) from exc
        input_kind = options['input'] or preset.input_kind
        mc_draws = options['mc_draws'] or preset.mc_draws

        trace = run_benchmark(schedule, preset.nominal, drift, input_kind, mc_draws, seed)
        params = {
            'kind': SALLEN_KEY,
            'preset': options['preset'] or DEFAULT_PRESETS[SALLEN_KEY],
            'schedule': schedule.as_dict(),
            'input_kind': input_kind,
            'nominal': preset.nominal.as_dict(),
            'drift': drift.as_dict(),
            'mc_draws': mc_draws,
        }
        return trace, params

    def run_llg(self, preset, schedule, options, seed):
        fault = preset.fault
        if options['fault_mean'] is not None or options['fault_std'] is not None:
            fault = AzimuthFault(
                fault.mean if options['fault_mean'] is None else options['fault_mean'],
                fault.std if options['fault_std'] is None else options['fault_std'],
            )
        noise = preset.noise_fraction if options['noise'] is None else options['noise']

        trace = run_llg_benchmark(schedule, preset.params, fault, noise, seed)
        params = {
            'kind': LLG,
            'preset': options['preset'] or DEFAULT_PRESETS[LLG],
            'schedule': schedule.as_dict(),
            'params': preset.params.as_dict(),
            'azimuth_fault': fault.as_dict(),
            'noise_fraction': noise,
        }
        return trace, params
