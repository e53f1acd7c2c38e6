import io
import json
import math
import tempfile
from pathlib import Path
from unittest import mock

import numpy as np
import pandas as pd
import requests
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, override_settings

from apps.mixture.params import MixtureParams
from apps.preprocess.rates import relative_change_rate
from apps.preprocess.series import RateSeries, RawSeries
from emodm.exceptions import DataError, InvalidSample

from .evaluation import evaluate_flags, label_segments
from .online import (
    STATUS_INSUFFICIENT,
    STATUS_SCORED,
    Alarm,
    OnlineDetectorState,
    online_step,
    run_online,
)
from .reports import posteriors_frame, report_payload
from .scoring import (
    DetectionConfig,
    canonicalize_components,
    failure_probability,
    fit_and_flag,
    flag_and_segment,
    flag_posteriors,
    merge_segments,
    posterior_abnormal,
    posterior_matrix,
)
from .services import AlarmNotifier, get_alarm_message


def step_series(seed, n=120, jump_at=55, jump=20.0):
    """Level 100 with unit noise; a +jump level shift from ``jump_at`` on."""
    rng = np.random.default_rng(seed)
    values = 100.0 + rng.normal(0.0, 1.0, n)
    values[jump_at:] += jump
    return values


def spiky_series(seed, n=300):
    rng = np.random.default_rng(seed)
    values = 100.0 + rng.normal(0.0, 1.0, n)
    values[[80, 160, 240]] += 30.0
    return values


class PosteriorTests(SimpleTestCase):

    def test_zero_abnormal_weight(self):
        params = MixtureParams.from_values(0.0, 1.0, 5.0, 1.0, 0.0)
        for y in (-3.0, 0.0, 5.0, 40.0):
            self.assertEqual(posterior_abnormal(y, params), 0.0)

    def test_identical_components_return_prior(self):
        params = MixtureParams.from_values(1.0, 2.0, 1.0, 2.0, 0.27)
        np.testing.assert_allclose(posterior_abnormal(np.linspace(-10, 10, 21), params), 0.27, rtol=1e-13)

    def test_far_sample_matches_density_ratio(self):
        params = MixtureParams.from_values(0.0, 1.0, 5.0, 1.0, 0.05)
        # f1/f2 at y=10 is exp(-50 + 12.5)
        expected = 1.0 / (1.0 + 19.0 * math.exp(-37.5))
        self.assertAlmostEqual(posterior_abnormal(10.0, params), expected, places=15)
        self.assertLess(1.0 - posterior_abnormal(10.0, params), 1e-14)

    def test_scalar_in_float_out(self):
        params = MixtureParams.from_values(0.0, 1.0, 5.0, 1.0, 0.5)
        self.assertIsInstance(posterior_abnormal(2.5, params), float)
        self.assertAlmostEqual(posterior_abnormal(2.5, params), 0.5, places=15)

    def test_complementarity_and_threshold_consistency(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            params = MixtureParams.from_values(
                rng.normal(0, 1), rng.uniform(0.1, 3), rng.normal(0, 5), rng.uniform(0.1, 3), rng.uniform(0, 1),
            )
            y = rng.normal(0, 10, 50)
            matrix = posterior_matrix(y, params)
            np.testing.assert_allclose(matrix.sum(axis=1), 1.0, rtol=0, atol=1e-12)

            alpha = rng.uniform(0.5, 0.999)
            valid = rng.random(50) < 0.9
            flagged = flag_posteriors(matrix[:, 1], valid, alpha)
            expected = tuple(int(i) for i in range(50) if valid[i] and matrix[i, 1] >= alpha)
            self.assertEqual(flagged, expected)

    def test_non_finite_rejected(self):
        params = MixtureParams.from_values(0.0, 1.0, 5.0, 1.0, 0.5)
        with self.assertRaises(InvalidSample):
            posterior_abnormal(float('inf'), params)


class FlaggingTests(SimpleTestCase):

    def test_direct_thresholding(self):
        flagged = flag_posteriors([0.1, 0.99, 0.98, 0.2], [True] * 4, 0.95)
        self.assertEqual(flagged, (1, 2))
        self.assertEqual(merge_segments(flagged), [(1, 2)])

    def test_invalid_entries_never_flagged(self):
        self.assertEqual(flag_posteriors([0.99, 0.99, 0.99], [True, False, True], 0.95), (0, 2))

    def test_merge_segments(self):
        self.assertEqual(merge_segments([7, 1, 2, 3, 9, 10]), [(1, 3), (7, 7), (9, 10)])
        self.assertEqual(merge_segments([]), [])

    def test_raising_alpha_never_adds_flags(self):
        rng = np.random.default_rng(3)
        posteriors = rng.random(500)
        valid = np.ones(500, dtype=bool)
        previous = set(flag_posteriors(posteriors, valid, 0.5))
        for alpha in np.linspace(0.5, 0.999, 40):
            current = set(flag_posteriors(posteriors, valid, alpha))
            self.assertLessEqual(current, previous)
            previous = current

    def test_report_without_flags_still_carries_failure_probability(self):
        params = MixtureParams.from_values(0.0, 1.0, 50.0, 1.0, 0.04)
        rates = RateSeries.from_samples([0.1, -0.2, 0.3, 0.0])
        report = flag_and_segment(rates, params, DetectionConfig())
        self.assertEqual(report.flagged, ())
        self.assertEqual(report.segments, [])
        self.assertEqual(report.failure_probability, 0.04)

    def test_invalid_rates_hold_nan_posteriors(self):
        params = MixtureParams.from_values(0.0, 1.0, 5.0, 1.0, 0.1)
        rates = RateSeries(rates=[0.0, 9.0, 6.0], valid=[True, False, True])
        report = flag_and_segment(rates, params, DetectionConfig())
        self.assertTrue(math.isnan(report.posteriors[1]))
        self.assertEqual(report.flagged, (2,))


class FailureProbabilityTests(SimpleTestCase):

    def test_returns_abnormal_weight_verbatim(self):
        for eta in (0.0, 0.0209, 0.0466):
            self.assertEqual(failure_probability(MixtureParams.from_values(0, 1, 3, 1, eta)), eta)

    def test_fit_reports_the_fitted_weight(self):
        rates = relative_change_rate(RawSeries(spiky_series(0)))
        report, fit = fit_and_flag(rates, DetectionConfig())
        self.assertEqual(report.failure_probability, report.params.abnormal_weight)
        self.assertIn(fit.params.abnormal_weight, (report.failure_probability, 1.0 - report.failure_probability))


class CanonicalizeTests(SimpleTestCase):

    def test_swaps_heavier_abnormal_slot(self):
        params = MixtureParams.from_values(0.0, 1.0, 3.0, 2.0, 0.7)
        canonical = canonicalize_components(params)
        self.assertAlmostEqual(canonical.abnormal_weight, 0.3, places=15)
        self.assertEqual(canonical.abnormal.mean, 0.0)

    def test_idempotent(self):
        params = MixtureParams.from_values(0.0, 1.0, 3.0, 2.0, 0.2)
        self.assertEqual(canonicalize_components(params), params)
        once = canonicalize_components(params.swapped())
        self.assertEqual(canonicalize_components(once), once)

    def test_even_split_goes_to_larger_spread(self):
        params = MixtureParams.from_values(0.0, 4.0, 1.0, 1.0, 0.5)
        canonical = canonicalize_components(params)
        self.assertEqual(canonical.abnormal.std_dev, 4.0)
        self.assertEqual(canonicalize_components(params.swapped()).abnormal.std_dev, 4.0)

    def test_component_order_does_not_change_flags(self):
        rates = RateSeries.from_samples(np.random.default_rng(5).normal(0, 1, 200))
        params = MixtureParams.from_values(0.0, 1.0, 2.0, 3.0, 0.1)
        config = DetectionConfig(alpha_f=0.6)
        first = flag_and_segment(rates, canonicalize_components(params), config)
        second = flag_and_segment(rates, canonicalize_components(params.swapped()), config)
        self.assertEqual(first.flagged, second.flagged)


class DetectionConfigTests(SimpleTestCase):

    def test_alpha_bounds(self):
        for alpha in (0.0, 1.0, 1.5):
            with self.assertRaises(DataError):
                DetectionConfig(alpha_f=alpha)

    @override_settings(EMODM={
        'ALPHA_F': 0.9, 'WARMUP_COUNT': 20, 'REFIT_PERIOD': 5, 'MAX_ITERATIONS': 50,
        'REL_LOGLIK_TOLERANCE': 1e-6, 'VARIANCE_FLOOR_FACTOR': 1e-6, 'DENOM_EPSILON_FACTOR': 1e-12,
        'SEED': 0, 'OUTPUT_DIR': 'runs',
    })
    def test_from_settings_with_overrides(self):
        config = DetectionConfig.from_settings(alpha_f=0.99, warmup_count=None)
        self.assertEqual(config.alpha_f, 0.99)
        self.assertEqual(config.warmup_count, 20)
        self.assertEqual(config.refit_period, 5)
        self.assertEqual(config.fit.max_iterations, 50)


class OnlineTests(SimpleTestCase):

    def test_warmup_emits_nothing(self):
        config = DetectionConfig(warmup_count=50)
        state = OnlineDetectorState()
        for value in step_series(0)[:50]:
            state, alarm = online_step(state, value, config)
            self.assertIsNone(alarm)
            self.assertEqual(state.status, STATUS_INSUFFICIENT)
        self.assertIsNone(state.last_params)

    def test_scores_once_warm(self):
        config = DetectionConfig(warmup_count=50)
        state, _ = run_online(step_series(0, n=60, jump_at=60), config, OnlineDetectorState())
        self.assertEqual(state.status, STATUS_SCORED)
        self.assertIsNotNone(state.last_params)
        self.assertEqual(state.seen, 60)

    def test_step_jump_raises_alarm_at_its_index(self):
        config = DetectionConfig(warmup_count=50, refit_period=1)
        for seed in range(10):
            _, alarms = run_online(step_series(seed), config, OnlineDetectorState())
            self.assertIn(55, [alarm.index for alarm in alarms], f'seed {seed}')

    def test_stationary_false_alarm_rate(self):
        config = DetectionConfig(warmup_count=50, refit_period=20)
        for seed in range(3):
            values = 100.0 + np.random.default_rng(100 + seed).normal(0.0, 1.0, 250)
            _, alarms = run_online(values, config, OnlineDetectorState())
            self.assertLessEqual(len(alarms) / 250, 0.05, f'seed {seed}')

    def test_online_matches_batch_on_prefix(self):
        config = DetectionConfig(warmup_count=50, refit_period=1)
        values = spiky_series(4, n=120)
        state, _ = run_online(values, config, OnlineDetectorState())

        rates = relative_change_rate(RawSeries(values))
        report, _ = fit_and_flag(rates, config)
        self.assertAlmostEqual(state.last_posterior, report.posteriors[-1], delta=1e-9)
        self.assertEqual(state.failure_probability, report.failure_probability)

    def test_state_is_not_mutated(self):
        config = DetectionConfig(warmup_count=10)
        state = OnlineDetectorState()
        after, _ = online_step(state, 1.0, config)
        self.assertEqual(state.seen, 0)
        self.assertEqual(after.seen, 1)

    def test_non_finite_value_rejected(self):
        with self.assertRaises(InvalidSample):
            online_step(OnlineDetectorState(), float('nan'), DetectionConfig())


class EvaluationTests(SimpleTestCase):

    def test_label_segments(self):
        self.assertEqual(label_segments([1, 2, 2, 1, 2]), [(1, 2), (4, 4)])
        self.assertEqual(label_segments([1, 1]), [])

    def test_counts(self):
        labels = [1, 1, 2, 2, 1, 2]
        evaluation = evaluate_flags(labels, flagged=(1, 4), origin_index=np.arange(1, 6))
        self.assertEqual(evaluation.true_count, 3)
        self.assertEqual(evaluation.detected_abnormal, 1)
        self.assertEqual(evaluation.false_flags, 1)
        self.assertEqual(evaluation.normal_count, 2)
        self.assertEqual(evaluation.segment_recall, 0.5)
        self.assertEqual(evaluation.false_flag_rate, 0.5)
        self.assertEqual(evaluation.segments[0].ratio, 0.5)

    def test_recall_not_applicable_without_segments(self):
        evaluation = evaluate_flags([1, 1, 1], flagged=(), origin_index=[1, 2])
        self.assertIsNone(evaluation.segment_recall)
        self.assertEqual(evaluation.as_dict()['segment_recall'], None)


class ReportTests(SimpleTestCase):

    def test_payload_and_frame(self):
        raw = RawSeries(spiky_series(1, n=200), timestamps=np.arange(200) * 0.5)
        rates = relative_change_rate(raw)
        config = DetectionConfig()
        report, fit = fit_and_flag(rates, config)

        payload = report_payload(report, fit, rates, config, source='unit')
        self.assertEqual(payload['schema_version'], 1)
        self.assertEqual(payload['failure_probability'], report.params.abnormal_weight)
        self.assertEqual(payload['flagged_raw_index'], [i + 1 for i in report.flagged])
        self.assertEqual(payload['counts']['rates'], 199)

        frame = posteriors_frame(report, rates, raw)
        self.assertEqual(list(frame.columns), ['index', 'timestamp', 'rate', 'posterior', 'flagged'])
        self.assertEqual(len(frame), 199)
        self.assertEqual(frame['timestamp'].iloc[0], 0.5)


class AlarmNotifierTests(SimpleTestCase):

    alarm = Alarm(index=55, value=120.5, rate=0.2, posterior=0.999)

    def test_disabled_without_credentials(self):
        notifier = AlarmNotifier(token='', chat_id='')
        with mock.patch('apps.detector.services.requests.post') as post:
            self.assertIsNone(notifier.notify_alarm(self.alarm))
        post.assert_not_called()

    def test_posts_message(self):
        notifier = AlarmNotifier(token='abc', chat_id='42')
        with mock.patch('apps.detector.services.requests.post') as post:
            post.return_value.json.return_value = {'ok': True, 'result': {'message_id': 1}}
            self.assertEqual(notifier.notify_alarm(self.alarm, source='plant'), {'message_id': 1})
        url = post.call_args.args[0]
        self.assertTrue(url.endswith('/botabc/sendMessage'))
        self.assertEqual(post.call_args.kwargs['json']['chat_id'], '42')

    def test_transport_failure_is_swallowed(self):
        notifier = AlarmNotifier(token='abc', chat_id='42')
        with mock.patch('apps.detector.services.requests.post', side_effect=requests.ConnectionError('down')):
            with self.assertLogs('apps.detector.services', level='ERROR'):
                self.assertIsNone(notifier.notify_alarm(self.alarm))

    def test_rejected_reply_is_logged(self):
        notifier = AlarmNotifier(token='abc', chat_id='42')
        with mock.patch('apps.detector.services.requests.post') as post:
            post.return_value.json.return_value = {'ok': False, 'description': 'chat not found'}
            with self.assertLogs('apps.detector.services', level='ERROR') as logs:
                self.assertIsNone(notifier.notify_alarm(self.alarm))
        self.assertIn('chat not found', logs.output[0])

    def test_message_text(self):
        text = get_alarm_message(self.alarm, source='plant')
        self.assertIn('Index: 55', text)
        self.assertIn('Source: plant', text)


class DetectCommandTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)

    def write_wide(self, columns):
        path = self.dir / 'input.csv'
        frame = pd.DataFrame({'timestamp': np.arange(len(next(iter(columns.values())))), **columns})
        frame.to_csv(path, index=False, float_format='%.17g')
        return path

    def run_detect(self, *args):
        out = io.StringIO()
        call_command('detect', *args, '--output-dir', str(self.dir / 'out'), stdout=out)
        return out.getvalue()

    def test_writes_report_posteriors_and_manifest(self):
        path = self.write_wide({'current': spiky_series(2)})
        self.run_detect('--input', str(path), '--seed', '7')

        report = json.loads((self.dir / 'out' / 'report.json').read_text())
        self.assertEqual(report['schema_version'], 1)
        self.assertIn('convergence', report)
        frame = pd.read_csv(self.dir / 'out' / 'posteriors.csv')
        self.assertEqual(list(frame.columns), ['index', 'timestamp', 'rate', 'posterior', 'flagged'])
        manifest = json.loads((self.dir / 'out' / 'manifest.json').read_text())
        self.assertEqual(manifest['seed'], 7)
        self.assertEqual(manifest['command'], 'detect')

    def test_report_is_reproducible(self):
        path = self.write_wide({'current': spiky_series(2)})
        self.run_detect('--input', str(path))
        first = (self.dir / 'out' / 'report.json').read_bytes()
        self.run_detect('--input', str(path))
        self.assertEqual((self.dir / 'out' / 'report.json').read_bytes(), first)

    def test_scores_each_key(self):
        path = self.write_wide({'current': spiky_series(2), 'voltage': spiky_series(3)})
        self.run_detect('--input', str(path))
        report = json.loads((self.dir / 'out' / 'report.json').read_text())
        self.assertEqual(sorted(report['series']), ['current', 'voltage'])
        frame = pd.read_csv(self.dir / 'out' / 'posteriors.csv')
        self.assertEqual(frame.columns[0], 'key')

    def test_labels_column_adds_evaluation(self):
        labels = np.ones(300, dtype=int)
        labels[[80, 160, 240]] = 2
        path = self.write_wide({'output': spiky_series(2), 'label': labels})
        self.run_detect('--input', str(path), '--value-column', 'output')
        report = json.loads((self.dir / 'out' / 'report.json').read_text())
        self.assertEqual(len(report['evaluation']['segments']), 3)

    def test_simulation_trace_scores_output_only(self):
        labels = np.ones(300, dtype=int)
        labels[[80, 160, 240]] = 2
        path = self.dir / 'trace.csv'
        pd.DataFrame({
            'period_index': np.arange(1, 301),
            'time_s': np.arange(300) * 0.001,
            'output': spiky_series(2),
            'label': labels,
        }).to_csv(path, index=False, float_format='%.17g')
        out = self.run_detect('--input', str(path))

        report = json.loads((self.dir / 'out' / 'report.json').read_text())
        self.assertNotIn('series', report)
        self.assertTrue(report['source'].endswith('#output'))
        self.assertEqual(len(report['evaluation']['segments']), 3)
        self.assertNotIn('time_s', out)
        frame = pd.read_csv(self.dir / 'out' / 'posteriors.csv')
        self.assertAlmostEqual(float(frame['timestamp'].iloc[0]), 0.001)

    def test_constant_series_is_degenerate(self):
        path = self.write_wide({'value': np.full(30, 5.0)})
        with self.assertRaises(CommandError) as ctx:
            self.run_detect('--input', str(path))
        self.assertEqual(ctx.exception.returncode, 3)

    def test_missing_file(self):
        with self.assertRaises(CommandError) as ctx:
            self.run_detect('--input', str(self.dir / 'nope.csv'))
        self.assertEqual(ctx.exception.returncode, 3)


class StreamCommandTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def run_stream(self, text, *args):
        out = io.StringIO()
        call_command(
            'stream', *args, '--output-dir', self.tmp.name,
            stdin=io.StringIO(text), stdout=out,
        )
        return [json.loads(line) for line in out.getvalue().splitlines() if line.strip()]

    def test_empty_input_prints_summary_only(self):
        lines = self.run_stream('')
        self.assertEqual(len(lines), 1)
        self.assertTrue(lines[0]['summary'])
        self.assertEqual(lines[0]['alarms'], 0)
        self.assertIsNone(lines[0]['failure_probability'])

    def test_warmup_region_has_no_alarms(self):
        values = step_series(0, n=40, jump_at=40)
        lines = self.run_stream('\n'.join(repr(v) for v in values))
        self.assertEqual(len(lines), 1)
        self.assertEqual(lines[0]['consumed'], 40)

    def test_step_change_alarm(self):
        text = '\n'.join(repr(v) for v in step_series(1))
        lines = self.run_stream(text, '--refit-period', '1')
        alarms = [line for line in lines if not line.get('summary')]
        self.assertIn(55, [alarm['index'] for alarm in alarms])
        self.assertEqual(set(alarms[0]), {'index', 'value', 'posterior'})
        self.assertIsNotNone(lines[-1]['failure_probability'])

    def test_bad_lines_are_counted(self):
        with self.assertLogs('apps.detector.management.commands.stream', level='WARNING'):
            lines = self.run_stream('value\n1.0\nabc\n\n2.0\nnan\n')
        self.assertEqual(lines[-1]['skipped'], 3)
        self.assertEqual(lines[-1]['consumed'], 2)
