import io
import json
import math
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from apps.detector.evaluation import evaluate_report
from apps.detector.scoring import DetectionConfig, fit_and_flag
from apps.preprocess.rates import relative_change_rate
from emodm.exceptions import DataError, MissingLabels, ScheduleError

from .llg import (
    AzimuthFault,
    LlgParams,
    MagnetState,
    cartesian_rhs,
    effective_field,
    integrate_llg,
    llg_rhs,
    run_llg_benchmark,
    spin_count,
    spin_torque,
)
from .presets import LLG, PRESETS, SALLEN_KEY, get_preset
from .sallen_key import (
    DOUBLE,
    SINGLE,
    CircuitParams,
    DriftDistribution,
    _reject,
    input_voltage,
    integrate_filter,
    run_benchmark,
)
from .schedule import FaultSchedule, SimTrace, parse_segments, read_trace, segments_of

NOMINAL_TAU = 4e-4
SINE_PERIOD = 1 / 400


def sine(t):
    return input_voltage(t, SINGLE)


class FaultScheduleTests(SimpleTestCase):

    def test_labels_follow_segments(self):
        schedule = FaultSchedule(10, 0.1, ((3, 4), (8, 8)))
        np.testing.assert_array_equal(schedule.labels(), [1, 1, 2, 2, 1, 1, 1, 2, 1, 1])
        self.assertEqual(segments_of(schedule.labels()), [(3, 4), (8, 8)])

    def test_first_period_must_be_normal(self):
        with self.assertRaises(ScheduleError):
            FaultSchedule(10, 0.1, ((1, 3),))

    def test_overlap_and_range(self):
        with self.assertRaises(ScheduleError):
            FaultSchedule(10, 0.1, ((3, 5), (5, 6)))
        with self.assertRaises(ScheduleError):
            FaultSchedule(10, 0.1, ((6, 8), (3, 4)))
        with self.assertRaises(ScheduleError):
            FaultSchedule(10, 0.1, ((9, 11),))

    def test_reference_label_fractions(self):
        self.assertAlmostEqual(get_preset(SALLEN_KEY).schedule.abnormal_fraction, 30 / 630, places=15)
        self.assertAlmostEqual(get_preset(LLG).schedule.abnormal_fraction, 30 / 200, places=15)
        self.assertEqual(PRESETS[LLG]['reference-single-fault'].schedule.abnormal_segments, ((101, 110),))

    def test_published_names_resolve_to_reference_presets(self):
        for kind, published, reference in ((SALLEN_KEY, 'paper-single', 'reference-single'),
                                           (SALLEN_KEY, 'paper-double', 'reference-double'),
                                           (LLG, 'paper-multi', 'reference-multi'),
                                           (LLG, 'paper-single-fault', 'reference-single-fault')):
            self.assertIs(get_preset(kind, published), PRESETS[kind][reference])

    def test_unknown_preset(self):
        with self.assertRaises(ScheduleError):
            get_preset(SALLEN_KEY, 'nope')

    def test_parse_segments(self):
        self.assertEqual(parse_segments('151-160, 211-220'), ((151, 160), (211, 220)))
        self.assertEqual(parse_segments(''), ())
        with self.assertRaises(ScheduleError):
            parse_segments('151')


class TraceFileTests(SimpleTestCase):

    def test_csv_round_trip(self):
        schedule = FaultSchedule(6, 0.5, ((3, 4),))
        trace = SimTrace.from_schedule(schedule, np.array([0.1, 1 / 3, -2.5e-7, 4.0, 5.5, math.pi]))
        with tempfile.TemporaryDirectory() as tmp:
            path = trace.to_csv(Path(tmp) / 'trace.csv')
            loaded = read_trace(path)
        np.testing.assert_array_equal(loaded.outputs.values, trace.outputs.values)
        np.testing.assert_array_equal(loaded.labels, trace.labels)

    def test_unlabelled_trace(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'trace.csv'
            pd.DataFrame({'time_s': [1.0, 2.0], 'output': [3.0, 4.0]}).to_csv(path, index=False)
            with self.assertRaises(MissingLabels):
                read_trace(path)
            self.assertEqual(list(read_trace(path, require_labels=False).labels), [1, 1])


class InputVoltageTests(SimpleTestCase):

    def test_zero_phase(self):
        self.assertEqual(input_voltage(0.0, SINGLE), 0.0)

    def test_quarter_period(self):
        self.assertAlmostEqual(input_voltage(1 / 1600, SINGLE), 100.0, places=10)
        self.assertAlmostEqual(input_voltage(1 / 1600, DOUBLE), 100.0, places=10)

    def test_vectorised(self):
        self.assertEqual(input_voltage(np.zeros(3), DOUBLE).shape, (3,))


class IntegrateFilterTests(SimpleTestCase):

    def setUp(self):
        self.nominal = CircuitParams.nominal()

    def test_nominal_filter_is_critically_damped(self):
        np.testing.assert_allclose(self.nominal.time_constants(), (NOMINAL_TAU, NOMINAL_TAU), rtol=1e-6)

    def test_zero_input_stays_at_rest(self):
        _, v, rate = integrate_filter(self.nominal, np.zeros_like, (0.0, 0.01), step=1e-5)
        self.assertTrue(np.all(v == 0.0))
        self.assertTrue(np.all(rate == 0.0))

    def test_unity_dc_gain(self):
        # a critically damped step response still sits ~4% low at 5 tau
        _, v, _ = integrate_filter(self.nominal, np.ones_like, (0.0, 12 * NOMINAL_TAU), step=NOMINAL_TAU / 50)
        self.assertAlmostEqual(v[-1], 1.0, delta=1e-3)

    def test_steady_state_gain_matches_transfer_function(self):
        omega = 2 * math.pi * 400
        _, v, _ = integrate_filter(self.nominal, sine, (0.0, 20 * SINE_PERIOD), step=SINE_PERIOD / 200)
        amplitude = np.max(np.abs(v[-400:])) / 100.0
        self.assertAlmostEqual(self.nominal.gain(omega), 0.4973, places=4)
        self.assertAlmostEqual(amplitude, self.nominal.gain(omega), delta=0.01 * self.nominal.gain(omega))

    def test_step_refinement(self):
        span = (0.0, 4 * SINE_PERIOD)
        _, coarse, _ = integrate_filter(self.nominal, sine, span, step=SINE_PERIOD / 20, samples=8)
        _, fine, _ = integrate_filter(self.nominal, sine, span, step=SINE_PERIOD / 40, samples=8)
        scale = np.max(np.abs(fine))
        self.assertLess(np.max(np.abs(coarse - fine)) / scale, 1e-3)


class RunBenchmarkTests(SimpleTestCase):

    def setUp(self):
        self.nominal = CircuitParams.nominal()
        self.period = SINE_PERIOD

    def test_reject_keeps_central_band(self):
        keep = _reject(np.arange(100.0), 0.04)
        self.assertEqual(int(keep.sum()), 96)
        self.assertFalse(keep[0] or keep[1] or keep[98] or keep[99])
        self.assertTrue(_reject(np.arange(5.0), 0.0).all())

    def test_no_abnormal_segments_equals_nominal_run(self):
        schedule = FaultSchedule(12, self.period)
        trace = run_benchmark(schedule, self.nominal, DriftDistribution(), SINGLE, mc_draws=10, seed=1)
        _, v, _ = integrate_filter(self.nominal, sine, (0.0, schedule.total_time), step=self.period / 20, samples=12)
        np.testing.assert_allclose(trace.outputs.values, v[1:], rtol=1e-9, atol=1e-12)
        self.assertTrue(np.all(trace.labels == 1))

    def test_zero_variance_drift_is_deterministic_fault(self):
        schedule = FaultSchedule(8, self.period, ((3, 5),))
        drift = DriftDistribution(r1_var=0.0, c1_var=0.0, c2_var=0.0)
        trace = run_benchmark(schedule, self.nominal, drift, SINGLE, mc_draws=4, seed=9)

        faulty = CircuitParams(r1=drift.r1_mean, r2=self.nominal.r2, c1=drift.c1_mean, c2=drift.c2_mean)
        expected = []
        for k in (2, 3, 4):
            t0 = k * self.period
            _, v, _ = integrate_filter(faulty, sine, (t0, t0 + self.period), step=self.period / 20, samples=1)
            expected.append(v[-1])
        np.testing.assert_allclose(trace.outputs.values[2:5], expected, rtol=1e-9, atol=0.0)

    def test_fault_circuit_output_collapses(self):
        schedule = FaultSchedule(8, self.period, ((3, 5),))
        trace = run_benchmark(schedule, self.nominal, DriftDistribution(), SINGLE, mc_draws=40, seed=2)
        scale = np.max(np.abs(trace.outputs.values))
        self.assertTrue(np.all(np.abs(trace.outputs.values[2:5]) < 1e-9 * scale))

    def test_nominal_circuit_runs_through_the_fault(self):
        clean = run_benchmark(FaultSchedule(12, self.period), self.nominal, DriftDistribution(), SINGLE, mc_draws=10)
        faulty = run_benchmark(FaultSchedule(12, self.period, ((4, 6),)), self.nominal, DriftDistribution(), SINGLE,
                               mc_draws=10, seed=3)
        np.testing.assert_array_equal(faulty.outputs.values[:3], clean.outputs.values[:3])
        np.testing.assert_array_equal(faulty.outputs.values[6:], clean.outputs.values[6:])

    def test_same_seed_same_trace(self):
        schedule = FaultSchedule(30, self.period, ((10, 12), (20, 21)))
        first = run_benchmark(schedule, self.nominal, DriftDistribution(), DOUBLE, mc_draws=50, seed=7)
        second = run_benchmark(schedule, self.nominal, DriftDistribution(), DOUBLE, mc_draws=50, seed=7)
        np.testing.assert_array_equal(first.outputs.values, second.outputs.values)
        np.testing.assert_array_equal(first.labels, schedule.labels())

    def test_drift_draws_are_positive(self):
        r1, c1, c2 = DriftDistribution().draw(np.random.default_rng(0), 5000)
        self.assertTrue(np.all(r1 > 0) and np.all(c1 > 0) and np.all(c2 > 0))


class LlgFieldTests(SimpleTestCase):

    def setUp(self):
        self.params = LlgParams()

    def test_spin_count(self):
        self.assertAlmostEqual(spin_count(self.params), 2.2876e6, delta=100)
        doubled = LlgParams(volume=2 * self.params.volume)
        self.assertAlmostEqual(spin_count(doubled), 2 * spin_count(self.params), delta=1e-6)

    def test_effective_field(self):
        np.testing.assert_array_equal(effective_field([0, 0, 1], self.params), [0, 0, 1])
        np.testing.assert_array_equal(effective_field([1, 0, 0], self.params), [0, 0, 0])
        np.testing.assert_array_equal(effective_field([0, 1, 0], LlgParams(h_d=2.0)), [0, -2, 0])

    def test_spin_torque(self):
        expected = self.params.i_s / (self.params.q * spin_count(self.params))
        np.testing.assert_allclose(spin_torque([1, 0, 0], self.params), [0, 0, expected], rtol=1e-12)
        np.testing.assert_array_equal(spin_torque([0, 0, 1], self.params), [0, 0, 0])
        np.testing.assert_array_equal(spin_torque([1, 0, 0], LlgParams(i_s=0.0)), [0, 0, 0])

    def test_equilibrium_on_easy_axis(self):
        np.testing.assert_array_equal(cartesian_rhs(np.array([0.0, 0.0, 1.0]), LlgParams(i_s=0.0)), [0, 0, 0])

    def test_pure_precession_keeps_theta(self):
        params = LlgParams(damping=0.0, i_s=0.0)
        dtheta, dphi = llg_rhs(MagnetState(math.pi / 4, 0.3), params)
        self.assertAlmostEqual(dtheta / params.omega, 0.0, places=12)
        self.assertNotEqual(dphi, 0.0)

    def test_rejects_non_unit_polarization(self):
        with self.assertRaises(DataError):
            LlgParams(polarization=(0.0, 0.0, 2.0))


class IntegrateLlgTests(SimpleTestCase):

    def test_unit_norm(self):
        states = integrate_llg(MagnetState(math.pi / 4, 0.0), LlgParams(), (0.0, 0.2e-9), 21)
        norms = [np.linalg.norm(state.cartesian()) for state in states]
        np.testing.assert_allclose(norms, 1.0, rtol=0, atol=1e-12)

    def test_precession_conserves_m_z(self):
        params = LlgParams(damping=0.0, i_s=0.0)
        states = integrate_llg(MagnetState(math.pi / 4, 0.0), params, (0.0, 0.8e-9), 41)
        m_z = np.array([state.cartesian()[2] for state in states])
        self.assertLess(np.max(np.abs(m_z - m_z[0])), 1e-6)

    def test_damping_relaxes_to_easy_axis(self):
        params = LlgParams(damping=0.5, i_s=0.0)
        states = integrate_llg(MagnetState(math.pi / 4, 0.0), params, (0.0, 20e-9), 101, max_step=2e-12)
        thetas = np.array([state.theta for state in states])
        self.assertTrue(np.all(np.diff(thetas) < 0))
        self.assertLess(thetas[-1], 1e-3)

    def test_equilibrium_stays_near_pole(self):
        states = integrate_llg(MagnetState(1e-8, 0.0), LlgParams(i_s=0.0), (0.0, 0.8e-9), 41)
        self.assertLess(max(state.theta for state in states), 1e-6)

    def test_step_refinement(self):
        span = (0.0, 0.2e-9)
        coarse = integrate_llg(MagnetState(math.pi / 4, 0.0), LlgParams(), span, 11, max_step=1e-12)
        fine = integrate_llg(MagnetState(math.pi / 4, 0.0), LlgParams(), span, 11, max_step=0.5e-12)
        diff = [abs(a.m_x - b.m_x) for a, b in zip(coarse, fine)]
        self.assertLess(max(diff), 1e-4)


class RunLlgBenchmarkTests(SimpleTestCase):

    def setUp(self):
        self.params = LlgParams()
        self.schedule = FaultSchedule.from_duration(20, 0.08e-9, ((8, 11),))

    def test_clean_run_without_faults_equals_nominal(self):
        schedule = FaultSchedule.from_duration(20, 0.08e-9)
        trace = run_llg_benchmark(schedule, self.params, noise_fraction=0.0, seed=0)
        states = integrate_llg(MagnetState(math.pi / 4, 0.0), self.params, (0.0, schedule.total_time), 21)
        np.testing.assert_array_equal(trace.outputs.values, [state.m_x for state in states[1:]])

    def test_fault_carries_past_the_segment(self):
        clean = run_llg_benchmark(FaultSchedule.from_duration(20, 0.08e-9), self.params, noise_fraction=0.0)
        faulty = run_llg_benchmark(self.schedule, self.params, AzimuthFault(1.3, 0.0), noise_fraction=0.0)
        np.testing.assert_allclose(faulty.outputs.values[:7], clean.outputs.values[:7], rtol=1e-12, atol=1e-14)

        period = self.schedule.period_duration
        entry = integrate_llg(MagnetState(math.pi / 4, 0.0), self.params, (0.0, 7 * period), 8)[-1]
        resumed = integrate_llg(MagnetState(1.3, entry.phi), self.params, (7 * period, 20 * period), 14)
        np.testing.assert_allclose(faulty.outputs.values[7:], [s.m_x for s in resumed[1:]], atol=1e-6)
        self.assertGreater(np.max(np.abs(faulty.outputs.values[7:11] - clean.outputs.values[7:11])), 1e-3)

    def test_zero_std_fault_is_deterministic(self):
        self.assertEqual(AzimuthFault(0.3, 0.0).draw(np.random.default_rng(0)), 0.3)
        first = run_llg_benchmark(self.schedule, self.params, (0.3, 0.0), noise_fraction=0.0, seed=1)
        second = run_llg_benchmark(self.schedule, self.params, (0.3, 0.0), noise_fraction=0.0, seed=2)
        np.testing.assert_array_equal(first.outputs.values, second.outputs.values)

    def test_same_seed_same_trace(self):
        first = run_llg_benchmark(self.schedule, self.params, seed=5)
        second = run_llg_benchmark(self.schedule, self.params, seed=5)
        np.testing.assert_array_equal(first.outputs.values, second.outputs.values)
        np.testing.assert_array_equal(first.labels, self.schedule.labels())

    def test_noise_scales_with_peak_to_peak(self):
        trace = run_llg_benchmark(self.schedule, self.params, seed=5, noise_fraction=0.01)
        self.assertGreater(trace.input_description['noise_std'], 0.0)


class SimulateCommandTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.out = Path(self.tmp.name)

    def simulate(self, *args, out='run'):
        call_command('simulate', *args, '--output-dir', str(self.out / out), stdout=io.StringIO())
        return pd.read_csv(self.out / out / 'trace.csv')

    def test_sallen_key_reference_single(self):
        frame = self.simulate('sallen-key', '--preset', 'reference-single', '--mc-draws', '200')
        self.assertEqual(len(frame), 630)
        self.assertEqual(int((frame['label'] == 2).sum()), 30)
        self.assertEqual(list(frame.columns), ['period_index', 'time_s', 'output', 'label'])
        self.assertTrue((self.out / 'run' / 'manifest.json').exists())

    def test_llg_reference_multi(self):
        frame = self.simulate('llg')
        self.assertEqual(len(frame), 200)
        abnormal = frame.loc[frame['label'] == 2, 'period_index'].tolist()
        self.assertEqual(abnormal, [*range(51, 61), *range(91, 101), *range(121, 131)])

    def test_published_preset_names(self):
        frame = self.simulate('sallen-key', '--preset', 'paper-single', '--mc-draws', '20', out='single')
        self.assertEqual(len(frame), 630)
        self.assertEqual(int((frame['label'] == 2).sum()), 30)
        frame = self.simulate('llg', '--preset', 'paper-single-fault', out='llg')
        self.assertEqual(frame.loc[frame['label'] == 2, 'period_index'].tolist(), list(range(101, 111)))
        frame = self.simulate('llg', '--preset', 'paper-multi', out='multi')
        self.assertEqual(int((frame['label'] == 2).sum()), 30)

    def test_same_seed_identical_files(self):
        args = ('sallen-key', '--periods', '40', '--duration', '0.1', '--segments', '11-14', '--seed', '7')
        self.simulate(*args, '--mc-draws', '50', out='a')
        self.simulate(*args, '--mc-draws', '50', out='b')
        self.assertEqual((self.out / 'a' / 'trace.csv').read_bytes(), (self.out / 'b' / 'trace.csv').read_bytes())
        self.assertEqual((self.out / 'a' / 'manifest.json').read_bytes(), (self.out / 'b' / 'manifest.json').read_bytes())

    def test_invalid_schedule_is_usage_error(self):
        for segments in ('1-5', '9-3', 'abc'):
            with self.assertRaises(CommandError) as ctx:
                self.simulate('llg', '--periods', '20', '--segments', segments)
            self.assertEqual(ctx.exception.returncode, 2)


class EndToEndDetectionTests(SimpleTestCase):

    def detect(self, trace):
        rates = relative_change_rate(trace.outputs)
        report, _ = fit_and_flag(rates, DetectionConfig.from_settings())
        return rates, report, evaluate_report(trace.labels, report, rates)

    def test_sallen_key_segments_are_found(self):
        preset = get_preset(SALLEN_KEY, 'paper-single')
        for seed in (0, 1, 2):
            with self.subTest(seed=seed):
                trace = run_benchmark(preset.schedule, preset.nominal, preset.drift, preset.input_kind,
                                      mc_draws=50, seed=seed)
                rates, report, evaluation = self.detect(trace)
                self.assertEqual(evaluation.segment_recall, 1.0)
                flagged = set(rates.origin_index[list(report.flagged)].tolist())
                for start, end in preset.schedule.abnormal_segments:
                    # 0-based raw index of the first abnormal period
                    self.assertIn(start - 1, flagged)
                    self.assertFalse(rates.valid[start - 1:end].any())

    def test_llg_recall_and_false_flags_across_seeds(self):
        preset = get_preset(LLG, 'paper-multi')
        full_recall = low_false_flags = 0
        for seed in range(10):
            trace = run_llg_benchmark(preset.schedule, preset.params, preset.fault, preset.noise_fraction, seed)
            _, _, evaluation = self.detect(trace)
            full_recall += evaluation.segment_recall == 1.0
            low_false_flags += evaluation.false_flag_rate < 0.01
        self.assertGreaterEqual(full_recall, 8)
        self.assertGreaterEqual(low_false_flags, 8)

    def test_detect_command_on_simulated_trace(self):
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        root = Path(tmp.name)
        call_command('simulate', 'sallen-key', '--preset', 'paper-single', '--mc-draws', '50',
                     '--output-dir', str(root / 'sim'), stdout=io.StringIO())
        call_command('detect', '--input', str(root / 'sim' / 'trace.csv'),
                     '--output-dir', str(root / 'det'), stdout=io.StringIO())

        report = json.loads((root / 'det' / 'report.json').read_text())
        self.assertNotIn('series', report)
        self.assertEqual(len(report['evaluation']['segments']), 3)
        self.assertEqual(report['evaluation']['segment_recall'], 1.0)
