import io
import json
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from apps.benchmarks.schedule import FaultSchedule, SimTrace
from apps.preprocess.series import RateSeries, RawSeries
from emodm.exceptions import DataError, DegenerateData, SeriesTooShort, TooFewSamples

from .comparison import EMODM, comparison_frame, run_comparison, write_comparison
from .detectors import (
    iforest_detector,
    kde_detector,
    kmeans_detector,
    knn_detector,
    lof_detector,
    lrm_detector,
)


def cluster_with_outlier(n=40, outlier=10.0):
    return np.append(np.linspace(0.0, 1.0, n), outlier)


def labelled_trace(seed=0, n=200, segments=((60, 64), (140, 142))):
    rng = np.random.default_rng(seed)
    schedule = FaultSchedule(n, 1.0, segments)
    values = 100.0 + rng.normal(0.0, 1.0, n)
    values[schedule.labels() == 2] += 25.0
    return SimTrace.from_schedule(schedule, values)


class LrmDetectorTests(SimpleTestCase):

    def test_perfect_line_flags_nothing(self):
        result = lrm_detector(0.5 + 0.1 * np.arange(50))
        self.assertEqual(result.flagged, ())
        self.assertEqual(result.abnormal_fraction, 0.0)

    def test_constant_with_spike(self):
        y = np.ones(50)
        y[20] = 2.0
        self.assertEqual(lrm_detector(y).flagged, (20,))

    def test_displaced_point_on_trend(self):
        rng = np.random.default_rng(1)
        y = 0.01 * np.arange(100) + rng.normal(0.0, 0.01, 100)
        y[40] += 0.1
        self.assertIn(40, lrm_detector(y, z_threshold=3.0).flagged)

    def test_identical_samples(self):
        with self.assertRaises(DegenerateData):
            lrm_detector(np.full(20, 0.3))

    def test_flags_are_rate_indices(self):
        rates = np.ones(30)
        rates[15] = 3.0
        valid = np.ones(30, dtype=bool)
        valid[3] = False
        result = lrm_detector(RateSeries(rates=rates, valid=valid))
        self.assertEqual(result.flagged, (15,))
        self.assertEqual(result.abnormal_fraction, 1 / 29)

    def test_too_few_samples(self):
        with self.assertRaises(TooFewSamples):
            lrm_detector(np.arange(5.0))


class KdeDetectorTests(SimpleTestCase):

    def test_far_point_flagged(self):
        result = kde_detector(cluster_with_outlier(), density_quantile=0.05)
        self.assertIn(40, result.flagged)

    def test_identical_samples(self):
        with self.assertRaises(DegenerateData):
            kde_detector(np.full(20, 1.5))

    def test_zero_quantile_flags_nothing(self):
        self.assertEqual(kde_detector(cluster_with_outlier(), density_quantile=0.0).flagged, ())

    def test_unknown_bandwidth_rule(self):
        with self.assertRaises(DataError):
            kde_detector(cluster_with_outlier(), bandwidth_rule='guess')


class KnnDetectorTests(SimpleTestCase):

    def test_outlier_has_top_score(self):
        flagged = knn_detector(cluster_with_outlier(n=20, outlier=50.0), k=3).flagged
        self.assertIn(20, flagged)
        self.assertLessEqual(len(flagged), 2)

    def test_identical_samples_flag_nothing(self):
        self.assertEqual(knn_detector(np.full(20, 2.0), k=3).flagged, ())

    def test_unit_quantile_flags_nothing(self):
        self.assertEqual(knn_detector(cluster_with_outlier(), k=3, score_quantile=1.0).flagged, ())

    def test_k_must_be_below_sample_count(self):
        with self.assertRaises(DataError):
            knn_detector(np.arange(12.0), k=12)


class KmeansDetectorTests(SimpleTestCase):

    def test_smaller_cluster_flagged(self):
        y = np.array([0.0] * 10 + [100.0, 101.0])
        result = kmeans_detector(y, seed=0)
        self.assertEqual(result.flagged, (10, 11))
        self.assertAlmostEqual(result.abnormal_fraction, 2 / 12, places=15)

    def test_even_split_reports_half(self):
        grid = np.linspace(0.0, 0.2, 20)
        result = kmeans_detector(np.concatenate([grid - 1.0, grid + 1.0]), seed=3)
        self.assertEqual(result.abnormal_fraction, 0.5)

    def test_single_cluster_is_an_error(self):
        with self.assertRaises(DegenerateData):
            kmeans_detector(np.full(15, 4.0), seed=0)

    def test_seeded_runs_agree(self):
        y = np.random.default_rng(2).normal(0.0, 1.0, 200)
        self.assertEqual(kmeans_detector(y, seed=5).flagged, kmeans_detector(y, seed=5).flagged)


class IforestDetectorTests(SimpleTestCase):

    def setUp(self):
        self.y = np.append(np.random.default_rng(4).normal(0.0, 1.0, 200), 50.0)

    def test_outlier_flagged(self):
        self.assertIn(200, iforest_detector(self.y, seed=0).flagged)

    def test_smallest_forest_is_defined(self):
        result = iforest_detector(self.y, trees=1, subsample=2, seed=0)
        self.assertTrue(0.0 <= result.abnormal_fraction <= 1.0)

    def test_unit_quantile_flags_nothing(self):
        self.assertEqual(iforest_detector(self.y, score_quantile=1.0).flagged, ())

    def test_seeded_runs_agree(self):
        self.assertEqual(iforest_detector(self.y, seed=9).flagged, iforest_detector(self.y, seed=9).flagged)

    def test_subsample_larger_than_data(self):
        with self.assertRaises(DataError):
            iforest_detector(self.y, subsample=1000)


class LofDetectorTests(SimpleTestCase):

    def test_outlier_flagged(self):
        y = np.append(np.random.default_rng(6).normal(0.0, 1.0, 100), 30.0)
        self.assertIn(100, lof_detector(y).flagged)


class ComparisonTests(SimpleTestCase):

    def test_rows_for_every_method(self):
        rows = run_comparison(labelled_trace(), seed=0)
        self.assertEqual([row.method for row in rows], [EMODM, 'lrm', 'kde', 'knn', 'kmeans', 'iforest'])
        for row in rows:
            self.assertIsNone(row.error)
            self.assertEqual(row.abnormal_fraction, row.flagged_count / 199)
            self.assertEqual(row.true_count, 8)
        self.assertIsNotNone(rows[0].failure_probability)
        self.assertTrue(all(row.failure_probability is None for row in rows[1:]))

    def test_failing_method_leaves_other_rows_intact(self):
        trace = labelled_trace()
        clean = run_comparison(trace, seed=0)
        broken = run_comparison(trace, configs={'knn': {'k': 10 ** 6}}, seed=0)

        knn = next(row for row in broken if row.method == 'knn')
        self.assertIn('k must lie', knn.error)
        self.assertIsNone(knn.flagged_count)
        for before, after in zip(clean, broken):
            if before.method != 'knn':
                self.assertEqual(before.flagged_count, after.flagged_count)

    def test_all_normal_trace_has_no_recall(self):
        rows = run_comparison(labelled_trace(segments=()), seed=0)
        self.assertTrue(all(row.segment_recall is None for row in rows if row.error is None))

    def test_too_short_trace(self):
        trace = SimTrace(outputs=RawSeries([1.0]), labels=[1])
        with self.assertRaises(SeriesTooShort):
            run_comparison(trace)

    def test_unknown_method(self):
        with self.assertRaises(DataError):
            run_comparison(labelled_trace(), methods=('rnn',))

    def test_written_table(self):
        rows = run_comparison(labelled_trace(), seed=0, methods=('lrm',))
        with tempfile.TemporaryDirectory() as tmp:
            csv_path, json_path = write_comparison(rows, Path(tmp))
            frame = pd.read_csv(csv_path)
            payload = json.loads(json_path.read_text())
        self.assertEqual(list(frame['method']), [EMODM, 'lrm'])
        self.assertEqual(list(frame.columns), list(comparison_frame(rows).columns))
        self.assertEqual(payload['schema_version'], 1)


class CompareCommandTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)

    def test_writes_comparison_files(self):
        path = labelled_trace().to_csv(self.dir / 'trace.csv')
        call_command('compare', '--input', str(path), '--with-lof', '--output-dir', str(self.dir / 'out'),
                     stdout=io.StringIO())
        frame = pd.read_csv(self.dir / 'out' / 'comparison.csv')
        self.assertIn('lof', list(frame['method']))
        self.assertTrue((self.dir / 'out' / 'comparison.json').exists())
        self.assertTrue((self.dir / 'out' / 'manifest.json').exists())

    def test_unlabelled_trace_is_rejected(self):
        path = self.dir / 'trace.csv'
        pd.DataFrame({'time_s': np.arange(1.0, 31.0), 'output': np.arange(1.0, 31.0)}).to_csv(path, index=False)
        with self.assertRaises(CommandError) as ctx:
            call_command('compare', '--input', str(path), '--output-dir', str(self.dir / 'out'))
        self.assertEqual(ctx.exception.returncode, 3)
        self.assertIn('label', str(ctx.exception))
