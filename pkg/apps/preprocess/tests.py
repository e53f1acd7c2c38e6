import numpy as np
from django.test import SimpleTestCase

from emodm.exceptions import DataError, InvalidSample, NonPositiveValue, SeriesTooShort

from .rates import default_denom_epsilon, log10_transform, reconstruct, relative_change_rate
from .series import RateSeries, RawSeries


class RawSeriesTests(SimpleTestCase):

    def test_rejects_non_finite(self):
        with self.assertRaises(InvalidSample):
            RawSeries([1.0, float('inf'), 2.0])

    def test_timestamps_must_increase(self):
        with self.assertRaises(DataError):
            RawSeries([1.0, 2.0, 3.0], timestamps=[0.0, 2.0, 1.0])

    def test_timestamp_length_mismatch(self):
        with self.assertRaises(DataError):
            RawSeries([1.0, 2.0], timestamps=[0.0])

    def test_date_labels(self):
        raw = RawSeries([1.0, 2.0], timestamps=np.array(['2020-01-04', '2020-01-11'], dtype='datetime64[D]'))
        self.assertEqual(raw.timestamp_labels(), ['2020-01-04', '2020-01-11'])

    def test_index_labels_without_timestamps(self):
        self.assertEqual(RawSeries([3.0, 4.0, 5.0]).timestamp_labels(), [0, 1, 2])


class RelativeChangeRateTests(SimpleTestCase):

    def test_direct_substitution(self):
        rates = relative_change_rate(RawSeries([2.0, 4.0, 3.0]))
        np.testing.assert_array_equal(rates.rates, [1.0, -0.25])
        self.assertTrue(rates.valid.all())
        np.testing.assert_array_equal(rates.origin_index, [1, 2])

    def test_constant_series(self):
        rates = relative_change_rate(RawSeries([5.0, 5.0, 5.0]))
        np.testing.assert_array_equal(rates.rates, [0.0, 0.0])

    def test_zero_denominator_is_invalid(self):
        rates = relative_change_rate(RawSeries([1.0, 0.0, 2.0]), denom_epsilon=1e-12)
        self.assertEqual(rates.rates[0], -1.0)
        np.testing.assert_array_equal(rates.valid, [True, False])
        np.testing.assert_array_equal(rates.valid_rates(), [-1.0])

    def test_all_zero_series(self):
        rates = relative_change_rate(RawSeries([0.0, 0.0, 0.0]))
        self.assertEqual(rates.valid_count, 0)

    def test_too_short(self):
        with self.assertRaises(SeriesTooShort):
            relative_change_rate(RawSeries([1.0]))
        with self.assertRaises(SeriesTooShort):
            relative_change_rate(RawSeries([]))

    def test_default_epsilon_is_relative(self):
        self.assertEqual(default_denom_epsilon(RawSeries([-4.0, 2.0])), 4e-12)

    def test_reconstruction(self):
        rng = np.random.default_rng(0)
        values = 100.0 + rng.normal(0, 5, 200)
        rates = relative_change_rate(RawSeries(values))
        np.testing.assert_allclose(reconstruct(values[0], rates), values, rtol=1e-9)

    def test_scale_invariance_and_shift_sensitivity(self):
        values = np.array([3.0, 4.5, 4.0, 6.0])
        base = relative_change_rate(RawSeries(values)).rates
        np.testing.assert_allclose(relative_change_rate(RawSeries(-7.0 * values)).rates, base, rtol=1e-15)
        shifted = relative_change_rate(RawSeries(values + 10.0)).rates
        self.assertFalse(np.allclose(shifted, base))


class RateSeriesTests(SimpleTestCase):

    def test_valid_entries_must_be_finite(self):
        with self.assertRaises(InvalidSample):
            RateSeries(rates=[0.1, float('nan')], valid=[True, True])

    def test_invalid_entries_may_hold_anything(self):
        series = RateSeries(rates=[0.1, float('nan')], valid=[True, False])
        self.assertEqual(series.valid_count, 1)

    def test_append_and_prefix(self):
        series = RateSeries.from_samples([0.1, 0.2]).append(0.3, True, 3).append(9.9, False, 4)
        self.assertEqual(len(series), 4)
        np.testing.assert_array_equal(series.origin_index, [1, 2, 3, 4])
        self.assertEqual(series.rates[-1], 0.0)
        self.assertEqual(len(series.prefix(2)), 2)


class Log10TransformTests(SimpleTestCase):

    def test_powers_of_ten(self):
        np.testing.assert_allclose(log10_transform(RawSeries([1.0, 10.0, 100.0])).values, [0.0, 1.0, 2.0])

    def test_constant(self):
        np.testing.assert_allclose(log10_transform(RawSeries([1000.0] * 4)).values, [3.0] * 4)

    def test_zero_reports_index(self):
        with self.assertRaises(NonPositiveValue) as ctx:
            log10_transform(RawSeries([1.0, 2.0, 0.0, 5.0]))
        self.assertEqual(ctx.exception.index, 2)

    def test_timestamps_kept(self):
        raw = RawSeries([1.0, 10.0], timestamps=[0.5, 1.5])
        np.testing.assert_array_equal(log10_transform(raw).timestamps, [0.5, 1.5])
