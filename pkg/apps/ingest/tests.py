import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from apps.preprocess.series import RawSeries
from emodm.exceptions import IngestError

from .csv_io import LONG, WIDE, Dataset, aggregate_sum, read_column, read_csv, write_csv


class CsvFileTestCase(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)

    def write(self, text, name='input.csv'):
        path = self.dir / name
        path.write_text(text, encoding='utf-8')
        return path


class ReadCsvTests(CsvFileTestCase):

    def test_wide_layout(self):
        path = self.write('timestamp,ca,ny\n2020-01-04,1,10\n2020-01-11,2,20\n2020-01-18,3,30\n')
        data = read_csv(path, layout=WIDE)
        self.assertEqual(data.keys, ['ca', 'ny'])
        np.testing.assert_array_equal(data['ny'].values, [10.0, 20.0, 30.0])
        self.assertEqual(data['ca'].timestamp_labels(), ['2020-01-04', '2020-01-11', '2020-01-18'])
        self.assertEqual(data.frequency_hint, 'W-SAT')

    def test_long_layout_is_sorted_per_key(self):
        path = self.write('key,timestamp,value\na,3,30\nb,1,5\na,1,10\na,2,20\n')
        data = read_csv(path, layout=LONG)
        np.testing.assert_array_equal(data['a'].values, [10.0, 20.0, 30.0])
        np.testing.assert_array_equal(data['a'].timestamps, [1.0, 2.0, 3.0])
        self.assertEqual(len(data['b']), 1)

    def test_key_selection(self):
        path = self.write('timestamp,ca,ny\n1,1,10\n2,2,20\n')
        self.assertEqual(read_csv(path, keys=['ny']).keys, ['ny'])
        with self.assertRaises(IngestError):
            read_csv(path, keys=['tx'])

    def test_blank_cell_names_line_and_column(self):
        path = self.write('timestamp,ca,ny\n1,1,10\n2,,20\n')
        with self.assertRaisesMessage(IngestError, "line 3, column 'ca'"):
            read_csv(path)

    def test_unparseable_cell(self):
        path = self.write('key,timestamp,value\na,1,abc\n')
        with self.assertRaisesMessage(IngestError, "column 'value'"):
            read_csv(path, layout=LONG)

    def test_duplicate_timestamp(self):
        path = self.write('key,timestamp,value\na,1,1\na,1,2\n')
        with self.assertRaisesMessage(IngestError, 'duplicate timestamp'):
            read_csv(path, layout=LONG)

    def test_missing_file(self):
        with self.assertRaisesMessage(IngestError, 'not found'):
            read_csv(self.dir / 'nope.csv')

    def test_header_only(self):
        with self.assertRaises(IngestError):
            read_csv(self.write('timestamp,ca\n'))

    def test_unknown_key_lookup(self):
        data = read_csv(self.write('timestamp,ca\n1,1\n'))
        with self.assertRaises(IngestError):
            data['ny']

    def test_read_column(self):
        path = self.write('t,output,label\n1,5,1\n2,6,2\n')
        np.testing.assert_array_equal(read_column(path, 'label'), [1.0, 2.0])
        self.assertIsNone(read_column(path, 'missing'))


class AggregateTests(SimpleTestCase):

    def dataset(self, **series):
        return Dataset({key: RawSeries(values, timestamps=np.arange(len(values)) * 1.0) for key, values in series.items()})

    def test_element_wise_sum(self):
        data = self.dataset(a=[1.0, 2.0, 3.0], b=[10.0, 20.0, 30.0])
        np.testing.assert_array_equal(aggregate_sum(data).values, [11.0, 22.0, 33.0])

    def test_single_key_is_identity(self):
        data = self.dataset(a=[1.0, 2.0, 3.0], b=[10.0, 20.0, 30.0])
        np.testing.assert_array_equal(aggregate_sum(data, ['b']).values, [10.0, 20.0, 30.0])

    def test_linearity(self):
        rng = np.random.default_rng(0)
        data = self.dataset(a=rng.normal(size=20), b=rng.normal(size=20))
        combined = aggregate_sum(data, ['a', 'b']).values
        separate = aggregate_sum(data, ['a']).values + aggregate_sum(data, ['b']).values
        np.testing.assert_array_equal(combined, separate)

    def test_length_mismatch(self):
        with self.assertRaises(IngestError):
            aggregate_sum(self.dataset(a=[1.0, 2.0], b=[1.0, 2.0, 3.0]))

    def test_timestamp_divergence(self):
        data = Dataset({
            'a': RawSeries([1.0, 2.0], timestamps=[0.0, 1.0]),
            'b': RawSeries([1.0, 2.0], timestamps=[0.0, 2.0]),
        })
        with self.assertRaisesMessage(IngestError, 'position 1'):
            aggregate_sum(data)


class WriteCsvTests(CsvFileTestCase):

    def test_wide_round_trip_is_bit_exact(self):
        rng = np.random.default_rng(1)
        values = {'a': rng.normal(size=25) * 1e3, 'b': rng.exponential(size=25) / 7.0}
        data = Dataset({key: RawSeries(v, timestamps=np.arange(25) * 0.1) for key, v in values.items()})
        path = write_csv(data, self.dir / 'out.csv', layout=WIDE)
        loaded = read_csv(path, layout=WIDE)
        for key in values:
            np.testing.assert_array_equal(loaded[key].values, values[key])
            np.testing.assert_array_equal(loaded[key].timestamps, data[key].timestamps)

    def test_long_round_trip_with_dates(self):
        stamps = np.array(['2021-03-06', '2021-03-13', '2021-03-20'], dtype='datetime64[ns]')
        data = Dataset({'x': RawSeries([1 / 3, 2 / 3, 1.0], timestamps=stamps)})
        path = write_csv(data, self.dir / 'out.csv', layout=LONG)
        self.assertIn('2021-03-06', path.read_text())
        loaded = read_csv(path, layout=LONG)
        np.testing.assert_array_equal(loaded['x'].values, [1 / 3, 2 / 3, 1.0])
        np.testing.assert_array_equal(loaded['x'].timestamps, stamps)
