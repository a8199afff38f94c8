import os
import tempfile
import unittest

import numpy as np

from driftlab import util


class TestSeeds(unittest.TestCase):

    def test_derive_seed(self):
        self.assertEqual(util.derive_seed(1, 2, 3), util.derive_seed(1, 2, 3))
        self.assertNotEqual(util.derive_seed(1, 2, 3), util.derive_seed(1, 3, 2))
        self.assertLess(util.derive_seed(7), 2 ** util.SEED_BITS)
        with self.assertRaises(ValueError):
            util.derive_seed()

    def test_make_rng(self):
        np.testing.assert_array_equal(util.make_rng(5).standard_normal(4), util.make_rng(5).standard_normal(4))


class TestFiles(unittest.TestCase):

    def test_run_path(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = util.run_path(tmp, 'a', 'b')
            self.assertTrue(os.path.isdir(path))
            self.assertEqual(path, os.path.join(os.path.abspath(tmp), 'a', 'b'))

    def test_csv(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'rows.csv')
            util.write_csv(path, ['epoch', 'value', 'mode'], [
                {'epoch': 0, 'value': 0.1, 'mode': 'off'},
                {'epoch': 10, 'value': 1 / 3, 'mode': 'concentrated'}
            ])
            rows = util.read_csv(path)
            self.assertEqual(rows[0], {'epoch': 0, 'value': 0.1, 'mode': 'off'})
            self.assertEqual(rows[1]['value'], 1 / 3)

    def test_parse_cell(self):
        self.assertEqual(util.parse_cell('3'), 3)
        self.assertEqual(util.parse_cell('2.5'), 2.5)
        self.assertEqual(util.parse_cell('off'), 'off')

    def test_vectors(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'samples.txt')
            with open(path, 'w') as handle:
                handle.write('# prompt 0\n1.0 2.0\n3.0 4.0\n\n\n# prompt 1\n5.0 6.0\n')
            buckets = util.read_vectors(path)
            self.assertEqual(len(buckets), 2)
            np.testing.assert_array_equal(buckets[0], [[1.0, 2.0], [3.0, 4.0]])
            np.testing.assert_array_equal(buckets[1], [[5.0, 6.0]])
            util.write_vectors(path, buckets)
            self.assertEqual(len(util.read_vectors(path)), 2)

    def test_json(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = util.save_json({'b': 1, 'a': [0.5]}, os.path.join(tmp, 'doc.json'))
            self.assertEqual(util.load_json(path), {'a': [0.5], 'b': 1})


class TestNumerics(unittest.TestCase):

    def test_finite_difference(self):
        grad = util.finite_difference(lambda x: np.sum(x ** 3), np.array([1.0, -2.0]))
        np.testing.assert_allclose(grad, [3.0, 12.0], rtol=1e-8)

    def test_relative_error(self):
        self.assertAlmostEqual(util.relative_error([1.0, 2.2], [1.0, 2.0]), 0.1, delta=1e-12)
        self.assertAlmostEqual(util.relative_error([1e-13], [0.0]), 0.1, delta=1e-12)

    def test_population_std(self):
        self.assertEqual(util.population_std([1.0, 3.0]), 1.0)
