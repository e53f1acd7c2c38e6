import math
from unittest import mock

import numpy as np
from django.test import SimpleTestCase

from apps.preprocess.series import RateSeries
from emodm.exceptions import DegenerateData, EmptyComponent, InvalidSample, TooFewSamples

from .em import (
    default_init,
    e_step,
    fit_em,
    m_step,
    normal_density,
    observed_log_likelihood,
    variance_floor,
)
from .params import FitConfig, GaussianComponent, MixtureParams, ResponsibilityMatrix


def draw_mixture(rng, n, mu1, sigma1, mu2, sigma2, eta):
    abnormal = rng.random(n) < eta
    return np.where(
        abnormal,
        rng.normal(mu2, sigma2, n),
        rng.normal(mu1, sigma1, n),
    )


class NormalDensityTests(SimpleTestCase):

    def test_standard_normal_at_mean(self):
        self.assertAlmostEqual(normal_density(0.0, GaussianComponent(0.0, 1.0)), 0.3989422804014327, places=15)

    def test_peak_value_for_any_sigma(self):
        component = GaussianComponent(3.5, 2.5)
        self.assertAlmostEqual(normal_density(3.5, component), 1 / (2.5 * math.sqrt(2 * math.pi)), places=15)

    def test_tail_value(self):
        self.assertAlmostEqual(normal_density(1.96, GaussianComponent(0.0, 1.0)), 0.05844094433345147, places=12)

    def test_non_finite_sample_rejected(self):
        with self.assertRaises(InvalidSample):
            normal_density(float('nan'), GaussianComponent(0.0, 1.0))


class EStepTests(SimpleTestCase):

    def test_identical_components_give_prior_weights(self):
        params = MixtureParams.from_values(0.0, 1.0, 0.0, 1.0, 0.3)
        resp = e_step(RateSeries.from_samples([-2.0, 0.0, 0.5, 7.0]), params)
        np.testing.assert_allclose(resp.values, [[0.7, 0.3]] * 4, rtol=0, atol=1e-15)

    def test_zero_abnormal_weight(self):
        params = MixtureParams.from_values(0.0, 1.0, 5.0, 1.0, 0.0)
        resp = e_step([0.0, 3.0, 10.0], params)
        np.testing.assert_array_equal(resp.values, [[1.0, 0.0]] * 3)

    def test_far_sample_belongs_to_abnormal(self):
        params = MixtureParams.from_values(0.0, 1.0, 5.0, 1.0, 0.5)
        resp = e_step([5.0], params)
        self.assertAlmostEqual(resp.abnormal[0], 1 / (1 + math.exp(-12.5)), places=12)
        self.assertAlmostEqual(resp.abnormal[0], 0.9999963, places=7)

    def test_invalid_rates_receive_no_row(self):
        rates = RateSeries(rates=[0.1, 0.0, -0.2], valid=[True, False, True])
        resp = e_step(rates, MixtureParams.from_values(0.0, 1.0, 1.0, 2.0, 0.2))
        self.assertEqual(resp.rows, 2)

    def test_tail_samples_do_not_underflow(self):
        params = MixtureParams.from_values(0.0, 1e-3, 1.0, 1e-3, 0.5)
        resp = e_step([1e6], params)
        self.assertEqual(resp.abnormal[0], 1.0)

    def test_rows_are_stochastic(self):
        rng = np.random.default_rng(3)
        params = MixtureParams.from_values(0.2, 0.7, -1.0, 4.0, 0.15)
        resp = e_step(rng.normal(0, 5, 1000), params)
        self.assertLessEqual(np.max(np.abs(resp.values.sum(axis=1) - 1.0)), 1e-12)


class MStepTests(SimpleTestCase):

    def test_hard_assignment(self):
        samples = [1.0, 2.0, 3.0, 10.0, 12.0]
        resp = ResponsibilityMatrix(np.array([[1, 0], [1, 0], [1, 0], [0, 1], [0, 1]], dtype=float))
        params = m_step(samples, resp)
        self.assertAlmostEqual(params.normal.mean, 2.0)
        self.assertAlmostEqual(params.abnormal.mean, 11.0)
        self.assertAlmostEqual(params.normal.std_dev, 0.81650, places=5)
        self.assertAlmostEqual(params.abnormal.std_dev, 1.0)
        self.assertAlmostEqual(params.abnormal_weight, 0.4)

    def test_even_split_matches_global_moments(self):
        samples = np.array([0.5, -1.0, 2.0, 4.0, 3.3])
        resp = ResponsibilityMatrix(np.full((5, 2), 0.5))
        params = m_step(samples, resp)
        for component in (params.normal, params.abnormal):
            self.assertAlmostEqual(component.mean, samples.mean(), places=12)
            self.assertAlmostEqual(component.std_dev, samples.std(), places=12)
        self.assertAlmostEqual(params.abnormal_weight, 0.5)

    def test_empty_component(self):
        resp = ResponsibilityMatrix(np.tile([1.0, 0.0], (4, 1)))
        with self.assertRaises(EmptyComponent) as ctx:
            m_step([1.0, 2.0, 3.0, 4.0], resp)
        self.assertEqual(ctx.exception.component, 2)

    def test_floor_applies(self):
        resp = ResponsibilityMatrix(np.array([[1, 0], [1, 0], [0, 1]], dtype=float))
        params = m_step([1.0, 2.0, 7.0], resp, variance_floor=0.25)
        self.assertEqual(params.abnormal.std_dev, 0.25)

    def test_single_iteration_matches_brute_force(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            n = int(rng.integers(3, 21))
            samples = rng.normal(0, 3, n)
            params = MixtureParams.from_values(
                rng.uniform(-1, 1), rng.uniform(0.5, 2), rng.uniform(-3, 3), rng.uniform(1, 5), rng.uniform(0.1, 0.5)
            )
            updated = m_step(samples, e_step(samples, params))
            expected = brute_force_em_step(samples.tolist(), params)
            actual = (
                updated.normal.mean, updated.normal.std_dev,
                updated.abnormal.mean, updated.abnormal.std_dev,
                updated.abnormal_weight,
            )
            np.testing.assert_allclose(actual, expected, rtol=1e-12, atol=1e-14)


def brute_force_em_step(samples, params):
    weights = [1 - params.abnormal_weight, params.abnormal_weight]
    components = [params.normal, params.abnormal]
    rows = []
    for y in samples:
        terms = [
            weights[k] * math.exp(-(y - c.mean) ** 2 / (2 * c.std_dev ** 2)) / (c.std_dev * math.sqrt(2 * math.pi))
            for k, c in enumerate(components)
        ]
        rows.append([t / sum(terms) for t in terms])
    result = []
    for k in range(2):
        total = sum(row[k] for row in rows)
        mean = sum(row[k] * y for row, y in zip(rows, samples)) / total
        variance = sum(row[k] * (y - mean) ** 2 for row, y in zip(rows, samples)) / total
        result.extend([mean, math.sqrt(variance)])
    result.append(sum(row[1] for row in rows) / len(samples))
    return result


class LogLikelihoodTests(SimpleTestCase):

    def test_single_standard_normal_term(self):
        params = MixtureParams.from_values(0.0, 1.0, 4.0, 1.0, 0.0)
        self.assertAlmostEqual(observed_log_likelihood([0.0], params), -0.9189385332046727, places=14)

    def test_duplication_doubles(self):
        rng = np.random.default_rng(5)
        samples = rng.normal(0, 2, 40)
        params = MixtureParams.from_values(0.0, 1.0, 1.0, 3.0, 0.2)
        once = observed_log_likelihood(samples, params)
        twice = observed_log_likelihood(np.concatenate([samples, samples]), params)
        self.assertAlmostEqual(twice, 2 * once, places=9)

    def test_matches_direct_summation(self):
        rng = np.random.default_rng(7)
        samples = rng.normal(0, 2, 100)
        params = MixtureParams.from_values(0.3, 1.2, -1.0, 3.0, 0.25)
        naive = 0.0
        for y in samples:
            naive += math.log(
                0.75 * normal_density(y, params.normal) + 0.25 * normal_density(y, params.abnormal)
            )
        self.assertAlmostEqual(observed_log_likelihood(samples, params) / naive, 1.0, delta=1e-10)


class DefaultInitTests(SimpleTestCase):

    def test_standard_normal_sample(self):
        rng = np.random.default_rng(1)
        params = default_init(rng.normal(0, 1, 5000))
        self.assertAlmostEqual(params.normal.mean, 0.0, delta=0.05)
        self.assertEqual(params.abnormal_weight, 0.05)

    def test_scale_equivariance(self):
        rng = np.random.default_rng(2)
        samples = rng.normal(1.0, 2.0, 300)
        base = default_init(samples)
        scaled = default_init(3.0 * samples)
        self.assertAlmostEqual(scaled.normal.mean, 3.0 * base.normal.mean, places=10)
        self.assertAlmostEqual(scaled.normal.std_dev, 3.0 * base.normal.std_dev, places=10)
        self.assertAlmostEqual(scaled.abnormal.mean, 3.0 * base.abnormal.mean, places=10)
        self.assertAlmostEqual(scaled.abnormal.std_dev, 3.0 * base.abnormal.std_dev, places=10)
        self.assertEqual(scaled.abnormal_weight, base.abnormal_weight)

    def test_identical_values(self):
        with self.assertRaises(DegenerateData):
            default_init([4.2] * 10)

    def test_too_few(self):
        with self.assertRaises(TooFewSamples):
            default_init([1.0, 2.0, 3.0])


class FitEmTests(SimpleTestCase):

    def test_parameter_recovery(self):
        config = FitConfig()
        for seed in range(3):
            rng = np.random.default_rng(seed)
            samples = draw_mixture(rng, 20000, 0.0, 1.0, 5.0, 3.0, 0.05)
            params = fit_em(samples, default_init(samples), config).params
            self.assertAlmostEqual(params.normal.mean, 0.0, delta=0.1)
            self.assertAlmostEqual(params.normal.std_dev, 1.0, delta=0.1)
            self.assertAlmostEqual(params.abnormal_weight, 0.05, delta=0.01)
            # about a thousand abnormal draws: allow ~4 standard errors
            self.assertAlmostEqual(params.abnormal.mean, 5.0, delta=0.4)
            self.assertAlmostEqual(params.abnormal.std_dev, 3.0, delta=0.4)

    def test_log_likelihood_is_monotone(self):
        rng = np.random.default_rng(2024)
        config = FitConfig(max_iterations=200)
        for _ in range(100):
            samples = draw_mixture(
                rng, 500, rng.uniform(-1, 1), rng.uniform(0.5, 2), rng.uniform(-4, 4), rng.uniform(1, 4), rng.uniform(0.05, 0.4)
            )
            init = MixtureParams.from_values(
                rng.uniform(-2, 2), rng.uniform(0.5, 3), rng.uniform(-2, 2), rng.uniform(0.5, 3), rng.uniform(0.05, 0.5)
            )
            result = fit_em(samples, init, config)
            self.assertGreaterEqual(np.min(np.diff(result.loglik_trace)), -1e-9)
            self.assertGreaterEqual(result.params.abnormal_weight, 0.0)
            self.assertLessEqual(result.params.abnormal_weight, 1.0)
            floor = variance_floor(samples, config.variance_floor_factor)
            self.assertGreaterEqual(result.params.normal.std_dev, floor)
            self.assertGreaterEqual(result.params.abnormal.std_dev, floor)

    def test_decrease_warning_uses_absolute_slack(self):
        samples = draw_mixture(np.random.default_rng(4), 200, 0.0, 1.0, 5.0, 2.0, 0.1)
        init = default_init(samples)
        # a drop of 1e-6 on -1e6 is a relative change of only 1e-12
        with mock.patch('apps.mixture.em.observed_log_likelihood', side_effect=[-1e6, -1e6 - 1e-6]):
            with self.assertLogs('apps.mixture.em', 'WARNING') as logs:
                result = fit_em(samples, init, FitConfig())
        self.assertTrue(result.converged)
        self.assertIn('decreased at iteration 1', logs.output[0])

        with mock.patch('apps.mixture.em.observed_log_likelihood', side_effect=[-1e6, -1e6 - 1e-10]):
            with mock.patch('apps.mixture.em.logger') as log:
                fit_em(samples, init, FitConfig())
        log.warning.assert_not_called()

    def test_permutation_invariance(self):
        rng = np.random.default_rng(9)
        samples = draw_mixture(rng, 800, 0.0, 1.0, 4.0, 2.0, 0.1)
        init = default_init(samples)
        config = FitConfig()
        original = fit_em(samples, init, config).params
        shuffled = fit_em(rng.permutation(samples), init, config).params
        self.assertEqual(original, shuffled)

    def test_scale_equivariance(self):
        rng = np.random.default_rng(10)
        samples = draw_mixture(rng, 600, 0.0, 1.0, 3.0, 2.5, 0.1)
        # fixed iteration count so both fits stop at the same step
        config = FitConfig(max_iterations=60, rel_loglik_tolerance=1e-300)
        base = fit_em(samples, default_init(samples), config)
        scaled = fit_em(4.0 * samples, default_init(4.0 * samples), config)
        for a, b in ((base.params.normal, scaled.params.normal), (base.params.abnormal, scaled.params.abnormal)):
            self.assertAlmostEqual(b.mean, 4.0 * a.mean, delta=1e-9 * max(1.0, abs(b.mean)))
            self.assertAlmostEqual(b.std_dev, 4.0 * a.std_dev, delta=1e-9 * max(1.0, b.std_dev))
        self.assertAlmostEqual(base.params.abnormal_weight, scaled.params.abnormal_weight, delta=1e-9)
        np.testing.assert_allclose(base.responsibilities.values, scaled.responsibilities.values, atol=1e-9)

    def test_identical_samples(self):
        init = MixtureParams.from_values(0.0, 1.0, 1.0, 1.0, 0.05)
        with self.assertRaises(DegenerateData):
            fit_em([2.0] * 20, init, FitConfig())

    def test_too_few_samples(self):
        init = MixtureParams.from_values(0.0, 1.0, 1.0, 1.0, 0.05)
        with self.assertRaises(TooFewSamples):
            fit_em([1.0, 2.0, 3.0], init, FitConfig())

    def test_empty_component_reports_iteration(self):
        samples = np.linspace(-1, 1, 50)
        init = MixtureParams.from_values(0.0, 1.0, 1e4, 1e-3, 0.05)
        with self.assertRaises(EmptyComponent) as ctx:
            fit_em(samples, init, FitConfig())
        self.assertEqual(ctx.exception.iteration, 1)

    def test_trace_and_flags(self):
        rng = np.random.default_rng(4)
        samples = draw_mixture(rng, 1000, 0.0, 1.0, 6.0, 2.0, 0.05)
        result = fit_em(samples, default_init(samples), FitConfig())
        self.assertTrue(result.converged)
        self.assertEqual(len(result.loglik_trace), result.iterations_used + 1)
        self.assertEqual(result.responsibilities.rows, 1000)
