import math

import numpy as np
from django.test import SimpleTestCase
from numpy import testing as npt

from cria.evaluation import (LEVELS, NOISE_KINDS, NoiseLevels, NoiseSpec, auroc, balanced_accuracy, cohens_kappa,
                             inject_noise, make_report, mask_mi_inequality_check, mi_estimate_discrete,
                             mi_standard_error, pr_auc, weighted_f1)
from cria.exceptions import EmptyTableError, NoiseSpecError, UndefinedMetricError
from cria.records import EegSlice


def pair_count_auroc(scores, labels):
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def naive_mi(table):
    p = table / table.sum()
    pa, px = p.sum(axis=1), p.sum(axis=0)
    return sum(p[i, j] * math.log(p[i, j] / (pa[i] * px[j]))
               for i in range(p.shape[0]) for j in range(p.shape[1]) if p[i, j] > 0)


class ClassificationMetricTests(SimpleTestCase):

    def test_balanced_accuracy(self):
        self.assertEqual(balanced_accuracy([0, 1, 2], [0, 1, 2]), 1.0)
        labels = [1] * 50 + [0] * 50
        preds = [1] * 40 + [0] * 10 + [0] * 30 + [1] * 20
        self.assertAlmostEqual(balanced_accuracy(preds, labels), 0.7, delta=1e-12)

    def test_constant_predictor(self):
        self.assertAlmostEqual(balanced_accuracy([1] * 10, [0] * 3 + [1] * 7), 0.5, delta=1e-12)

    def test_auroc_hand_case(self):
        self.assertEqual(auroc([0.1, 0.9], [0, 1]), 1.0)
        self.assertAlmostEqual(auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]), 0.75, delta=1e-12)

    def test_auroc_pair_count_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            y = rng.integers(0, 2, 200)
            y[:2] = [0, 1]
            s = np.round(rng.normal(size=200) + 0.5 * y, 1)          # округление даёт ничьи
            self.assertAlmostEqual(auroc(s, y), pair_count_auroc(s, y), delta=1e-12)

    def test_auroc_random_scores(self):
        rng = np.random.default_rng(1)
        self.assertAlmostEqual(auroc(rng.random(10_000), rng.integers(0, 2, 10_000)), 0.5, delta=0.02)

    def test_auroc_binary_proba_columns(self):
        p1 = np.array([0.2, 0.7, 0.4, 0.9])
        y = np.array([0, 1, 0, 1])
        self.assertEqual(auroc(np.stack([1 - p1, p1], axis=1), y), auroc(p1, y))

    def test_auroc_single_class(self):
        with self.assertRaises(UndefinedMetricError):
            auroc([0.1, 0.2], [1, 1])
        with self.assertRaises(UndefinedMetricError):
            pr_auc([0.1, 0.2], [0, 0])

    def test_pr_auc_perfect(self):
        self.assertEqual(pr_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]), 1.0)

    def test_kappa(self):
        self.assertEqual(cohens_kappa([0, 1, 1, 0], [0, 1, 1, 0]), 1.0)
        labels = [0] * 25 + [1] * 25
        preds = [0] * 20 + [1] * 5 + [0] * 10 + [1] * 15
        self.assertAlmostEqual(cohens_kappa(preds, labels), 0.4, delta=1e-12)

    def test_kappa_independent(self):
        rng = np.random.default_rng(2)
        self.assertAlmostEqual(cohens_kappa(rng.integers(0, 3, 20_000), rng.integers(0, 3, 20_000)), 0.0,
                               delta=0.02)

    def test_kappa_undefined(self):
        with self.assertRaises(UndefinedMetricError):
            cohens_kappa([1, 1, 1], [1, 1, 1])

    def test_weighted_f1(self):
        self.assertEqual(weighted_f1([0, 1, 2, 2], [0, 1, 2, 2]), 1.0)

    def test_empty(self):
        with self.assertRaises(UndefinedMetricError):
            balanced_accuracy([], [])


class ReportTests(SimpleTestCase):

    def test_multiclass_report(self):
        proba = np.array([[0.8, 0.1, 0.1], [0.1, 0.8, 0.1], [0.1, 0.1, 0.8], [0.6, 0.3, 0.1]])
        report = make_report(proba, [0, 1, 2, 1], 3)
        self.assertEqual(report.n, 4)
        self.assertEqual(report.confusion_matrix, [[1, 0, 0], [1, 1, 0], [0, 0, 1]])
        self.assertAlmostEqual(report.bacc, (1 + 0.5 + 1) / 3, delta=1e-12)
        self.assertEqual(set(report.as_row()), {'bacc', 'auroc', 'pr_auc', 'kappa', 'f1_weighted', 'n'})

    def test_undefined_metric_becomes_nan(self):
        proba = np.array([[0.3, 0.7], [0.4, 0.6]])
        with self.assertLogs('cria.evaluation', 'WARNING'):
            report = make_report(proba, [1, 1], 2)
        self.assertTrue(math.isnan(report.auroc))
        self.assertEqual(report.bacc, 1.0)


class NoiseTests(SimpleTestCase):

    def setUp(self):
        rng = np.random.default_rng(0)
        self.slice = EegSlice(['A', 'B'], rng.normal(size=(2, 20_000)), label=1)

    def test_zero_amount_is_identity(self):
        for kind in NOISE_KINDS:
            with self.subTest(kind=kind):
                out = inject_noise(self.slice, NoiseSpec(kind, 'low', amount=0.0))
                npt.assert_array_equal(out.data, self.slice.data)
                out = inject_noise(self.slice, NoiseSpec(kind, 'none'))
                npt.assert_array_equal(out.data, self.slice.data)
                self.assertEqual(out.label, 1)

    def test_full_dropout(self):
        npt.assert_array_equal(inject_noise(self.slice, NoiseSpec('dropout', amount=1.0)).data, 0.0)

    def test_gaussian_variance(self):
        out = inject_noise(self.slice, NoiseSpec('gaussian', 'mid', seed=3)).data
        ratio = np.var(out) / np.var(self.slice.data)
        self.assertAlmostEqual(ratio, 1.0 + 0.3 ** 2 / np.var(self.slice.data), delta=0.02)
        self.assertAlmostEqual(float(np.var(out - self.slice.data)), 0.09, delta=0.09 * 0.03)

    def test_impulse_values(self):
        out = inject_noise(self.slice, NoiseSpec('impulse', 'high', seed=4)).data
        hit = out != self.slice.data
        self.assertTrue(hit.any())
        npt.assert_array_equal(np.abs(out[hit]), 8.0)
        self.assertAlmostEqual(hit.mean(), 0.01, delta=0.003)

    def test_sine_tone(self):
        out = inject_noise(self.slice, NoiseSpec('sinusoidal_50hz', 'high', seed=5)).data
        diff = out[0] - self.slice.data[0]
        spectrum = np.abs(np.fft.rfft(diff))
        freqs = np.fft.rfftfreq(diff.size, 1 / 200.0)
        self.assertEqual(freqs[spectrum.argmax()], 50.0)
        self.assertAlmostEqual(float(spectrum.max()), 0.5 * diff.size / 2, delta=1e-6 * diff.size)

    def test_deterministic(self):
        a = inject_noise(self.slice, NoiseSpec('gaussian', 'low', seed=7)).data
        b = inject_noise(self.slice, NoiseSpec('gaussian', 'low', seed=7)).data
        c = inject_noise(self.slice, NoiseSpec('gaussian', 'low', seed=8)).data
        npt.assert_array_equal(a, b)
        self.assertFalse(np.array_equal(a, c))

    def test_unknown_kind_or_level(self):
        with self.assertRaises(NoiseSpecError):
            NoiseSpec('pink')
        with self.assertRaises(NoiseSpecError):
            NoiseSpec('gaussian', 'extreme')

    def test_levels_table(self):
        self.assertEqual(LEVELS, ('none', 'low', 'mid', 'high'))
        self.assertEqual(NoiseLevels().resolve('impulse', 'mid'), (0.005, 5.0))
        self.assertEqual(NoiseLevels().resolve('gaussian', 'none'), (0.0, 0.0))

    def test_level_validation(self):
        NoiseLevels(gaussian=(0.0, 0.0, 0.0), sine=(0.0, 0.0, 0.0))
        with self.assertRaises(NoiseSpecError):
            NoiseLevels(gaussian=(0.5, 0.3, 0.1))
        with self.assertRaises(NoiseSpecError):
            NoiseLevels(dropout=(0.1, 0.2))


class MutualInformationTests(SimpleTestCase):

    def test_independent_table(self):
        self.assertAlmostEqual(mi_estimate_discrete(np.ones((3, 4))), 0.0, delta=1e-12)

    def test_diagonal(self):
        self.assertAlmostEqual(mi_estimate_discrete(np.eye(2)), math.log(2.0), delta=1e-12)

    def test_against_direct_sum(self):
        table = np.random.default_rng(0).integers(0, 20, (4, 4)).astype(float)
        self.assertAlmostEqual(mi_estimate_discrete(table), naive_mi(table), delta=1e-12)

    def test_standard_error(self):
        self.assertEqual(mi_standard_error(np.ones((2, 2))), 0.0)
        self.assertGreater(mi_standard_error(np.array([[30.0, 10.0], [5.0, 40.0]])), 0.0)

    def test_bad_tables(self):
        for table in (np.zeros((2, 2)), np.array([[1.0, -1.0], [0.0, 2.0]]), np.ones(3)):
            with self.assertRaises(EmptyTableError):
                mi_estimate_discrete(table)

    def test_identity_mask(self):
        report = mask_mi_inequality_check(n_trials=5, n_samples=10_000, keep=1.0)
        self.assertEqual(report.passes, 5)
        self.assertEqual(report.mean_mi, report.mean_mi_masked)

    def test_zero_mask(self):
        report = mask_mi_inequality_check(n_trials=5, n_samples=10_000, keep=0.0)
        self.assertAlmostEqual(report.mean_mi_masked, 0.0, delta=1e-12)
        self.assertAlmostEqual(report.mean_mi, math.log(4.0), delta=1e-3)

    def test_bernoulli_mask_never_adds_information(self):
        report = mask_mi_inequality_check(n_trials=100, n_samples=100_000, keep=0.5, seed=1)
        self.assertGreaterEqual(report.passes, 99)
        self.assertLess(report.mean_mi_masked, report.mean_mi)

    def test_alphabet_limit(self):
        with self.assertRaises(ValueError):
            mask_mi_inequality_check(n_trials=1, states=9)
