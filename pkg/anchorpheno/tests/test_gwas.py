import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from scipy import stats
from scipy.special import expit

from anchorpheno.anchors import PhenotypeKind, PhenotypeVector
from anchorpheno.cohort import GenotypeMatrix, variant_id
from anchorpheno.exceptions import AlignmentError, DegenerateDataError, LabelError, RankDeficientError
from anchorpheno.gwas import (
    TruthCatalog,
    covariate_design,
    ld_expand,
    ld_r2,
    linear_assoc,
    load_sumstats,
    logistic_assoc,
    match_catalog,
    run_gwas,
    save_sumstats,
)

from .utils import random_covariates, random_genotypes, slow


def to_unit_interval(y):
    return (y - y.min()) / (y.max() - y.min())


def continuous(ids, scores):
    return PhenotypeVector(tuple(ids), scores, PhenotypeKind.CONTINUOUS)


def binary(ids, scores):
    return PhenotypeVector(tuple(ids), np.asarray(scores, dtype=float), PhenotypeKind.BINARY)


def genotypes_from(dosages):
    n, m = dosages.shape
    return GenotypeMatrix(
        patient_ids=tuple(f'P{i:05d}' for i in range(n)),
        variant_ids=tuple(variant_id(j, m) for j in range(m)),
        dosages=np.asarray(dosages, dtype=np.int8),
        maf=np.full(m, 0.3),
        causal_effects={},
        ld_blocks=np.arange(m),
    )


def linked_genotypes(n, n_pairs, rng, resample=0.2):
    """Pairs of columns where the second copies the first except for a resampled fraction."""
    columns = []
    for _ in range(n_pairs):
        base = rng.binomial(2, 0.3, size=n)
        partner = np.where(rng.random(n) < resample, rng.binomial(2, 0.3, size=n), base)
        columns += [base, partner]
    return genotypes_from(np.column_stack(columns))


class LinearAssocTests(SimpleTestCase):

    def setUp(self):
        rng = np.random.default_rng(0)
        self.n = 400
        self.covariates = random_covariates(self.n, rng)
        self.genotypes = random_genotypes(self.n, 30, rng)
        g = self.genotypes.dosages[:, 0].astype(float)
        self.y = to_unit_interval(0.3 * g + 0.01 * self.covariates.age + rng.standard_normal(self.n))
        self.phenotype = continuous(self.genotypes.patient_ids, self.y)

    def test_matches_normal_equations(self):
        g = self.genotypes.dosages[:, 0].astype(float)
        X = np.column_stack([np.ones(self.n), g, self.covariates.matrix(10)])
        xtx_inv = np.linalg.inv(X.T @ X)
        coef = xtx_inv @ X.T @ self.y
        resid = self.y - X @ coef
        se = np.sqrt(resid @ resid / (self.n - X.shape[1]) * xtx_inv[1, 1])
        result = linear_assoc(self.phenotype, g, self.covariates)
        np.testing.assert_allclose([result.beta, result.standard_error], [coef[1], se], rtol=1e-8)
        self.assertAlmostEqual(result.p_value, 2 * stats.t.sf(abs(coef[1] / se), self.n - X.shape[1]),
                               delta=1e-10)
        self.assertEqual(result.n_used, self.n)

    def test_scan_matches_single_variant_fits(self):
        gwas = run_gwas(self.phenotype, self.genotypes, self.covariates, alpha=0.05)
        for result in gwas.results[:10]:
            single = linear_assoc(self.phenotype, self.genotypes.column(result.variant_id), self.covariates,
                                  variant_id=result.variant_id)
            np.testing.assert_allclose([result.beta, result.standard_error, result.p_value],
                                       [single.beta, single.standard_error, single.p_value], rtol=1e-8)

    def test_affine_rescaling_keeps_p_values(self):
        shifted = continuous(self.genotypes.patient_ids, 0.2 + 0.5 * self.y)
        first = run_gwas(self.phenotype, self.genotypes, self.covariates)
        second = run_gwas(shifted, self.genotypes, self.covariates)
        np.testing.assert_allclose([r.p_value for r in second.results], [r.p_value for r in first.results],
                                   rtol=1e-8)
        np.testing.assert_allclose([r.beta for r in second.results], [0.5 * r.beta for r in first.results],
                                   rtol=1e-8)

    def test_constant_phenotype_is_flagged(self):
        flat = continuous(self.genotypes.patient_ids, np.full(self.n, 0.4))
        self.assertEqual(linear_assoc(flat, self.genotypes.column(0), self.covariates).flag, 'zero_variance')
        gwas = run_gwas(flat, self.genotypes, self.covariates, alpha=1.0)
        self.assertEqual(len(gwas.flagged()), 30)
        self.assertEqual(gwas.significant, frozenset())

    def test_duplicated_covariate(self):
        pcs = self.covariates.pcs.copy()
        pcs[:, 1] = pcs[:, 0]
        duplicated = type(self.covariates)(self.covariates.patient_ids, self.covariates.sex,
                                           self.covariates.age, pcs)
        with self.assertRaises(RankDeficientError):
            linear_assoc(self.phenotype, self.genotypes.column(0), duplicated)
        with self.assertRaises(RankDeficientError):
            run_gwas(self.phenotype, self.genotypes, duplicated)

    def test_planted_effect_is_recovered(self):
        rng = np.random.default_rng(1)
        n = 10000
        covariates = random_covariates(n, rng)
        genotypes = random_genotypes(n, 21, rng)
        raw = 0.5 * genotypes.dosages[:, 0] + 0.02 * covariates.age + rng.standard_normal(n)
        y = to_unit_interval(raw)
        gwas = run_gwas(continuous(genotypes.patient_ids, y), genotypes, covariates, alpha=5e-8)
        causal = gwas.results[0]
        self.assertEqual(causal.variant_id, genotypes.variant_ids[0])
        self.assertAlmostEqual(causal.beta * (raw.max() - raw.min()), 0.5, delta=0.05)
        self.assertIn(causal.variant_id, gwas.significant)


class LogisticAssocTests(SimpleTestCase):

    def setUp(self):
        rng = np.random.default_rng(2)
        self.n = 2000
        self.covariates = random_covariates(self.n, rng)
        self.genotypes = random_genotypes(self.n, 10, rng)
        self.rng = rng

    def test_one_class(self):
        cases = binary(self.genotypes.patient_ids, np.ones(self.n))
        with self.assertRaises(LabelError):
            logistic_assoc(cases, self.genotypes.column(0), self.covariates)
        gwas = run_gwas(cases, self.genotypes, self.covariates, alpha=1.0)
        self.assertEqual({r.flag for r in gwas.results}, {'one_class'})
        self.assertEqual(gwas.significant, frozenset())

    def test_separation_is_flagged(self):
        g = self.genotypes.column(0)
        separated = binary(self.genotypes.patient_ids, (g >= 1).astype(float))
        result = logistic_assoc(separated, g, self.covariates)
        self.assertEqual(result.flag, 'separation')
        self.assertFalse(result.significant(1.0))

    def test_wald_test_on_a_planted_effect(self):
        g = self.genotypes.column(0).astype(float)
        y = (self.rng.random(self.n) < expit(-1.0 + 0.8 * g)).astype(float)
        result = logistic_assoc(binary(self.genotypes.patient_ids, y), g, self.covariates)
        self.assertEqual(result.flag, '')
        self.assertAlmostEqual(result.beta, 0.8, delta=0.3)
        self.assertAlmostEqual(result.p_value, 2 * stats.norm.sf(abs(result.beta / result.standard_error)),
                               delta=1e-12)
        self.assertLess(result.p_value, 1e-6)


class NullCalibrationTests(SimpleTestCase):

    def test_linear_null_p_values_are_uniform(self):
        rng = np.random.default_rng(3)
        n, m = 1000, 1000
        covariates = random_covariates(n, rng)
        genotypes = random_genotypes(n, m, rng)
        phenotype = continuous(genotypes.patient_ids, rng.random(n))
        p = np.array([r.p_value for r in run_gwas(phenotype, genotypes, covariates).results])
        self.assertLess(stats.kstest(p, 'uniform').statistic, 0.08)
        self.assertTrue(0.03 <= np.mean(p < 0.05) <= 0.07)

    def test_logistic_null_p_values_are_uniform(self):
        rng = np.random.default_rng(4)
        n, m = 1000, 600
        covariates = random_covariates(n, rng)
        genotypes = random_genotypes(n, m, rng)
        phenotype = binary(genotypes.patient_ids, rng.random(n) < 0.3)
        p = np.array([r.p_value for r in run_gwas(phenotype, genotypes, covariates).results])
        self.assertLess(stats.kstest(p, 'uniform').statistic, 0.08)


class RunGwasTests(SimpleTestCase):

    def setUp(self):
        rng = np.random.default_rng(5)
        self.n = 300
        self.covariates = random_covariates(self.n, rng)
        self.genotypes = random_genotypes(self.n, 15, rng)
        g = self.genotypes.dosages[:, 3]
        self.phenotype = continuous(self.genotypes.patient_ids, to_unit_interval(g + rng.standard_normal(self.n)))

    def test_alpha_bounds_and_monotonicity(self):
        gwas = run_gwas(self.phenotype, self.genotypes, self.covariates)
        self.assertEqual(gwas.with_alpha(1.0).significant, frozenset(self.genotypes.variant_ids))
        self.assertEqual(gwas.with_alpha(0.0).significant, frozenset())
        previous = frozenset()
        for alpha in (1e-10, 1e-5, 0.01, 0.5):
            current = gwas.with_alpha(alpha).significant
            self.assertTrue(previous <= current)
            previous = current

    def test_results_sorted_by_variant(self):
        gwas = run_gwas(self.phenotype, self.genotypes, self.covariates)
        ids = [r.variant_id for r in gwas.results]
        self.assertEqual(ids, sorted(ids))
        panel = run_gwas(self.phenotype, self.genotypes, self.covariates,
                         variants=[self.genotypes.variant_ids[5], self.genotypes.variant_ids[1]])
        self.assertEqual([r.variant_id for r in panel.results], sorted(self.genotypes.variant_ids[i] for i in (1, 5)))

    def test_misaligned_patients(self):
        reordered = continuous(tuple(reversed(self.phenotype.patient_ids)), self.phenotype.scores)
        with self.assertRaises(AlignmentError):
            run_gwas(reordered, self.genotypes, self.covariates)

    def test_covariate_design_columns(self):
        design = covariate_design(self.covariates, n_pcs=4)
        self.assertEqual(design.shape, (self.n, 7))
        np.testing.assert_array_equal(design[:, 0], 1.0)

    def test_sumstats_file(self):
        gwas = run_gwas(self.phenotype, self.genotypes, self.covariates, alpha=1e-3)
        with tempfile.TemporaryDirectory() as tmp:
            loaded = load_sumstats(save_sumstats(gwas, Path(tmp) / 'sumstats.tsv'), alpha=1e-3)
        self.assertEqual(loaded.significant, gwas.significant)
        np.testing.assert_array_equal([r.p_value for r in loaded.results], [r.p_value for r in gwas.results])

    @slow
    def test_power_grows_with_effect_size(self):
        rng = np.random.default_rng(6)
        n = 3000
        covariates = random_covariates(n, rng)
        power = []
        for effect in (0.05, 0.15):
            hits = 0
            for _ in range(50):
                genotypes = random_genotypes(n, 1, rng)
                y = to_unit_interval(effect * genotypes.dosages[:, 0] + rng.standard_normal(n))
                gwas = run_gwas(continuous(genotypes.patient_ids, y), genotypes, covariates, alpha=1e-3)
                hits += len(gwas.significant)
            power.append(hits / 50)
        self.assertLess(power[0], power[1])
        self.assertGreater(power[1], 0.8)


class LinkageTests(SimpleTestCase):

    def test_r2_examples(self):
        genotypes = genotypes_from(np.array([[0, 0, 2, 0], [1, 0, 1, 0], [2, 2, 0, 0], [0, 2, 2, 0]]))
        self.assertAlmostEqual(ld_r2(genotypes, 0, 0), 1.0, delta=1e-12)
        self.assertAlmostEqual(ld_r2(genotypes, 0, 2), ld_r2(genotypes, 2, 0), delta=1e-15)
        a = genotypes_from(np.array([[0, 0], [0, 2], [2, 0], [2, 2]]))
        self.assertAlmostEqual(ld_r2(a, 0, 1), 0.0, delta=1e-15)
        flipped = genotypes_from(np.array([[0, 2], [1, 1], [2, 0], [1, 1]]))
        self.assertAlmostEqual(ld_r2(flipped, flipped.variant_ids[0], flipped.variant_ids[1]), 1.0, delta=1e-12)
        with self.assertRaises(DegenerateDataError):
            ld_r2(genotypes, 0, 3)

    def test_expand_matches_pairwise_search(self):
        rng = np.random.default_rng(7)
        genotypes = linked_genotypes(300, 6, rng)
        seed_set = {genotypes.variant_ids[0], genotypes.variant_ids[5], genotypes.variant_ids[8]}
        expected = set(seed_set)
        for v in seed_set:
            for w in genotypes.variant_ids:
                if ld_r2(genotypes, v, w) > 0.5:
                    expected.add(w)
        self.assertEqual(ld_expand(seed_set, genotypes, 0.5), frozenset(expected))
        self.assertIn(genotypes.variant_ids[1], expected)
        self.assertEqual(ld_expand(set(), genotypes), frozenset())

    def test_threshold_above_one_keeps_the_input(self):
        genotypes = linked_genotypes(200, 3, np.random.default_rng(8))
        self.assertEqual(ld_expand({genotypes.variant_ids[2]}, genotypes, 1.0), {genotypes.variant_ids[2]})


class CatalogMatchTests(SimpleTestCase):

    def setUp(self):
        rng = np.random.default_rng(9)
        self.genotypes = linked_genotypes(500, 3, rng, resample=0.0)
        self.ids = self.genotypes.variant_ids
        self.catalog = TruthCatalog(frozenset({self.ids[0]}))

    def test_linked_hit_counts_as_a_match(self):
        match = match_catalog({self.ids[1]}, self.catalog, self.genotypes)
        self.assertEqual((match.matched_count, match.proportion), (1, 1.0))
        self.assertEqual((match.n_significant, match.n_significant_matched, match.catalog_size), (1, 1, 1))

    def test_unlinked_hit_is_not_a_match(self):
        match = match_catalog({self.ids[4]}, self.catalog, self.genotypes)
        self.assertEqual((match.matched_count, match.proportion, match.n_significant_matched), (0, 0.0, 0))

    def test_no_significant_variants(self):
        match = match_catalog(set(), self.catalog, self.genotypes)
        self.assertEqual((match.matched_count, match.n_significant), (0, 0))

    def test_catalog_from_planted_variants(self):
        genotypes = GenotypeMatrix(self.genotypes.patient_ids, self.ids, self.genotypes.dosages,
                                   self.genotypes.maf, {self.ids[2]: 0.5}, self.genotypes.ld_blocks)
        self.assertEqual(TruthCatalog.from_genotypes(genotypes).variant_ids, frozenset(self.ids[2:4]))

    def test_catalog_must_fit_the_genotypes(self):
        with self.assertRaises(AlignmentError):
            match_catalog(set(), TruthCatalog(frozenset({'v9999'})), self.genotypes)
