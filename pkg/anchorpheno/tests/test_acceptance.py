"""
Directional experiments on desk-scale cohorts.

These take minutes to hours on a laptop CPU and only run with
ANCHORPHENO_SLOW_TESTS=1.
"""

import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
from django.conf import settings
from django.test import SimpleTestCase

from anchorpheno.classifiers import TransformerConfig
from anchorpheno.cohort import GeneratorConfig
from anchorpheno.harness import (
    ExperimentConfig,
    run_ablation,
    run_classifier_comparison,
    run_full_pipeline,
    run_noise_sweep,
)

from .utils import slow

TRANSFORMER = TransformerConfig(hidden_size=32, n_heads=4, intermediate_size=64, max_len=64, learning_rate=1e-3,
                                batch_size=64, n_epochs=10)


def xor_cohort(**overrides):
    """The anchor follows the exclusive-or of two codes; no other code carries signal."""
    values = dict(n_patients=3000, n_variants=20, causal_effects=(0.3,), prevalence=0.3, comorbidities=(),
                  interaction_codes=('X01', 'X02'), interaction_strength=1.0, n_background_codes=60)
    values.update(overrides)
    return GeneratorConfig(**values)


def genetic_cohort(**overrides):
    values = dict(n_patients=5000, n_variants=200, causal_effects=(0.8, 0.8, 0.8), prevalence=0.2,
                  anchor_sensitivity=0.7)
    values.update(overrides)
    return GeneratorConfig(**values)


@slow
class ClassifierComparisonAcceptance(SimpleTestCase):

    def test_null_cohort_gives_chance_auroc(self):
        cohort = GeneratorConfig(n_patients=5000, n_variants=20, causal_effects=(0.3,), comorbidities=())
        config = ExperimentConfig(cohort=cohort, transformer=TRANSFORMER, models=('anchorbert', 'anchor-lr'),
                                  repeats=3)
        summary = run_classifier_comparison(config)['summary']
        for value in summary['test_auroc_mean']:
            self.assertTrue(0.45 <= value <= 0.55, value)

    def test_transformer_learns_an_interaction_logistic_cannot(self):
        config = ExperimentConfig(cohort=xor_cohort(), transformer=TRANSFORMER,
                                  models=('anchorbert', 'anchor-lr'), repeats=10)
        summary = run_classifier_comparison(config)['summary'].set_index('model')
        gap = summary.loc['anchorbert', 'test_auprc_mean'] - summary.loc['anchor-lr', 'test_auprc_mean']
        self.assertGreater(gap, 0.05)

    def test_transformer_stays_ahead_under_label_noise(self):
        config = ExperimentConfig(cohort=xor_cohort(), transformer=TRANSFORMER,
                                  models=('anchorbert', 'anchor-lr'), repeats=5,
                                  noise_proportions=(0.0, 0.2, 0.4, 0.6, 0.8))
        summary = run_noise_sweep(config)['summary']
        medians = summary.pivot(index='noise', columns='model', values='val_auprc_median')
        for noise in (0.0, 0.2, 0.4, 0.6):
            self.assertGreater(medians.loc[noise, 'anchorbert'], medians.loc[noise, 'anchor-lr'], noise)
        for model in ('anchorbert', 'anchor-lr'):
            self.assertLessEqual(medians.loc[0.8, model], medians.loc[0.0, model])


@slow
class AblationAcceptance(SimpleTestCase):

    def test_anchor_models_survive_removal_of_every_anchor_case(self):
        base = ExperimentConfig(cohort=genetic_cohort(), models=('anchor-lr', 'threshold-1'), repeats=1,
                                alpha=1e-5, ablation_proportions=(1.0,), joint_ablation_proportions=(0.0,))
        survived = 0
        for seed in range(10):
            runs = run_ablation(replace(base, seed=seed))['runs']
            cases = runs[runs['regime'] == 'cases'].set_index('model')
            self.assertEqual(cases.loc['threshold-1', 'retention'], 0.0)
            survived += cases.loc['anchor-lr', 'retention'] > 0.0
        self.assertGreaterEqual(survived, 7)


@slow
class PipelineAcceptance(SimpleTestCase):

    def matched_counts(self, cohort, seeds):
        counts = {'anchorbert': [], 'threshold-1': []}
        for seed in seeds:
            config = ExperimentConfig(cohort=cohort, transformer=TRANSFORMER, models=tuple(counts), alpha=1e-5,
                                      seed=seed)
            table = run_full_pipeline(config)['catalog_comparison'].set_index('model')
            for model in counts:
                counts[model].append(table.loc[model, 'matched_count'])
        return {model: float(np.median(values)) for model, values in counts.items()}

    def test_anchor_model_gains_power_under_missed_diagnoses(self):
        medians = self.matched_counts(genetic_cohort(anchor_sensitivity=0.7), range(10))
        self.assertGreaterEqual(medians['anchorbert'], medians['threshold-1'])

    def test_no_gain_without_missed_diagnoses(self):
        medians = self.matched_counts(genetic_cohort(anchor_sensitivity=1.0), range(5))
        self.assertEqual(medians['anchorbert'], medians['threshold-1'])

    def test_default_config_end_to_end(self):
        config = ExperimentConfig.from_file(Path(settings.BASE_DIR) / 'configs' / 'default.json')
        with tempfile.TemporaryDirectory() as tmp:
            table = run_full_pipeline(config, tmp)['catalog_comparison']
            for model in config.models:
                self.assertTrue((Path(tmp) / f'phenotype_{model}.tsv').exists())
                self.assertTrue((Path(tmp) / f'sumstats_{model}.tsv').exists())
        self.assertEqual(table['model'].tolist(), list(config.models))
