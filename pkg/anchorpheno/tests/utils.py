"""Small cohorts and configs shared by the test modules."""

import unittest

import numpy as np
from decouple import config

from anchorpheno.cohort import CovariateTable, GeneratorConfig, GenotypeMatrix, PatientRecord, variant_id
from anchorpheno.harness import ExperimentConfig

slow = unittest.skipUnless(
    config('ANCHORPHENO_SLOW_TESTS', default=False, cast=bool),
    'set ANCHORPHENO_SLOW_TESTS=1 to run the acceptance experiments',
)


def tiny_cohort(**overrides):
    values = dict(
        n_patients=600,
        n_variants=20,
        causal_effects=(0.6, 0.6),
        prevalence=0.3,
        anchor_sensitivity=0.7,
        n_background_codes=40,
        mean_visits=4.0,
    )
    values.update(overrides)
    return GeneratorConfig(**values)


def tiny_experiment(**overrides):
    values = dict(
        cohort=tiny_cohort(),
        models=('anchor-lr', 'pheprob', 'threshold-1', 'threshold-2'),
        repeats=2,
        alpha=1e-3,
        noise_proportions=(0.0, 0.4),
        ablation_proportions=(0.0, 1.0),
        joint_ablation_proportions=(0.0, 0.5),
    )
    values.update(overrides)
    return ExperimentConfig(**values)


def record(patient_id, *visits):
    return PatientRecord(patient_id, tuple(frozenset(v) for v in visits))


def random_covariates(n, rng, n_pcs=10):
    ids = tuple(f'P{i:05d}' for i in range(n))
    return CovariateTable(
        patient_ids=ids,
        sex=rng.integers(0, 2, size=n).astype(np.int8),
        age=rng.uniform(40.0, 70.0, size=n),
        pcs=rng.standard_normal((n, n_pcs)),
    )


def random_genotypes(n, m, rng, maf=0.3, causal_effects=None):
    ids = tuple(f'P{i:05d}' for i in range(n))
    return GenotypeMatrix(
        patient_ids=ids,
        variant_ids=tuple(variant_id(j, m) for j in range(m)),
        dosages=rng.binomial(2, maf, size=(n, m)).astype(np.int8),
        maf=np.full(m, maf),
        causal_effects=causal_effects or {},
        ld_blocks=np.arange(m),
    )
