"""
End-to-end experiments on synthetic cohorts.

``run_classifier_comparison``  anchor classifiers, test AUROC/AUPRC over seeds
``run_noise_sweep``            validation AUPRC as anchor positives are hidden
``run_ablation``               catalog retention as patients are removed
``run_full_pipeline``          catalog reproduction per phenotype model

Each experiment returns a dict of tables (pandas DataFrames); every row carries
the seed and the config hash that produced it.
"""

import hashlib
import json
import logging
import re
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .anchors import (
    AnchorSpec,
    anchor_counts,
    inject_label_noise,
    label_anchor,
    phenotype_from_scores,
    save_phenotype,
    threshold_phenotype,
)
from .classifiers import (
    CountFeaturizer,
    LogisticConfig,
    TransformerConfig,
    predict,
    train_logistic,
    train_transformer,
)
from .cohort import (
    GeneratorConfig,
    build_vocabulary,
    generate_cohort,
    genotype_metadata_path,
    load_cohort,
    load_covariates,
    load_genotypes,
    save_cohort,
    save_covariates,
    save_genotypes,
    save_truth,
)
from .exceptions import AlignmentError, ExperimentConfigError, InsufficientSamplesError
from .formats import write_table
from .gwas import TruthCatalog, match_catalog, run_gwas, save_catalog, save_sumstats
from .metrics import auroc, average_precision
from .pheprob import fit_binomial_mixture, pheprob_phenotype

logger = logging.getLogger(__name__)

ANCHORBERT = "anchorbert"
ANCHOR_LR = "anchor-lr"
PHEPROB = "pheprob"
CLASSIFIER_MODELS = (ANCHORBERT, ANCHOR_LR)
THRESHOLD_PATTERN = re.compile(r"^threshold-([1-9][0-9]*)$")
DEFAULT_MODELS = (ANCHORBERT, ANCHOR_LR, PHEPROB, "threshold-1", "threshold-2", "threshold-3")

COHORT_FILE = "cohort.tsv"
GENOTYPE_FILE = "genotypes.tsv"
TRUTH_FILE = "truth.tsv"
COVARIATE_FILE = "covariates.tsv"
CATALOG_FILE = "catalog.tsv"


def check_model_name(name):
    if name in (ANCHORBERT, ANCHOR_LR, PHEPROB) or THRESHOLD_PATTERN.match(name):
        return name
    raise ExperimentConfigError(f"unknown model {name!r}; expected anchorbert, anchor-lr, pheprob or threshold-<k>")


def _proportions(values, what):
    values = tuple(float(v) for v in values)
    if any(not 0.0 <= v <= 1.0 for v in values):
        raise ExperimentConfigError(f"{what} must lie in [0, 1]")
    return values


def read_config_data(path):
    """The JSON object stored in an experiment config file."""
    try:
        with open(path, encoding="utf-8") as handle:
            data = json.load(handle)
    except json.JSONDecodeError as exc:
        raise ExperimentConfigError(f"invalid JSON in {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ExperimentConfigError(f"{path} must hold a JSON object")
    return data


@dataclass(frozen=True)
class ExperimentConfig:
    cohort: GeneratorConfig = field(default_factory=GeneratorConfig)
    transformer: TransformerConfig = field(default_factory=TransformerConfig)
    logistic: LogisticConfig = field(default_factory=LogisticConfig)
    split: tuple = (0.6, 0.2, 0.2)
    models: tuple = DEFAULT_MODELS
    anchor: str = ""
    noise_proportions: tuple = (0.0, 0.2, 0.4, 0.6, 0.8)
    ablation_proportions: tuple = (0.0, 0.25, 0.5, 0.75, 0.9, 1.0)
    joint_ablation_proportions: tuple = (0.0, 0.25, 0.5, 0.75, 0.9)
    repeats: int = 10
    alpha: float = 5e-8
    r2_threshold: float = 0.5
    n_pcs: int = 10
    c: float = 1.0
    min_frequency_fraction: float = 1e-4
    pheprob_restarts: int = 5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "split", tuple(float(v) for v in self.split))
        object.__setattr__(self, "models", tuple(check_model_name(m) for m in self.models))
        object.__setattr__(self, "noise_proportions", _proportions(self.noise_proportions, "noise proportions"))
        object.__setattr__(self, "ablation_proportions",
                           _proportions(self.ablation_proportions, "ablation proportions"))
        object.__setattr__(self, "joint_ablation_proportions",
                           _proportions(self.joint_ablation_proportions, "ablation proportions"))
        if len(self.split) != 3 or min(self.split) <= 0.0 or not np.isclose(sum(self.split), 1.0):
            raise ExperimentConfigError("split ratios must be three positive numbers summing to 1")
        if self.repeats < 1:
            raise ExperimentConfigError("repeats must be at least 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ExperimentConfigError("alpha must lie in [0, 1]")
        if not 0 <= self.n_pcs <= 10:
            raise ExperimentConfigError("n_pcs must lie between 0 and 10")
        if not 0.0 < self.c <= 1.0:
            raise ExperimentConfigError("c must lie in (0, 1]")

    @property
    def anchor_spec(self):
        return AnchorSpec.parse(self.anchor) if self.anchor else AnchorSpec(frozenset(self.cohort.anchor_codes))

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ExperimentConfigError(f"unknown experiment settings: {sorted(unknown)}")
        if "cohort" in data:
            data["cohort"] = GeneratorConfig.from_dict(data["cohort"])
        if "transformer" in data:
            data["transformer"] = TransformerConfig.from_dict(data["transformer"])
        if "logistic" in data:
            try:
                data["logistic"] = LogisticConfig(**data["logistic"])
            except TypeError as exc:
                raise ExperimentConfigError(f"invalid logistic settings: {exc}") from exc
        return cls(**data)

    @classmethod
    def from_file(cls, path):
        return cls.from_dict(read_config_data(path))

    def to_dict(self):
        data = asdict(self)
        data["cohort"] = self.cohort.to_dict()
        return json.loads(json.dumps(data))

    def config_hash(self):
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]

    def with_overrides(self, seed=None, alpha=None, r2_threshold=None):
        changes = {}
        if seed is not None:
            changes["seed"] = seed
        if alpha is not None:
            changes["alpha"] = alpha
        if r2_threshold is not None:
            changes["r2_threshold"] = r2_threshold
        return replace(self, **changes) if changes else self


# ============================================
# Shared preparation
# ============================================

def split_indices(n, ratios, seed):
    """Random train/validation/test index arrays in the given ratios."""
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    return (np.sort(order[:n_train]), np.sort(order[n_train:n_train + n_val]),
            np.sort(order[n_train + n_val:]))


@dataclass
class Workbench:
    """A cohort with its anchor labels, vocabulary and splits. Latent truth is kept out."""

    config: ExperimentConfig
    records: list
    genotypes: object
    covariates: object
    anchor: AnchorSpec
    labels: object
    vocab: object
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray

    def records_at(self, rows):
        return [self.records[i] for i in rows]

    def resplit(self, seed):
        """The same cohort with splits (and the training vocabulary) drawn from ``seed``."""
        return workbench_from_cohort(self.config, self.records, self.genotypes, self.covariates, split_seed=seed)


def prepare(config: ExperimentConfig):
    """Generate the cohort; returns the workbench and, separately, its truth."""
    records, truth, genotypes, covariates = generate_cohort(config.cohort, config.seed)
    return workbench_from_cohort(config, records, genotypes, covariates), truth


def workbench_from_cohort(config, records, genotypes, covariates, split_seed=None) -> Workbench:
    if not records:
        raise InsufficientSamplesError("the cohort has no patients")
    anchor = config.anchor_spec
    split_seed = config.seed if split_seed is None else split_seed
    train, validation, test = split_indices(len(records), config.split, split_seed)
    vocab = build_vocabulary([records[i] for i in train], config.min_frequency_fraction,
                             forced_codes=sorted(anchor.codes))
    return Workbench(config, records, genotypes, covariates, anchor, label_anchor(records, anchor),
                     vocab, train, validation, test)


def write_cohort_files(config: ExperimentConfig, out_dir):
    """Generate the configured cohort and write it with its truth catalog."""
    out_dir = Path(out_dir)
    records, truth, genotypes, covariates = generate_cohort(config.cohort, config.seed)
    catalog = TruthCatalog.from_genotypes(genotypes, config.r2_threshold)
    return [
        save_cohort(records, out_dir / COHORT_FILE),
        save_genotypes(genotypes, out_dir / GENOTYPE_FILE),
        genotype_metadata_path(out_dir / GENOTYPE_FILE),
        save_truth(truth, out_dir / TRUTH_FILE),
        save_covariates(covariates, out_dir / COVARIATE_FILE),
        save_catalog(catalog, out_dir / CATALOG_FILE),
    ]


def read_workbench(config: ExperimentConfig, cohort_dir) -> Workbench:
    """Workbench over cohort files written by ``write_cohort_files``."""
    cohort_dir = Path(cohort_dir)
    return workbench_from_cohort(
        config,
        load_cohort(cohort_dir / COHORT_FILE),
        load_genotypes(cohort_dir / GENOTYPE_FILE),
        load_covariates(cohort_dir / COVARIATE_FILE),
    )


def fit_classifier(name, bench: Workbench, train_labels, seed):
    """Train one anchor classifier on the training split."""
    config = bench.config
    train_records = bench.records_at(bench.train)
    if name == ANCHOR_LR:
        featurizer = CountFeaturizer.fit(train_records, bench.vocab, bench.anchor)
        return train_logistic(featurizer.transform(train_records), train_labels, l2=config.logistic.l2,
                              tol=config.logistic.tol, max_iter=config.logistic.max_iter)
    if name == ANCHORBERT:
        return train_transformer(
            train_records, train_labels, bench.vocab, bench.anchor, replace(config.transformer, seed=seed),
            validation_records=bench.records_at(bench.validation),
            validation_labels=bench.labels.subset(bench.validation),
        )
    raise ExperimentConfigError(f"{name} is not an anchor classifier")


def score_phenotype(name, bench: Workbench, classifier=None):
    """Phenotype over the whole cohort for one roster model."""
    match = THRESHOLD_PATTERN.match(name)
    if match:
        return threshold_phenotype(bench.records, bench.anchor, int(match.group(1)))
    if name == PHEPROB:
        totals = np.array([r.n_codes for r in bench.records])
        counts = anchor_counts(bench.records, bench.anchor)
        params = fit_binomial_mixture(totals, counts, seed=bench.config.seed,
                                      n_restarts=bench.config.pheprob_restarts)
        return pheprob_phenotype(params, totals, counts, [r.patient_id for r in bench.records])
    if classifier is None:
        raise ExperimentConfigError(f"{name} needs a trained classifier")
    scores = predict(classifier, bench.records, bench.vocab)
    return phenotype_from_scores(scores, bench.labels, bench.config.c)


def evaluate_against_truth(phenotype, truth):
    """AUROC of a phenotype against the latent disease labels."""
    if tuple(phenotype.patient_ids) != tuple(truth.patient_ids):
        raise AlignmentError("phenotype and truth list different patients")
    return auroc(phenotype.scores, truth.y)


def _stamp(frame, config):
    frame.insert(0, "config_hash", config.config_hash())
    frame.insert(0, "seed", config.seed)
    return frame


def _classifier_models(config):
    models = [m for m in config.models if m in CLASSIFIER_MODELS]
    if not models:
        raise ExperimentConfigError("the model roster has no anchor classifier")
    return models


def _evaluate_classifier(name, bench, train_labels, seed):
    classifier = fit_classifier(name, bench, train_labels, seed)
    out = {}
    for split, rows in (("val", bench.validation), ("test", bench.test)):
        scores = predict(classifier, bench.records_at(rows), bench.vocab)
        labels = bench.labels.s[rows]
        out[f"{split}_auroc"] = auroc(scores, labels)
        out[f"{split}_auprc"] = average_precision(scores, labels)
    return out


# ============================================
# Experiments
# ============================================

def run_classifier_comparison(config: ExperimentConfig):
    """
    Mean and standard deviation of anchor-classifier metrics over ``repeats`` runs.

    Run ``r`` redraws the splits and seeds training with ``seed + r``; the
    cohort itself stays fixed.
    """
    bench, _ = prepare(config)
    rows = []
    for name in _classifier_models(config):
        for repeat in range(config.repeats):
            seed = config.seed + repeat
            run_bench = bench.resplit(seed)
            train_labels = run_bench.labels.subset(run_bench.train)
            logger.info("Comparison: %s, run %d/%d", name, repeat + 1, config.repeats)
            rows.append({"model": name, "repeat": repeat, "train_seed": seed,
                         **_evaluate_classifier(name, run_bench, train_labels, seed)})
    runs = pd.DataFrame(rows)
    grouped = runs.groupby("model", sort=False)
    summary = pd.DataFrame({
        "model": list(grouped.groups),
        "n_runs": grouped.size().to_numpy(),
        "test_auroc_mean": grouped["test_auroc"].mean().to_numpy(),
        "test_auroc_std": grouped["test_auroc"].std(ddof=0).to_numpy(),
        "test_auprc_mean": grouped["test_auprc"].mean().to_numpy(),
        "test_auprc_std": grouped["test_auprc"].std(ddof=0).to_numpy(),
        "val_auprc_mean": grouped["val_auprc"].mean().to_numpy(),
    })
    return {"runs": _stamp(runs, config), "summary": _stamp(summary, config)}


def run_noise_sweep(config: ExperimentConfig):
    """Validation AUPRC as a growing share of training positives is hidden."""
    if 0.0 not in config.noise_proportions:
        raise ExperimentConfigError("noise proportions must include 0")
    bench, _ = prepare(config)
    rows = []
    for name in _classifier_models(config):
        for proportion in config.noise_proportions:
            for repeat in range(config.repeats):
                seed = config.seed + repeat
                run_bench = bench.resplit(seed)
                noisy = inject_label_noise(run_bench.labels.subset(run_bench.train), proportion, seed)
                logger.info("Noise sweep: %s, proportion %.2f, run %d/%d", name, proportion, repeat + 1,
                            config.repeats)
                metrics = _evaluate_classifier(name, run_bench, noisy, seed)
                rows.append({"model": name, "noise": proportion, "repeat": repeat, "train_seed": seed,
                             "val_auroc": metrics["val_auroc"], "val_auprc": metrics["val_auprc"]})
    runs = pd.DataFrame(rows)
    summary = (
        runs.groupby(["model", "noise"], sort=False)["val_auprc"]
        .agg(val_auprc_median="median", val_auprc_mean="mean", val_auprc_std=lambda v: v.std(ddof=0))
        .reset_index()
    )
    return {"runs": _stamp(runs, config), "summary": _stamp(summary, config)}


@dataclass
class PhenotypePanel:
    """Full-data phenotypes and GWAS used as the ablation baseline."""

    phenotypes: dict
    gwas: dict
    catalog: TruthCatalog


def score_all(bench: Workbench):
    phenotypes = {}
    for name in bench.config.models:
        classifier = None
        if name in CLASSIFIER_MODELS:
            classifier = fit_classifier(name, bench, bench.labels.subset(bench.train), bench.config.seed)
        phenotypes[name] = score_phenotype(name, bench, classifier)
        logger.info("Scored phenotype %s", name)
    return phenotypes


def full_data_panel(bench: Workbench):
    config = bench.config
    phenotypes = score_all(bench)
    gwas = {name: run_gwas(p, bench.genotypes, bench.covariates, config.alpha, config.n_pcs)
            for name, p in phenotypes.items()}
    catalog = TruthCatalog.from_genotypes(bench.genotypes, config.r2_threshold)
    return PhenotypePanel(phenotypes, gwas, catalog)


def run_ablation(config: ExperimentConfig):
    """
    Catalog retention when patients are removed after phenotyping.

    Regime ``joint`` removes random patients; regime ``cases`` removes random
    Threshold-1 cases only. Association tests are restricted to the variants
    significant for any model on the full data.
    """
    bench, _ = prepare(config)
    panel = full_data_panel(bench)
    variants = sorted(set().union(*(g.significant for g in panel.gwas.values())))
    full_retention = {
        name: match_catalog(g.significant, panel.catalog, bench.genotypes, config.r2_threshold).proportion
        for name, g in panel.gwas.items()
    }
    t1_cases = np.flatnonzero(threshold_phenotype(bench.records, bench.anchor, 1).scores == 1.0)
    n = len(bench.records)
    min_patients = config.n_pcs + 5
    regimes = (("joint", np.arange(n), config.joint_ablation_proportions),
               ("cases", t1_cases, config.ablation_proportions))
    rows = []
    for regime_index, (regime, pool, proportions) in enumerate(regimes):
        for repeat in range(config.repeats):
            order = np.random.default_rng([config.seed, repeat, regime_index]).permutation(pool)
            for proportion in proportions:
                removed = order[:int(np.floor(proportion * len(pool)))]
                keep = np.setdiff1d(np.arange(n), removed)
                if len(keep) < min_patients:
                    raise InsufficientSamplesError(
                        f"{len(keep)} patients survive {regime} ablation at {proportion}; "
                        f"at least {min_patients} are needed"
                    )
                genotypes = bench.genotypes.subset(keep)
                covariates = bench.covariates.subset(keep)
                for name, phenotype in panel.phenotypes.items():
                    gwas = run_gwas(phenotype.subset(keep), genotypes, covariates, config.alpha, config.n_pcs,
                                    variants=variants)
                    match = match_catalog(gwas.significant, panel.catalog, bench.genotypes, config.r2_threshold)
                    rows.append({"regime": regime, "model": name, "proportion": proportion, "repeat": repeat,
                                 "n_removed": len(removed), "n_significant": match.n_significant,
                                 "matched_count": match.matched_count, "retention": match.proportion})
            logger.info("Ablation %s: repeat %d/%d done", regime, repeat + 1, config.repeats)
    runs = pd.DataFrame(rows)
    summary = (
        runs.groupby(["regime", "model", "proportion"], sort=False)["retention"]
        .agg(retention_mean="mean", retention_std=lambda v: v.std(ddof=0), retention_median="median")
        .reset_index()
    )
    summary["full_retention"] = summary["model"].map(full_retention)
    return {"runs": _stamp(runs, config), "summary": _stamp(summary, config)}


def run_full_pipeline(config: ExperimentConfig, out_dir=None):
    """
    Cohort to catalog table: score every model, run GWAS, match the truth catalog.

    With ``out_dir`` the per-model phenotype and summary-statistics files and
    the catalog are written there as well.
    """
    bench, truth = prepare(config)
    panel = full_data_panel(bench)
    rows = []
    for name, phenotype in panel.phenotypes.items():
        gwas = panel.gwas[name]
        match = match_catalog(gwas.significant, panel.catalog, bench.genotypes, config.r2_threshold)
        rows.append({
            "model": name,
            "n_significant": match.n_significant,
            "n_significant_matched": match.n_significant_matched,
            "catalog_size": match.catalog_size,
            "matched_count": match.matched_count,
            "proportion": match.proportion,
            "truth_auroc": evaluate_against_truth(phenotype, truth),
        })
        if out_dir is not None:
            save_phenotype(phenotype, Path(out_dir) / f"phenotype_{name}.tsv")
            save_sumstats(gwas, Path(out_dir) / f"sumstats_{name}.tsv")
    if out_dir is not None:
        save_catalog(panel.catalog, Path(out_dir) / "catalog.tsv")
    return {"catalog_comparison": _stamp(pd.DataFrame(rows), config)}


def write_tables(tables, out_dir, prefix):
    """Write each table as ``<prefix>_<name>.tsv``; returns the written paths."""
    paths = []
    for name, frame in tables.items():
        stem = name if name.startswith(prefix) else f"{prefix}_{name}"
        paths.append(write_table(frame, Path(out_dir) / f"{stem}.tsv"))
    return paths
