"""
Per-variant association tests, LD expansion and truth-catalog matching.

Continuous phenotypes are tested by OLS with a two-sided t test on the
genotype coefficient; binary phenotypes by logistic regression with a Wald z
test. Every model includes an intercept, sex, age and the first ``n_pcs``
principal components.
"""

import enum
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import linalg
from scipy import stats

from .anchors import PhenotypeKind
from .classifiers.logistic import fit_logistic_newton
from .exceptions import (
    AlignmentError,
    DegenerateDataError,
    InsufficientSamplesError,
    LabelError,
    NonFiniteError,
    RankDeficientError,
)
from .formats import read_table, write_table

logger = logging.getLogger(__name__)

GENOME_WIDE_ALPHA = 5e-8
RANK_TOL = 1e-10
# fitted |eta| beyond this means (quasi-)separation
SEPARATION_ETA = 15.0


class TestKind(str, enum.Enum):
    LINEAR = "linear"
    LOGISTIC = "logistic"


@dataclass(frozen=True)
class AssociationResult:
    variant_id: str
    beta: float
    standard_error: float
    statistic: float
    p_value: float
    test: TestKind
    n_used: int
    flag: str = ""

    @property
    def is_finite(self):
        return not self.flag and np.isfinite([self.beta, self.standard_error, self.statistic, self.p_value]).all()

    def significant(self, alpha):
        return self.is_finite and self.p_value < alpha


def _flagged(variant_id, test, n, flag, beta=np.nan):
    return AssociationResult(variant_id, float(beta), np.nan, np.nan, np.nan, TestKind(test), n, flag)


def covariate_design(covariates, n_pcs=10):
    """Intercept, sex, age and the first ``n_pcs`` PCs."""
    matrix = covariates.matrix(n_pcs)
    return np.column_stack([np.ones(len(matrix)), matrix])


def _check_rank(R, what):
    diag = np.abs(np.diag(R))
    if diag.size and diag.min() <= RANK_TOL * max(diag.max(), 1.0) * max(R.shape):
        raise RankDeficientError(f"{what} design matrix is rank deficient")


def _design(phenotype, genotype_column, covariates, n_pcs):
    y = np.asarray(phenotype.scores, dtype=float)
    g = np.asarray(genotype_column, dtype=float)
    X = np.column_stack([np.ones(len(y)), g, covariates.matrix(n_pcs)])
    if len(g) != len(y) or X.shape[0] != len(y):
        raise AlignmentError("phenotype, genotype and covariates differ in length")
    if not (np.isfinite(y).all() and np.isfinite(X).all()):
        raise NonFiniteError("association inputs contain non-finite values")
    n, p = X.shape
    if n < p + 2:
        raise InsufficientSamplesError(f"{n} patients cannot fit {p} coefficients")
    return y, X


def linear_assoc(phenotype, genotype_column, covariates, n_pcs=10, variant_id=""):
    """OLS of the phenotype on [1, g, covariates], solved through a QR factorization."""
    y, X = _design(phenotype, genotype_column, covariates, n_pcs)
    n, p = X.shape
    Q, R = np.linalg.qr(X)
    _check_rank(R, "linear")
    if np.ptp(y) == 0.0:
        return _flagged(variant_id, TestKind.LINEAR, n, "zero_variance", beta=0.0)
    coef = linalg.solve_triangular(R, Q.T @ y)
    resid = y - X @ coef
    df = n - p
    sigma2 = resid @ resid / df
    R_inv = linalg.solve_triangular(R, np.eye(p))
    se = float(np.sqrt(sigma2 * (R_inv[1] @ R_inv[1])))
    t = coef[1] / se if se > 0.0 else np.nan
    p_value = float(2.0 * stats.t.sf(abs(t), df)) if np.isfinite(t) else np.nan
    flag = "" if np.isfinite([coef[1], se, t, p_value]).all() else "non_finite"
    return AssociationResult(variant_id, float(coef[1]), se, float(t), p_value, TestKind.LINEAR, n, flag)


def logistic_assoc(phenotype, genotype_column, covariates, n_pcs=10, variant_id="", max_iter=25):
    """Logistic regression of a binary phenotype with a Wald test on the genotype."""
    y, X = _design(phenotype, genotype_column, covariates, n_pcs)
    n = len(y)
    if y.min() == y.max():
        raise LabelError("logistic association needs both cases and controls")
    _check_rank(np.linalg.qr(X, mode="r"), "logistic")
    fit = fit_logistic_newton(X, y, tol=1e-8, max_iter=max_iter)
    beta = float(fit.coef[1])
    if fit.max_abs_eta > SEPARATION_ETA:
        logger.warning("Separation detected for %s", variant_id or "variant")
        return _flagged(variant_id, TestKind.LOGISTIC, n, "separation", beta)
    if not fit.converged:
        logger.warning("Logistic fit for %s did not converge in %d iterations", variant_id or "variant", max_iter)
        return _flagged(variant_id, TestKind.LOGISTIC, n, "no_convergence", beta)
    se = float(np.sqrt(fit.covariance[1, 1]))
    z = beta / se
    p_value = float(2.0 * stats.norm.sf(abs(z)))
    flag = "" if np.isfinite([beta, se, z, p_value]).all() else "non_finite"
    return AssociationResult(variant_id, beta, se, float(z), p_value, TestKind.LOGISTIC, n, flag)


@dataclass(frozen=True)
class GwasResult:
    results: tuple
    alpha: float

    @property
    def significant(self):
        return frozenset(r.variant_id for r in self.results if r.significant(self.alpha))

    def with_alpha(self, alpha):
        return GwasResult(self.results, alpha)

    def flagged(self):
        return [r for r in self.results if r.flag]

    def to_frame(self):
        return pd.DataFrame({
            "variant_id": [r.variant_id for r in self.results],
            "beta": [r.beta for r in self.results],
            "se": [r.standard_error for r in self.results],
            "stat": [r.statistic for r in self.results],
            "p": [r.p_value for r in self.results],
            "test": [r.test.value for r in self.results],
            "n": [r.n_used for r in self.results],
        })


def _check_alignment(phenotype, genotypes, covariates):
    if not (tuple(phenotype.patient_ids) == tuple(genotypes.patient_ids) == tuple(covariates.patient_ids)):
        raise AlignmentError("phenotype, genotypes and covariates must list the same patients in the same order")


def linear_scan(y, dosages, covariate_matrix, variant_ids):
    """
    OLS association for every column of ``dosages`` at once.

    Phenotype and genotypes are residualized on the covariates with one QR
    factorization; each genotype coefficient then comes from a single inner
    product, which matches fitting the full model variant by variant.
    """
    n, k = covariate_matrix.shape
    Q, R = np.linalg.qr(covariate_matrix)
    _check_rank(R, "covariate")
    G = dosages.astype(float)
    y_res = y - Q @ (Q.T @ y)
    G_res = G - Q @ (Q.T @ G)
    gg = np.einsum("ij,ij->j", G_res, G_res)
    g_centered = np.einsum("ij,ij->j", G - G.mean(axis=0), G - G.mean(axis=0))
    collinear = gg <= RANK_TOL * np.maximum(g_centered, 1.0) * n
    gy = G_res.T @ y_res
    df = n - k - 1
    with np.errstate(divide="ignore", invalid="ignore"):
        beta = gy / gg
        rss = np.maximum(y_res @ y_res - beta * gy, 0.0)
        se = np.sqrt(rss / df / gg)
        t = beta / se
    p = 2.0 * stats.t.sf(np.abs(t), df)
    zero_variance = np.ptp(y) == 0.0
    results = []
    for j, vid in enumerate(variant_ids):
        if collinear[j]:
            results.append(_flagged(vid, TestKind.LINEAR, n, "rank_deficient"))
        elif zero_variance:
            results.append(_flagged(vid, TestKind.LINEAR, n, "zero_variance", beta=0.0))
        elif not np.isfinite([beta[j], se[j], t[j], p[j]]).all():
            results.append(_flagged(vid, TestKind.LINEAR, n, "non_finite", beta=beta[j]))
        else:
            results.append(AssociationResult(vid, float(beta[j]), float(se[j]), float(t[j]), float(p[j]),
                                             TestKind.LINEAR, n))
    return results


def run_gwas(phenotype, genotypes, covariates, alpha=GENOME_WIDE_ALPHA, n_pcs=10, variants=None) -> GwasResult:
    """
    Test every variant (or the ``variants`` panel) against the phenotype.

    The test follows the phenotype kind. Results come back sorted by variant
    id; flagged results are kept with NaN statistics.
    """
    _check_alignment(phenotype, genotypes, covariates)
    variant_ids = sorted(genotypes.variant_ids if variants is None else variants)
    columns = [genotypes.index_of(v) for v in variant_ids]
    y = np.asarray(phenotype.scores, dtype=float)
    design = covariate_design(covariates, n_pcs)
    if len(y) < design.shape[1] + 3:
        raise InsufficientSamplesError(f"{len(y)} patients cannot fit {design.shape[1] + 1} coefficients")
    _check_rank(np.linalg.qr(design, mode="r"), "covariate")

    if phenotype.kind is PhenotypeKind.CONTINUOUS:
        results = linear_scan(y, genotypes.dosages[:, columns], design, variant_ids)
    elif y.min() == y.max():
        logger.warning("Binary phenotype has a single class; every variant is flagged")
        results = [_flagged(v, TestKind.LOGISTIC, len(y), "one_class") for v in variant_ids]
    else:
        results = []
        for vid, j in zip(variant_ids, columns):
            try:
                results.append(logistic_assoc(phenotype, genotypes.dosages[:, j], covariates, n_pcs, vid))
            except RankDeficientError:
                results.append(_flagged(vid, TestKind.LOGISTIC, len(y), "rank_deficient"))
    gwas = GwasResult(tuple(results), alpha)
    logger.info("GWAS on %d variants: %d significant at alpha %.3g, %d flagged",
                len(results), len(gwas.significant), alpha, len(gwas.flagged()))
    return gwas


def save_sumstats(gwas: GwasResult, path):
    return write_table(gwas.to_frame(), path)


def load_sumstats(path, alpha=GENOME_WIDE_ALPHA) -> GwasResult:
    frame = read_table(path, required=("variant_id", "beta", "se", "stat", "p", "test", "n"),
                       dtype={"variant_id": str, "test": str})
    results = tuple(
        AssociationResult(row.variant_id, row.beta, row.se, row.stat, row.p, TestKind(row.test), int(row.n),
                          "" if np.isfinite(row.p) else "non_finite")
        for row in frame.itertuples(index=False)
    )
    return GwasResult(results, alpha)


# ============================================
# Linkage disequilibrium
# ============================================

def _column_index(genotypes, variant):
    try:
        return variant if isinstance(variant, (int, np.integer)) else genotypes.index_of(variant)
    except KeyError:
        raise AlignmentError(f"unknown variant {variant!r}") from None


def ld_r2(genotypes, i, j):
    """Squared Pearson correlation between two dosage columns."""
    a = genotypes.column(_column_index(genotypes, i)).astype(float)
    b = genotypes.column(_column_index(genotypes, j)).astype(float)
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise DegenerateDataError("LD is undefined for a constant genotype column")
    a = a - a.mean()
    b = b - b.mean()
    return float((a @ b) ** 2 / ((a @ a) * (b @ b)))


def _standardized(genotypes):
    G = genotypes.dosages.astype(float)
    G = G - G.mean(axis=0)
    norm = np.sqrt(np.einsum("ij,ij->j", G, G))
    # constant columns correlate with nothing
    return np.divide(G, norm, out=np.zeros_like(G), where=norm > 0)


def ld_neighbors(genotypes, variants, r2_threshold=0.5):
    """Boolean (len(variants), n_variants) matrix: r2 above threshold, or the variant itself."""
    rows = [_column_index(genotypes, v) for v in variants]
    if not rows:
        return np.zeros((0, genotypes.n_variants), dtype=bool)
    Z = _standardized(genotypes)
    r2 = (Z[:, rows].T @ Z) ** 2
    neighbors = r2 > r2_threshold
    neighbors[np.arange(len(rows)), rows] = True
    return neighbors


def ld_expand(variant_set, genotypes, r2_threshold=0.5):
    """Add every variant with r2 > threshold to some input variant (one step, not transitive)."""
    variants = sorted(variant_set)
    if not variants:
        return frozenset()
    reach = ld_neighbors(genotypes, variants, r2_threshold).any(axis=0)
    return frozenset(variants) | frozenset(genotypes.variant_ids[j] for j in np.flatnonzero(reach))


@dataclass(frozen=True)
class TruthCatalog:
    variant_ids: frozenset

    def __len__(self):
        return len(self.variant_ids)

    @classmethod
    def from_genotypes(cls, genotypes, r2_threshold=0.5):
        """Planted causal variants plus their LD neighbours."""
        return cls(ld_expand(genotypes.causal_effects, genotypes, r2_threshold))

    def check(self, genotypes):
        unknown = self.variant_ids - set(genotypes.variant_ids)
        if unknown:
            raise AlignmentError(f"catalog variants missing from genotypes: {sorted(unknown)[:5]}")


def save_catalog(catalog: TruthCatalog, path):
    return write_table(pd.DataFrame({"variant_id": sorted(catalog.variant_ids)}), path)


def load_catalog(path) -> TruthCatalog:
    return TruthCatalog(frozenset(read_table(path, required=("variant_id",), dtype={"variant_id": str})["variant_id"]))


@dataclass(frozen=True)
class CatalogMatch:
    matched_count: int
    proportion: float
    n_significant: int
    n_significant_matched: int
    catalog_size: int


def match_catalog(significant_set, catalog: TruthCatalog, genotypes, r2_threshold=0.5) -> CatalogMatch:
    """
    Compare significant variants with the catalog after LD-expanding both sides.

    A catalog variant is reproduced when its LD neighbourhood meets the
    expanded significant set; a significant variant is matched when its
    neighbourhood meets the expanded catalog.
    """
    catalog.check(genotypes)
    catalog_ids = sorted(catalog.variant_ids)
    significant = sorted(significant_set)
    catalog_reach = ld_neighbors(genotypes, catalog_ids, r2_threshold)
    significant_reach = ld_neighbors(genotypes, significant, r2_threshold)
    expanded_significant = significant_reach.any(axis=0)
    expanded_catalog = catalog_reach.any(axis=0)
    matched = int((catalog_reach & expanded_significant).any(axis=1).sum())
    significant_matched = int((significant_reach & expanded_catalog).any(axis=1).sum())
    return CatalogMatch(
        matched_count=matched,
        proportion=matched / len(catalog_ids) if catalog_ids else 0.0,
        n_significant=len(significant),
        n_significant_matched=significant_matched,
        catalog_size=len(catalog_ids),
    )
