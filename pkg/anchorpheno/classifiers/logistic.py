"""
Anchor logistic regression on standardized per-code counts.

The Newton solver here is shared with the logistic association test in
``anchorpheno.gwas``.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import expit

from ..exceptions import LabelError, NonFiniteError, VocabularyMismatchError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NewtonFit:
    coef: np.ndarray
    covariance: np.ndarray
    n_iter: int
    converged: bool
    gradient_norm: float
    max_abs_eta: float


def _penalized_loglik(X, y, beta, penalty):
    eta = X @ beta
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)) - 0.5 * np.sum(penalty * beta ** 2))


def fit_logistic_newton(X, y, penalty=None, tol=1e-8, max_iter=50) -> NewtonFit:
    """
    Maximize the (optionally L2-penalized) logistic log-likelihood by damped Newton.

    ``penalty`` holds one ridge weight per column (0 for unpenalized columns).
    Converged means the gradient max-norm fell below ``tol``.
    """
    n, p = X.shape
    penalty = np.zeros(p) if penalty is None else np.broadcast_to(np.asarray(penalty, dtype=float), (p,))
    beta = np.zeros(p)
    current = _penalized_loglik(X, y, beta, penalty)
    converged, n_iter, grad = False, 0, np.full(p, np.inf)
    for n_iter in range(1, max_iter + 1):
        mu = expit(X @ beta)
        grad = X.T @ (y - mu) - penalty * beta
        if np.max(np.abs(grad)) < tol:
            converged = True
            break
        hessian = (X.T * (mu * (1.0 - mu))) @ X + np.diag(penalty)
        try:
            step = linalg.solve(hessian, grad, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            logger.debug("Singular Hessian at iteration %d", n_iter)
            break
        t = 1.0
        slack = 1e-12 * (1.0 + abs(current))
        while t > 1e-10:
            candidate = beta + t * step
            value = _penalized_loglik(X, y, candidate, penalty)
            if value >= current - slack:
                beta, current = candidate, value
                break
            t *= 0.5
        else:
            break
    mu = expit(X @ beta)
    hessian = (X.T * (mu * (1.0 - mu))) @ X + np.diag(penalty)
    try:
        covariance = linalg.inv(hessian)
    except (linalg.LinAlgError, ValueError):
        covariance = np.full((p, p), np.nan)
    return NewtonFit(
        coef=beta,
        covariance=covariance,
        n_iter=n_iter,
        converged=converged,
        gradient_norm=float(np.max(np.abs(grad))),
        max_abs_eta=float(np.max(np.abs(X @ beta))) if n else 0.0,
    )


@dataclass(frozen=True)
class LogisticConfig:
    l2: float = 1.0
    tol: float = 1e-6
    max_iter: int = 100


@dataclass(frozen=True)
class CountFeaturizer:
    """Column layout and training-split standardization for count features."""

    codes: tuple
    mean: np.ndarray
    scale: np.ndarray
    vocab_digest: str

    @classmethod
    def fit(cls, records, vocab, anchor):
        codes = tuple(code for code in vocab.codes if code not in anchor.codes)
        counts = raw_counts(records, codes)
        mean = counts.mean(axis=0) if len(counts) else np.zeros(len(codes))
        scale = counts.std(axis=0) if len(counts) else np.ones(len(codes))
        scale = np.where(scale > 0.0, scale, 1.0)
        return cls(codes=codes, mean=mean, scale=scale, vocab_digest=vocab.digest())

    def transform(self, records):
        matrix = (raw_counts(records, self.codes) - self.mean) / self.scale
        return CountFeatures(tuple(r.patient_id for r in records), matrix, self)


@dataclass(frozen=True)
class CountFeatures:
    patient_ids: tuple
    matrix: np.ndarray
    featurizer: CountFeaturizer


def raw_counts(records, codes):
    column = {code: j for j, code in enumerate(codes)}
    counts = np.zeros((len(records), len(codes)))
    for i, record in enumerate(records):
        for code, count in record.code_counts().items():
            j = column.get(code)
            if j is not None:
                counts[i, j] = count
    return counts


@dataclass(frozen=True)
class LogisticModel:
    coef: np.ndarray
    intercept: float
    covariance: np.ndarray
    featurizer: CountFeaturizer
    l2: float
    n_iter: int
    converged: bool

    @property
    def vocab_digest(self):
        return self.featurizer.vocab_digest

    @property
    def standard_errors(self):
        return np.sqrt(np.diag(self.covariance)[1:])

    @property
    def z_scores(self):
        return self.coef / self.standard_errors

    def decision_function(self, features: CountFeatures):
        return features.matrix @ self.coef + self.intercept

    def predict_proba(self, records):
        return expit(self.decision_function(self.featurizer.transform(records)))


def train_logistic(features: CountFeatures, labels, l2=1.0, tol=1e-6, max_iter=100) -> LogisticModel:
    """Fit the L2-penalized anchor logistic regression (intercept unpenalized)."""
    s = np.asarray(labels.s, dtype=float)
    if len(s) != len(features.matrix):
        raise LabelError("features and labels differ in length")
    if s.min() == s.max():
        raise LabelError("anchor labels contain a single class")
    if not np.isfinite(features.matrix).all():
        raise NonFiniteError("count features contain non-finite values")
    design = np.column_stack([np.ones(len(s)), features.matrix])
    penalty = np.r_[0.0, np.full(features.matrix.shape[1], l2)]
    fit = fit_logistic_newton(design, s, penalty=penalty, tol=tol, max_iter=max_iter)
    if not fit.converged:
        logger.warning("Anchor logistic regression stopped after %d iterations (|grad| %.3g)",
                       fit.n_iter, fit.gradient_norm)
    logger.info("Anchor LR fitted: %d features, %d iterations", features.matrix.shape[1], fit.n_iter)
    return LogisticModel(
        coef=fit.coef[1:],
        intercept=float(fit.coef[0]),
        covariance=fit.covariance,
        featurizer=features.featurizer,
        l2=l2,
        n_iter=fit.n_iter,
        converged=fit.converged,
    )


def check_vocabulary(model, vocab):
    if vocab is not None and vocab.digest() != model.vocab_digest:
        raise VocabularyMismatchError("prediction vocabulary differs from the training vocabulary")
