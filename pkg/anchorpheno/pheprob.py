"""
Pheprob baseline: a two-component binomial mixture over anchor-code counts.

Patient i contributes C_i anchor occurrences out of S_i codes. Cases and
controls each draw anchors at their own per-code rate; the phenotype is the
posterior probability of the case component.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp
from scipy.stats import binom

from .anchors import PhenotypeKind, PhenotypeVector
from .exceptions import DegenerateDataError, ShapeError

logger = logging.getLogger(__name__)

_P_FLOOR = 1e-12


@dataclass(frozen=True)
class BinomialMixtureParams:
    pi: float
    p_case: float
    p_control: float
    log_likelihood: list = field(default_factory=list)
    n_iter: int = 0

    @property
    def final_log_likelihood(self):
        return self.log_likelihood[-1] if self.log_likelihood else float("-inf")


def _check_counts(S, C):
    S = np.asarray(S, dtype=np.int64)
    C = np.asarray(C, dtype=np.int64)
    if S.shape != C.shape or S.ndim != 1:
        raise ShapeError("total and anchor counts must be vectors of equal length")
    if (S < 1).any():
        raise DegenerateDataError("every patient needs at least one code (S_i >= 1)")
    if ((C < 0) | (C > S)).any():
        raise DegenerateDataError("anchor counts must satisfy 0 <= C_i <= S_i")
    return S, C


def _component_logpmf(S, C, p):
    return binom.logpmf(C, S, np.clip(p, _P_FLOOR, 1.0 - _P_FLOOR))


def _log_joint(S, C, pi, p_case, p_control):
    return np.stack([
        np.log(pi) + _component_logpmf(S, C, p_case),
        np.log1p(-pi) + _component_logpmf(S, C, p_control),
    ])


def mixture_log_likelihood(params: BinomialMixtureParams, S, C):
    """Observed-data log-likelihood of ``params`` on the counts."""
    S, C = _check_counts(S, C)
    return float(logsumexp(_log_joint(S, C, params.pi, params.p_case, params.p_control), axis=0).sum())


def _em(S, C, pi, p_case, p_control, tol, max_iter):
    trace = []
    for iteration in range(1, max_iter + 1):
        log_joint = _log_joint(S, C, pi, p_case, p_control)
        log_marginal = logsumexp(log_joint, axis=0)
        trace.append(float(log_marginal.sum()))
        if len(trace) > 1 and trace[-1] - trace[-2] < tol:
            break
        r = np.exp(log_joint[0] - log_marginal)
        pi = float(np.clip(r.mean(), _P_FLOOR, 1.0 - _P_FLOOR))
        p_case = float((r * C).sum() / max((r * S).sum(), _P_FLOOR))
        p_control = float(((1.0 - r) * C).sum() / max(((1.0 - r) * S).sum(), _P_FLOOR))
    else:
        # out of iterations: the last update has not been scored yet
        trace.append(float(logsumexp(_log_joint(S, C, pi, p_case, p_control), axis=0).sum()))
    return BinomialMixtureParams(pi, p_case, p_control, trace, iteration)


def _initial_values(S, C, rng, restart):
    ratio = C / S
    order = np.argsort(ratio, kind="mergesort")
    # the first start splits at the median; restarts split at a random quantile
    q = 0.5 if restart == 0 else float(rng.uniform(0.2, 0.8))
    cut = min(max(int(round(q * len(S))), 1), len(S) - 1)
    low, high = order[:cut], order[cut:]
    p_control = C[low].sum() / S[low].sum()
    p_case = C[high].sum() / S[high].sum()
    pi = 0.5 if restart == 0 else 1.0 - q
    return pi, max(p_case, _P_FLOOR), max(p_control, _P_FLOOR)


def fit_binomial_mixture(S, C, tol=1e-8, max_iter=1000, seed=0, n_restarts=5) -> BinomialMixtureParams:
    """
    Fit the case/control binomial mixture by EM, keeping the best of ``n_restarts``.

    Components are ordered so that ``p_case >= p_control``.
    """
    S, C = _check_counts(S, C)
    if len(S) < 2:
        raise DegenerateDataError("the mixture needs at least two patients")
    if not C.any():
        raise DegenerateDataError(
            "no patient carries an anchor code; the mixture has nothing to separate "
            "(check the anchor codes or use a threshold phenotype)"
        )
    rng = np.random.default_rng(seed)
    best = None
    for restart in range(n_restarts):
        fit = _em(S, C, *_initial_values(S, C, rng, restart), tol=tol, max_iter=max_iter)
        logger.debug("Pheprob restart %d: log-likelihood %.6f after %d iterations",
                     restart, fit.final_log_likelihood, fit.n_iter)
        if best is None or fit.final_log_likelihood > best.final_log_likelihood:
            best = fit
    if best.p_case < best.p_control:
        best = BinomialMixtureParams(1.0 - best.pi, best.p_control, best.p_case, best.log_likelihood, best.n_iter)
    logger.info("Pheprob fit: pi %.4f, p_case %.4f, p_control %.4f", best.pi, best.p_case, best.p_control)
    return best


def case_posterior(params: BinomialMixtureParams, S, C):
    S, C = _check_counts(S, C)
    log_joint = _log_joint(S, C, params.pi, params.p_case, params.p_control)
    return np.exp(log_joint[0] - logsumexp(log_joint, axis=0))


def pheprob_phenotype(params: BinomialMixtureParams, S, C, patient_ids=None) -> PhenotypeVector:
    scores = case_posterior(params, S, C)
    if patient_ids is None:
        patient_ids = tuple(str(i) for i in range(len(scores)))
    return PhenotypeVector(tuple(patient_ids), np.clip(scores, 0.0, 1.0), PhenotypeKind.CONTINUOUS)
