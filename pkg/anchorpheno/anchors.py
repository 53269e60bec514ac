"""
Positive-unlabeled anchor framework.

A patient is anchor-labelled (s=1) when any anchor code appears in any visit.
Anchor classifiers are trained to predict s; their scores become a phenotype
through ``phenotype_from_scores``: 1 for labelled patients, score / c for the
rest. Threshold phenotypes are the usual case/control baselines.
"""

import enum
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .exceptions import CohortFormatError, LabelError, VocabularyMismatchError
from .formats import read_table, write_table

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AnchorSpec:
    codes: frozenset

    def __post_init__(self):
        object.__setattr__(self, "codes", frozenset(self.codes))
        if not self.codes or not all(self.codes):
            raise LabelError("an anchor needs at least one non-empty code")

    @classmethod
    def parse(cls, text):
        """Parse a ``|``-separated disjunction such as ``714.0|714.1``."""
        return cls(frozenset(code.strip() for code in text.split("|")))

    def __str__(self):
        return "|".join(sorted(self.codes))

    def token_ids(self, vocab):
        missing = [code for code in sorted(self.codes) if code not in vocab]
        if missing:
            raise VocabularyMismatchError(f"anchor codes missing from vocabulary: {missing}")
        return sorted(vocab.token_ids[code] for code in self.codes)


@dataclass(frozen=True)
class AnchorLabel:
    patient_ids: tuple
    s: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "s", np.asarray(self.s, dtype=np.int8))
        if len(self.s) != len(self.patient_ids):
            raise LabelError("one anchor label per patient is required")

    def __len__(self):
        return len(self.s)

    @property
    def n_positive(self):
        return int(self.s.sum())

    def subset(self, rows):
        rows = np.asarray(rows, dtype=int)
        return AnchorLabel(tuple(self.patient_ids[i] for i in rows), self.s[rows])


class PhenotypeKind(str, enum.Enum):
    BINARY = "binary"
    CONTINUOUS = "continuous"


@dataclass(frozen=True)
class PhenotypeVector:
    patient_ids: tuple
    scores: np.ndarray
    kind: PhenotypeKind
    c: float = 1.0

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=float)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "kind", PhenotypeKind(self.kind))
        if len(scores) != len(self.patient_ids):
            raise LabelError("one phenotype score per patient is required")
        if self.kind is PhenotypeKind.BINARY and not np.isin(scores, (0.0, 1.0)).all():
            raise LabelError("binary phenotypes take values in {0, 1}")
        if ((scores < 0.0) | (scores > 1.0)).any():
            raise LabelError("phenotype scores must lie in [0, 1]")

    def __len__(self):
        return len(self.scores)

    def subset(self, rows):
        rows = np.asarray(rows, dtype=int)
        return PhenotypeVector(tuple(self.patient_ids[i] for i in rows), self.scores[rows], self.kind, self.c)


def anchor_counts(records, anchor: AnchorSpec):
    """Anchor occurrences per patient: one per visit per matching code."""
    return np.array(
        [sum(len(visit & anchor.codes) for visit in record.visits) for record in records],
        dtype=np.int64,
    )


def label_anchor(records, anchor: AnchorSpec) -> AnchorLabel:
    s = (anchor_counts(records, anchor) > 0).astype(np.int8)
    return AnchorLabel(tuple(r.patient_id for r in records), s)


def inject_label_noise(labels: AnchorLabel, proportion, seed) -> AnchorLabel:
    """Flip exactly floor(proportion * positives) anchor positives to unlabelled."""
    if not 0.0 <= proportion <= 1.0:
        raise LabelError("noise proportion must lie in [0, 1]")
    positives = np.flatnonzero(labels.s == 1)
    n_flip = int(np.floor(proportion * len(positives)))
    rng = np.random.default_rng(seed)
    flipped = rng.choice(positives, size=n_flip, replace=False)
    s = labels.s.copy()
    s[flipped] = 0
    logger.debug("Flipped %d of %d anchor positives", n_flip, len(positives))
    return AnchorLabel(labels.patient_ids, s)


def phenotype_from_scores(scores, labels: AnchorLabel, c=1.0) -> PhenotypeVector:
    """
    Turn anchor-classifier scores into a continuous phenotype.

    Labelled patients get 1; everyone else gets ``min(score / c, 1)``.
    """
    if c <= 0.0 or c > 1.0:
        raise LabelError("c must lie in (0, 1]")
    scores = np.asarray(scores, dtype=float)
    if len(scores) != len(labels):
        raise LabelError("scores and anchor labels differ in length")
    if ((scores < 0.0) | (scores > 1.0)).any():
        raise LabelError("anchor scores must lie in [0, 1]")
    phenotype = np.where(labels.s == 1, 1.0, np.minimum(scores / c, 1.0))
    return PhenotypeVector(labels.patient_ids, phenotype, PhenotypeKind.CONTINUOUS, c)


def threshold_phenotype(records, anchor: AnchorSpec, k) -> PhenotypeVector:
    """Binary case definition: at least ``k`` anchor occurrences."""
    if k < 1:
        raise LabelError("threshold k must be at least 1")
    cases = (anchor_counts(records, anchor) >= k).astype(float)
    return PhenotypeVector(tuple(r.patient_id for r in records), cases, PhenotypeKind.BINARY)


def save_phenotype(phenotype: PhenotypeVector, path):
    frame = pd.DataFrame({
        "patient_id": list(phenotype.patient_ids),
        "score": phenotype.scores,
        "kind": phenotype.kind.value,
    })
    return write_table(frame, path)


def load_phenotype(path) -> PhenotypeVector:
    frame = read_table(path, required=("patient_id", "score", "kind"), dtype={"patient_id": str, "kind": str})
    kinds = set(frame["kind"])
    if len(kinds) > 1:
        raise CohortFormatError(f"phenotype file mixes kinds: {sorted(kinds)}")
    kind = kinds.pop() if kinds else PhenotypeKind.CONTINUOUS.value
    return PhenotypeVector(tuple(frame["patient_id"]), frame["score"].to_numpy(dtype=float), kind)
