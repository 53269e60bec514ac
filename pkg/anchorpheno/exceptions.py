"""
Error types raised by the anchorpheno app.

Every error carries a short ``kind`` tag; management commands write it in the
machine-readable error line so scripts can branch on it.
"""


class AnchorPhenoError(Exception):
    kind = "error"

    def as_dict(self):
        return {"status": "error", "kind": self.kind, "error": str(self)}


class CohortConfigError(AnchorPhenoError, ValueError):
    kind = "config"


class ExperimentConfigError(AnchorPhenoError, ValueError):
    kind = "config"


class CohortFormatError(AnchorPhenoError, ValueError):
    kind = "format"

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class LabelError(AnchorPhenoError, ValueError):
    kind = "labels"


class ShapeError(AnchorPhenoError, ValueError):
    kind = "shape"


class VocabularyMismatchError(AnchorPhenoError, ValueError):
    kind = "vocabulary"


class RankDeficientError(AnchorPhenoError, ValueError):
    kind = "rank_deficient"


class InsufficientSamplesError(AnchorPhenoError, ValueError):
    kind = "insufficient_samples"


class AlignmentError(AnchorPhenoError, ValueError):
    kind = "alignment"


class DegenerateDataError(AnchorPhenoError, ValueError):
    kind = "degenerate"


class NonFiniteError(AnchorPhenoError, ValueError):
    kind = "non_finite"
