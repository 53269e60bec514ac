"""
Self-describing classifier checkpoints.

A checkpoint is a ``torch.save`` dict of plain values and tensors: the model
kind, its config, the vocabulary with its hash, the anchor and the weights.
Loading recomputes the vocabulary hash and refuses a mismatch.
"""

import logging
import os
import tempfile
from pathlib import Path

import numpy as np
import torch

from ..anchors import AnchorSpec
from ..cohort import Vocabulary
from ..exceptions import VocabularyMismatchError
from .logistic import CountFeaturizer, LogisticModel
from .training import TrainedTransformer, TrainingHistory
from .transformer import AnchorBERT, TransformerConfig

logger = logging.getLogger(__name__)

ANCHORBERT = "anchorbert"
ANCHOR_LR = "anchor-lr"


def _vocab_payload(vocab):
    return {
        "token_ids": dict(vocab.token_ids),
        "min_frequency_fraction": vocab.min_frequency_fraction,
        "digest": vocab.digest(),
    }


def _load_vocab(payload, expected=None):
    vocab = Vocabulary(token_ids=dict(payload["token_ids"]),
                       min_frequency_fraction=payload["min_frequency_fraction"])
    if vocab.digest() != payload["digest"]:
        raise VocabularyMismatchError("checkpoint vocabulary does not match its stored hash")
    if expected is not None and expected.digest() != vocab.digest():
        raise VocabularyMismatchError("checkpoint was trained with a different vocabulary")
    return vocab


def save_classifier(classifier, path, vocab=None):
    if isinstance(classifier, TrainedTransformer):
        payload = {
            "kind": ANCHORBERT,
            "config": classifier.config.to_dict(),
            "vocabulary": _vocab_payload(classifier.vocab),
            "anchor": sorted(classifier.anchor.codes),
            "state_dict": {k: v.detach().cpu() for k, v in classifier.model.state_dict().items()},
            "validation_auprc": list(classifier.history.validation_auprc),
            "best_epoch": classifier.history.best_epoch,
        }
    else:
        featurizer = classifier.featurizer
        payload = {
            "kind": ANCHOR_LR,
            "vocabulary": _vocab_payload(vocab),
            "codes": list(featurizer.codes),
            "mean": torch.from_numpy(featurizer.mean),
            "scale": torch.from_numpy(featurizer.scale),
            "coef": torch.from_numpy(classifier.coef),
            "intercept": classifier.intercept,
            "covariance": torch.from_numpy(classifier.covariance),
            "l2": classifier.l2,
            "n_iter": classifier.n_iter,
            "converged": classifier.converged,
        }
        if vocab is None or vocab.digest() != featurizer.vocab_digest:
            raise VocabularyMismatchError("logistic checkpoints need the vocabulary they were fitted with")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    torch.save(payload, tmp_name)
    os.replace(tmp_name, path)
    return path


def load_classifier(path, vocab=None):
    """Load a checkpoint; ``vocab``, when given, must match the stored vocabulary."""
    payload = torch.load(path, map_location="cpu", weights_only=True)
    stored_vocab = _load_vocab(payload["vocabulary"], expected=vocab)
    if payload["kind"] == ANCHORBERT:
        config = TransformerConfig.from_dict(payload["config"])
        anchor = AnchorSpec(frozenset(payload["anchor"]))
        model = AnchorBERT(len(stored_vocab), anchor.token_ids(stored_vocab), config).to(config.torch_dtype)
        model.load_state_dict(payload["state_dict"])
        model.eval()
        history = TrainingHistory(validation_auprc=list(payload["validation_auprc"]),
                                  best_epoch=int(payload["best_epoch"]))
        return TrainedTransformer(model, stored_vocab, anchor, config, history)
    featurizer = CountFeaturizer(
        codes=tuple(payload["codes"]),
        mean=payload["mean"].numpy().astype(np.float64),
        scale=payload["scale"].numpy().astype(np.float64),
        vocab_digest=stored_vocab.digest(),
    )
    return LogisticModel(
        coef=payload["coef"].numpy().astype(np.float64),
        intercept=float(payload["intercept"]),
        covariance=payload["covariance"].numpy().astype(np.float64),
        featurizer=featurizer,
        l2=float(payload["l2"]),
        n_iter=int(payload["n_iter"]),
        converged=bool(payload["converged"]),
    )
