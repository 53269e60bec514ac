from .checkpoints import load_classifier, save_classifier
from .logistic import CountFeaturizer, CountFeatures, LogisticConfig, LogisticModel, train_logistic
from .training import TrainedTransformer, gradient_check, predict, train_transformer
from .transformer import AnchorBERT, TransformerConfig, attention, build_anchor_mask, forward

__all__ = [
    "AnchorBERT",
    "CountFeaturizer",
    "CountFeatures",
    "LogisticConfig",
    "LogisticModel",
    "TrainedTransformer",
    "TransformerConfig",
    "attention",
    "build_anchor_mask",
    "forward",
    "gradient_check",
    "load_classifier",
    "predict",
    "save_classifier",
    "train_logistic",
    "train_transformer",
]
