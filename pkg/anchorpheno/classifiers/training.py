"""
Training, prediction and gradient checking for the anchor classifiers.
"""

import copy
import logging
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn
from torch.utils.data import DataLoader, TensorDataset

from ..cohort import encode_records
from ..exceptions import LabelError, NonFiniteError, VocabularyMismatchError
from ..metrics import average_precision
from .logistic import LogisticModel, check_vocabulary
from .transformer import AnchorBERT, TransformerConfig

logger = logging.getLogger(__name__)


@dataclass
class TrainingHistory:
    initial_loss: float = float("nan")
    train_loss: list = field(default_factory=list)
    validation_auprc: list = field(default_factory=list)
    best_epoch: int = -1

    @property
    def best_validation_auprc(self):
        return self.validation_auprc[self.best_epoch] if self.validation_auprc else float("nan")


@dataclass
class TrainedTransformer:
    model: AnchorBERT
    vocab: object
    anchor: object
    config: TransformerConfig
    history: TrainingHistory

    @property
    def vocab_digest(self):
        return self.vocab.digest()

    def predict_proba(self, records, batch_size=None):
        return predict_transformer(self.model, encode_records(records, self.vocab, self.config.max_len),
                                   batch_size or self.config.batch_size)


def _tensors(batch):
    return [torch.as_tensor(a, dtype=torch.long) for a in (batch.token_ids, batch.position_ids, batch.segment_ids)]


def predict_transformer(model, batch, batch_size=256):
    if len(batch) == 0:
        return np.zeros(0)
    model.eval()
    tensors = _tensors(batch)
    out = []
    with torch.no_grad():
        for start in range(0, len(batch), batch_size):
            chunk = [t[start:start + batch_size] for t in tensors]
            out.append(torch.sigmoid(model(*chunk)).double().numpy())
    return np.concatenate(out)


def linear_warmup_decay(warmup_steps, total_steps):
    """Learning-rate multiplier: linear ramp to 1 over warmup, then linear decay to 0."""
    def multiplier(step):
        if step < warmup_steps:
            return (step + 1) / max(1, warmup_steps)
        return max(0.0, (total_steps - step) / max(1, total_steps - warmup_steps))
    return multiplier


def build_optimizer(model, config: TransformerConfig, total_steps):
    decay, no_decay = [], []
    for name, parameter in model.named_parameters():
        (no_decay if name.endswith("bias") or "norm" in name else decay).append(parameter)
    optimizer = torch.optim.AdamW(
        [{"params": decay, "weight_decay": config.weight_decay}, {"params": no_decay, "weight_decay": 0.0}],
        lr=config.learning_rate,
    )
    warmup = int(round(config.warmup_proportion * total_steps))
    scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, linear_warmup_decay(warmup, total_steps))
    return optimizer, scheduler


def train_transformer(records, labels, vocab, anchor, config: TransformerConfig,
                      validation_records=(), validation_labels=None) -> TrainedTransformer:
    """
    Fit AnchorBERT to the anchor labels with binary cross-entropy.

    Runs ``config.n_epochs`` epochs of AdamW with linear warmup and decay and
    returns the epoch with the best validation average precision.
    """
    if not records or not validation_records or validation_labels is None:
        raise LabelError("training and validation splits must both be non-empty")
    if labels.n_positive == 0:
        raise LabelError("training labels contain no anchor positives")
    if validation_labels.n_positive == 0:
        raise LabelError("validation labels contain no anchor positives")

    torch.manual_seed(config.seed)
    model = AnchorBERT(len(vocab), anchor.token_ids(vocab), config).to(config.torch_dtype)
    train_batch = encode_records(records, vocab, config.max_len)
    validation_batch = encode_records(validation_records, vocab, config.max_len)
    dataset = TensorDataset(*_tensors(train_batch), torch.as_tensor(labels.s, dtype=config.torch_dtype))
    loader = DataLoader(dataset, batch_size=config.batch_size, shuffle=True,
                        generator=torch.Generator().manual_seed(config.seed))
    total_steps = config.n_epochs * len(loader)
    optimizer, scheduler = build_optimizer(model, config, total_steps)
    loss_fn = nn.BCEWithLogitsLoss()

    history = TrainingHistory()
    best_state, best_score = None, -np.inf
    for epoch in range(config.n_epochs):
        model.train()
        epoch_loss = 0.0
        for step, (tokens, positions, segments, target) in enumerate(loader):
            loss = loss_fn(model(tokens, positions, segments), target)
            if epoch == 0 and step == 0:
                history.initial_loss = float(loss.detach())
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            scheduler.step()
            epoch_loss += float(loss.detach()) * len(target)
        history.train_loss.append(epoch_loss / len(dataset))

        scores = predict_transformer(model, validation_batch, config.batch_size)
        score = average_precision(scores, validation_labels.s)
        history.validation_auprc.append(score)
        if score > best_score:
            best_score, best_state = score, copy.deepcopy(model.state_dict())
            history.best_epoch = epoch
        logger.info("Epoch %d/%d: train loss %.4f, validation AUPRC %.4f",
                    epoch + 1, config.n_epochs, history.train_loss[-1], score)

    model.load_state_dict(best_state)
    model.eval()
    return TrainedTransformer(model=model, vocab=vocab, anchor=anchor, config=config, history=history)


def predict(classifier, records, vocab=None):
    """Anchor probabilities in input order for a trained transformer or logistic model."""
    if isinstance(classifier, LogisticModel):
        check_vocabulary(classifier, vocab)
    elif vocab is not None and vocab.digest() != classifier.vocab_digest:
        raise VocabularyMismatchError("prediction vocabulary differs from the training vocabulary")
    if not records:
        return np.zeros(0)
    return np.asarray(classifier.predict_proba(records), dtype=float)


def _bce(model, tensors, target):
    return nn.functional.binary_cross_entropy_with_logits(model(*tensors), target)


def sample_parameter_entries(model, n_samples=200, seed=0, parameter_names=None):
    """
    Flat parameter offsets to check, keyed by parameter name.

    Every selected tensor gets its first entry; ``n_samples`` further entries
    are drawn without replacement from the rest.
    """
    named = [(n, p) for n, p in model.named_parameters() if parameter_names is None or n in parameter_names]
    sizes = np.array([p.numel() for _, p in named], dtype=np.int64)
    bounds = np.cumsum(sizes)
    starts = bounds - sizes
    rng = np.random.default_rng(seed)
    picks = {name: set() for name, _ in named}
    candidates = np.setdiff1d(np.arange(int(bounds[-1]) if len(bounds) else 0), starts)
    chosen = rng.choice(candidates, size=min(n_samples, len(candidates)), replace=False)
    for index in np.concatenate([starts[sizes > 0], chosen]):
        t = int(np.searchsorted(bounds, index, side="right"))
        picks[named[t][0]].add(int(index - starts[t]))
    return picks


def gradient_errors(model, encoded, label, eps=1e-4, n_samples=200, seed=0, parameter_names=None):
    """
    Per-tensor max relative error between backprop and central differences.

    Runs on a float64 copy in eval mode over the entries picked by
    ``sample_parameter_entries``.
    """
    model = copy.deepcopy(model).double().eval()
    tensors = [torch.as_tensor(a, dtype=torch.long) for a in
               (encoded.token_ids, encoded.position_ids, encoded.segment_ids)]
    if tensors[0].dim() == 1:
        tensors = [t.unsqueeze(0) for t in tensors]
    target = torch.as_tensor(np.atleast_1d(label), dtype=torch.float64)

    model.zero_grad()
    loss = _bce(model, tensors, target)
    if not torch.isfinite(loss):
        raise NonFiniteError("loss is not finite")
    loss.backward()

    picks = sample_parameter_entries(model, n_samples, seed, parameter_names)
    errors = {}
    with torch.no_grad():
        for name, parameter in model.named_parameters():
            if name not in picks:
                continue
            flat_param = parameter.view(-1)
            flat_grad = parameter.grad.view(-1) if parameter.grad is not None else torch.zeros_like(flat_param)
            worst = 0.0
            for offset in sorted(picks[name]):
                original = float(flat_param[offset])
                flat_param[offset] = original + eps
                plus = float(_bce(model, tensors, target))
                flat_param[offset] = original - eps
                minus = float(_bce(model, tensors, target))
                flat_param[offset] = original
                numeric = (plus - minus) / (2.0 * eps)
                analytic = float(flat_grad[offset])
                denom = max(abs(analytic), abs(numeric), 1e-8)
                worst = max(worst, abs(analytic - numeric) / denom)
            errors[name] = worst
    return errors


def gradient_check(model, encoded, label, eps=1e-4, n_samples=200, seed=0, parameter_names=None):
    """Max relative gradient error over sampled parameters of every tensor."""
    errors = gradient_errors(model, encoded, label, eps, n_samples, seed, parameter_names)
    return max(errors.values()) if errors else 0.0
