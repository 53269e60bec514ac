"""
AnchorBERT: a small BERT-style encoder that predicts the anchor label.

Anchor-code tokens and padding are hidden from every attention head through
an additive mask, so the [CLS] logit cannot depend on what sits at those
positions.
"""

import math
from dataclasses import asdict, dataclass, fields

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from ..cohort import PAD_ID
from ..exceptions import ExperimentConfigError, ShapeError, VocabularyMismatchError

MASK_VALUE = -1e4


@dataclass(frozen=True)
class TransformerConfig:
    hidden_size: int = 48
    n_attention_layers: int = 2
    n_heads: int = 4
    intermediate_size: int = 96
    n_hidden_layers: int = 0
    hidden_dropout: float = 0.2
    attention_dropout: float = 0.22
    init_range: float = 0.02
    max_len: int = 64
    learning_rate: float = 1e-4
    warmup_proportion: float = 0.1
    weight_decay: float = 0.001
    batch_size: int = 64
    n_epochs: int = 10
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.hidden_size % self.n_heads:
            raise ExperimentConfigError("hidden_size must be divisible by n_heads")
        if not (0.0 <= self.hidden_dropout < 1.0 and 0.0 <= self.attention_dropout < 1.0):
            raise ExperimentConfigError("dropout rates must lie in [0, 1)")
        if self.max_len < 3:
            raise ExperimentConfigError("max_len must leave room for [CLS], a code and [SEP]")
        if self.dtype not in ("float32", "float64"):
            raise ExperimentConfigError("dtype must be float32 or float64")
        if min(self.n_attention_layers, self.batch_size, self.n_epochs) < 1 or self.n_hidden_layers < 0:
            raise ExperimentConfigError("layer counts, batch size and epochs must be positive")

    @classmethod
    def large(cls, **overrides):
        """The large preset: hidden 360, 12 heads, 512 intermediate, batch 256, 256 tokens."""
        values = dict(hidden_size=360, n_attention_layers=6, n_heads=12, intermediate_size=512,
                      max_len=256, batch_size=256)
        values.update(overrides)
        return cls(**values)

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ExperimentConfigError(f"unknown transformer settings: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self):
        return asdict(self)

    @property
    def torch_dtype(self):
        return torch.float64 if self.dtype == "float64" else torch.float32


def attention_weights(q, k, mask=None):
    """Row-wise softmax of q k^T / sqrt(d_k) + mask, with max subtraction."""
    if q.shape[-1] != k.shape[-1] or q.shape[:-2] != k.shape[:-2]:
        raise ShapeError(f"query {tuple(q.shape)} and key {tuple(k.shape)} shapes disagree")
    scores = q @ k.transpose(-2, -1) / math.sqrt(k.shape[-1])
    if mask is not None:
        scores = scores + mask
    scores = scores - scores.amax(dim=-1, keepdim=True)
    weights = scores.exp()
    return weights / weights.sum(dim=-1, keepdim=True)


def attention(q, k, v, mask=None):
    """softmax(q k^T / sqrt(d_k) + mask) v."""
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"key {tuple(k.shape)} and value {tuple(v.shape)} lengths disagree")
    return attention_weights(q, k, mask) @ v


def build_anchor_mask(token_ids, anchor_token_ids):
    """
    Additive key mask of shape (batch, 1, 1, length).

    Anchor and [PAD] keys get ``MASK_VALUE``; every head and layer shares it.
    """
    token_ids = torch.as_tensor(token_ids)
    if token_ids.dim() == 1:
        token_ids = token_ids.unsqueeze(0)
    hidden = token_ids == PAD_ID
    if len(anchor_token_ids):
        anchors = torch.as_tensor(list(anchor_token_ids), dtype=token_ids.dtype)
        hidden = hidden | torch.isin(token_ids, anchors)
    mask = torch.zeros(token_ids.shape, dtype=torch.get_default_dtype())
    mask[hidden] = MASK_VALUE
    return mask[:, None, None, :]


def sinusoidal_table(n_positions, dim):
    position = np.arange(n_positions)[:, None]
    div = np.exp(np.arange(0, dim, 2) * (-math.log(10000.0) / dim))
    table = np.zeros((n_positions, dim))
    table[:, 0::2] = np.sin(position * div)
    table[:, 1::2] = np.cos(position * div[: dim // 2])
    return torch.from_numpy(table)


class Embeddings(nn.Module):
    def __init__(self, vocab_size, config):
        super().__init__()
        self.token = nn.Embedding(vocab_size, config.hidden_size)
        self.segment = nn.Embedding(2, config.hidden_size)
        # one fixed vector per visit index
        self.register_buffer("position", sinusoidal_table(config.max_len, config.hidden_size).float())
        self.norm = nn.LayerNorm(config.hidden_size, eps=1e-12)
        self.dropout = nn.Dropout(config.hidden_dropout)

    def forward(self, token_ids, position_ids, segment_ids):
        x = self.token(token_ids) + self.position[position_ids] + self.segment(segment_ids)
        return self.dropout(self.norm(x))


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, config):
        super().__init__()
        self.n_heads = config.n_heads
        self.head_dim = config.hidden_size // config.n_heads
        self.query = nn.Linear(config.hidden_size, config.hidden_size)
        self.key = nn.Linear(config.hidden_size, config.hidden_size)
        self.value = nn.Linear(config.hidden_size, config.hidden_size)
        self.output = nn.Linear(config.hidden_size, config.hidden_size)
        self.dropout = nn.Dropout(config.attention_dropout)

    def _split(self, x):
        batch, length, _ = x.shape
        return x.view(batch, length, self.n_heads, self.head_dim).transpose(1, 2)

    def forward(self, x, mask):
        q, k, v = self._split(self.query(x)), self._split(self.key(x)), self._split(self.value(x))
        weights = self.dropout(attention_weights(q, k, mask))
        context = (weights @ v).transpose(1, 2).reshape(x.shape)
        return self.output(context)


class EncoderLayer(nn.Module):
    def __init__(self, config):
        super().__init__()
        self.attention = MultiHeadSelfAttention(config)
        self.attention_norm = nn.LayerNorm(config.hidden_size, eps=1e-12)
        self.intermediate = nn.Linear(config.hidden_size, config.intermediate_size)
        self.output = nn.Linear(config.intermediate_size, config.hidden_size)
        self.output_norm = nn.LayerNorm(config.hidden_size, eps=1e-12)
        self.dropout = nn.Dropout(config.hidden_dropout)

    def forward(self, x, mask):
        x = self.attention_norm(x + self.dropout(self.attention(x, mask)))
        return self.output_norm(x + self.dropout(self.output(F.gelu(self.intermediate(x)))))


class AnchorBERT(nn.Module):
    def __init__(self, vocab_size, anchor_token_ids, config: TransformerConfig):
        super().__init__()
        self.config = config
        self.vocab_size = vocab_size
        self.register_buffer("anchor_token_ids", torch.tensor(sorted(anchor_token_ids), dtype=torch.long))
        self.embeddings = Embeddings(vocab_size, config)
        self.layers = nn.ModuleList(EncoderLayer(config) for _ in range(config.n_attention_layers))
        self.pooler = nn.ModuleList(nn.Linear(config.hidden_size, config.hidden_size)
                                    for _ in range(config.n_hidden_layers))
        self.head_dropout = nn.Dropout(config.hidden_dropout)
        self.classifier = nn.Linear(config.hidden_size, 1)
        self.apply(self._init_weights)
        # a zero head starts every prediction at 0.5
        nn.init.zeros_(self.classifier.weight)
        nn.init.zeros_(self.classifier.bias)

    def _init_weights(self, module):
        if isinstance(module, (nn.Linear, nn.Embedding)):
            nn.init.normal_(module.weight, mean=0.0, std=self.config.init_range)
        if isinstance(module, nn.Linear):
            nn.init.zeros_(module.bias)
        elif isinstance(module, nn.LayerNorm):
            nn.init.ones_(module.weight)
            nn.init.zeros_(module.bias)

    def forward(self, token_ids, position_ids, segment_ids):
        if token_ids.shape[-1] != self.config.max_len:
            raise ShapeError(f"expected sequences of length {self.config.max_len}, got {token_ids.shape[-1]}")
        if token_ids.numel() and (int(token_ids.min()) < 0 or int(token_ids.max()) >= self.vocab_size):
            raise VocabularyMismatchError("token id outside the model vocabulary")
        mask = build_anchor_mask(token_ids, self.anchor_token_ids.tolist()).to(self.classifier.weight.dtype)
        x = self.embeddings(token_ids, position_ids, segment_ids)
        for layer in self.layers:
            x = layer(x, mask)
        pooled = x[:, 0]
        for dense in self.pooler:
            pooled = F.gelu(dense(pooled))
        return self.classifier(self.head_dropout(pooled)).squeeze(-1)


def forward(model: AnchorBERT, encoded):
    """[CLS] logit for one ``EncodedSequence`` or a whole ``EncodedBatch``."""
    token_ids = torch.as_tensor(encoded.token_ids)
    single = token_ids.dim() == 1
    tensors = [torch.as_tensor(a) for a in (encoded.token_ids, encoded.position_ids, encoded.segment_ids)]
    if single:
        tensors = [t.unsqueeze(0) for t in tensors]
    logits = model(*tensors)
    return logits[0] if single else logits
