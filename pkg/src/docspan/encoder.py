"""Layout-aware contextual encoder.

Input embedding sums a token embedding, a 1-D position embedding and
four coordinate embeddings (one per box edge on the 0-1000 grid); the
stack is standard pre-norm multi-head self-attention with GELU
feed-forward blocks. No image features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .docmodel import Document, Vocabulary
from .errors import ConfigError, NumericError

COORD_VOCAB = 1001  # one embedding row per grid coordinate 0..1000
LN_EPS = 1e-5


@dataclass(frozen=True)
class EncoderConfig:
    hidden_size: int = 64
    num_layers: int = 2
    num_heads: int = 4
    max_seq_len: int = 512
    vocab_size: int = 0
    dropout: float = 0.0

    def __post_init__(self):
        if self.hidden_size <= 0 or self.hidden_size % self.num_heads != 0:
            raise ConfigError(
                f"hidden_size {self.hidden_size} must be a positive multiple of num_heads {self.num_heads}"
            )
        if self.max_seq_len < 2:
            raise ConfigError(f"max_seq_len must be >= 2, got {self.max_seq_len}")
        if self.vocab_size < 3:
            raise ConfigError(f"vocab_size must cover the reserved symbols, got {self.vocab_size}")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    def to_dict(self) -> dict:
        return {
            "hidden_size": self.hidden_size,
            "num_layers": self.num_layers,
            "num_heads": self.num_heads,
            "max_seq_len": self.max_seq_len,
            "vocab_size": self.vocab_size,
            "dropout": self.dropout,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**d)


def init_encoder_params(config: EncoderConfig, rng: np.random.Generator) -> ParamStore:
    """Fresh encoder parameters: normal(0, 0.02) tables/projections, identity layer norms."""
    c = config.hidden_size
    store = ParamStore()

    def table(name, rows):
        store.add(name, rng.normal(0.0, 0.02, size=(rows, c)))

    table("encoder/tok_emb", config.vocab_size)
    table("encoder/pos_emb", config.max_seq_len)
    for coord in ("x0", "y0", "x1", "y1"):
        table(f"encoder/{coord}_emb", COORD_VOCAB)

    for i in range(config.num_layers):
        p = f"encoder/layer{i}"
        store.add(f"{p}/ln1_gain", np.ones(c))
        store.add(f"{p}/ln1_bias", np.zeros(c))
        for mat in ("wq", "wk", "wv", "wo"):
            store.add(f"{p}/{mat}", rng.normal(0.0, 0.02, size=(c, c)))
        for vec in ("bq", "bk", "bv", "bo"):
            store.add(f"{p}/{vec}", np.zeros(c))
        store.add(f"{p}/ln2_gain", np.ones(c))
        store.add(f"{p}/ln2_bias", np.zeros(c))
        store.add(f"{p}/ff_w1", rng.normal(0.0, 0.02, size=(c, 4 * c)))
        store.add(f"{p}/ff_b1", np.zeros(4 * c))
        store.add(f"{p}/ff_w2", rng.normal(0.0, 0.02, size=(4 * c, c)))
        store.add(f"{p}/ff_b2", np.zeros(c))
    return store


def document_mask(doc: Document, config: EncoderConfig) -> np.ndarray:
    """1.0 for real positions (null token included), 0.0 for padding."""
    mask = np.zeros(config.max_seq_len)
    mask[: len(doc.tokens)] = 1.0
    return mask


def embed(doc: Document, params: ParamStore, config: EncoderConfig, vocab: Vocabulary) -> Tensor:
    """Sum token, 1-D position and box-coordinate embeddings; pad to max_seq_len."""
    n = config.max_seq_len
    if len(doc.tokens) > n:
        raise ad.ShapeError(f"{doc.doc_id}: {len(doc.tokens)} tokens exceed max_seq_len {n}")

    ids = np.full(n, vocab.pad_id, dtype=np.intp)
    coords = np.zeros((n, 4), dtype=np.intp)
    for i, tok in enumerate(doc.tokens):
        ids[i] = vocab.null_id if i == 0 else vocab.id_of(tok.text)
        coords[i] = tok.box.as_tuple()
    if coords.min() < 0 or coords.max() >= COORD_VOCAB:
        raise ValueError(f"{doc.doc_id}: box coordinate outside the 0-1000 grid")

    x = ad.gather_rows(params["encoder/tok_emb"], ids)
    x = x + ad.slice_rows(params["encoder/pos_emb"], 0, n)
    for j, coord in enumerate(("x0", "y0", "x1", "y1")):
        x = x + ad.gather_rows(params[f"encoder/{coord}_emb"], coords[:, j])
    return x


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    mu = ad.mean(x, axis=-1, keepdims=True)
    xc = x - mu
    var = ad.mean(xc * xc, axis=-1, keepdims=True)
    inv = ad.pow_scalar(var + LN_EPS, -0.5)
    return xc * inv * gain + bias


def _attention(x: Tensor, params: ParamStore, prefix: str, config: EncoderConfig, key_bias: Tensor) -> Tensor:
    c = config.hidden_size
    d = c // config.num_heads
    scale = 1.0 / math.sqrt(d)
    q = ad.matmul(x, params[f"{prefix}/wq"]) + params[f"{prefix}/bq"]
    k = ad.matmul(x, params[f"{prefix}/wk"]) + params[f"{prefix}/bk"]
    v = ad.matmul(x, params[f"{prefix}/wv"]) + params[f"{prefix}/bv"]
    heads = []
    for h in range(config.num_heads):
        qh = ad.slice_cols(q, h * d, (h + 1) * d)
        kh = ad.slice_cols(k, h * d, (h + 1) * d)
        vh = ad.slice_cols(v, h * d, (h + 1) * d)
        scores = ad.matmul(qh, ad.transpose(kh)) * scale + key_bias
        attn = ad.softmax(scores, axis=-1)
        heads.append(ad.matmul(attn, vh))
    out = heads[0] if len(heads) == 1 else ad.concat(heads, axis=1)
    return ad.matmul(out, params[f"{prefix}/wo"]) + params[f"{prefix}/bo"]


def encode(
    x0: Tensor,
    params: ParamStore,
    config: EncoderConfig,
    attention_mask: np.ndarray,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Run the pre-norm transformer stack; num_layers=0 is the identity.

    `attention_mask` marks real positions with 1. Padded key positions get
    an additive bias large enough that their post-softmax weight underflows
    to exactly zero, so padding can never influence real positions.
    """
    # Bias is constant w.r.t. the graph; broadcasts over query rows.
    key_bias = ad.constant(np.where(attention_mask > 0, 0.0, ad.NEG_MASK)[None, :])
    use_dropout = train and config.dropout > 0.0
    if use_dropout and rng is None:
        raise ConfigError("dropout in training mode requires an rng")

    x = x0
    for i in range(config.num_layers):
        p = f"encoder/layer{i}"
        h = layer_norm(x, params[f"{p}/ln1_gain"], params[f"{p}/ln1_bias"])
        attn = _attention(h, params, p, config, key_bias)
        if use_dropout:
            attn = ad.dropout(attn, config.dropout, rng)
        x = x + attn
        h2 = layer_norm(x, params[f"{p}/ln2_gain"], params[f"{p}/ln2_bias"])
        ff = ad.matmul(ad.gelu(ad.matmul(h2, params[f"{p}/ff_w1"]) + params[f"{p}/ff_b1"]), params[f"{p}/ff_w2"])
        ff = ff + params[f"{p}/ff_b2"]
        if use_dropout:
            ff = ad.dropout(ff, config.dropout, rng)
        x = x + ff
        if not np.all(np.isfinite(x.value)):
            raise NumericError(f"non-finite activations after encoder layer {i}")
    return x
