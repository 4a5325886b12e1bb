"""Model bundles: encoder + task head + vocabulary, with checkpoint round-trip."""

from __future__ import annotations

import numpy as np

from . import __version__
from .autodiff import ParamStore, Tensor
from .checkpoint import load_archive, save_archive
from .decoder import DEFAULT_MAX_CHAIN_LEN, LinkChain, decode_chain
from .docmodel import Document, Vocabulary
from .encoder import EncoderConfig, document_mask, embed, encode, init_encoder_params
from .errors import ConfigError
from .metrics import Entity
from .seqlabel import TagSet, decode_document_tags, init_tag_head, tag_forward
from .spanhead import DEFAULT_MAX_SPAN_LEN, QueryRegistry, init_span_head

SPAN = "span"
SEQLABEL = "seqlabel"


class _BaseModel:
    model_type = ""

    def __init__(self, config: EncoderConfig, vocab: Vocabulary, store: ParamStore):
        self.config = config
        self.vocab = vocab
        self.store = store

    def encode_doc(self, doc: Document, train: bool = False, rng: np.random.Generator | None = None):
        mask = document_mask(doc, self.config)
        x0 = embed(doc, self.store, self.config, self.vocab)
        hidden = encode(x0, self.store, self.config, mask, train=train, rng=rng)
        return hidden, mask

    def _metadata(self) -> dict:
        return {
            "model_type": self.model_type,
            "encoder_config": self.config.to_dict(),
            "vocab": self.vocab.words(),
            "version": __version__,
        }

    def save(self, path) -> None:
        save_archive(path, self.store.state(), self._metadata())


class SpanModel(_BaseModel):
    model_type = SPAN

    def __init__(
        self,
        config: EncoderConfig,
        vocab: Vocabulary,
        seed: int = 0,
        max_span_len: int = DEFAULT_MAX_SPAN_LEN,
        max_chain_len: int = DEFAULT_MAX_CHAIN_LEN,
        _store: ParamStore | None = None,
        _registry_fields=None,
        _frozen: bool = False,
    ):
        init_rng, query_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
        if _store is None:
            store = init_encoder_params(config, init_rng)
            init_span_head(store, config.hidden_size, init_rng)
        else:
            store = _store
        super().__init__(config, vocab, store)
        self.max_span_len = max_span_len
        self.max_chain_len = max_chain_len
        self.registry = QueryRegistry(store, config.hidden_size, query_rng, frozen=_frozen)
        if _registry_fields:
            self.registry.adopt(_registry_fields)

    def query(self, field_id: str) -> Tensor:
        return self.registry.get(field_id)

    def predict_doc(self, doc: Document, field_ids) -> tuple[list[Entity], dict[str, LinkChain]]:
        """Decode one chain per field; every chain link is one predicted entity."""
        hidden, mask = self.encode_doc(doc)
        entities: list[Entity] = []
        chains: dict[str, LinkChain] = {}
        for fid in field_ids:
            chain = decode_chain(
                self.registry.get(fid),
                hidden,
                self.store,
                mask,
                max_chain_len=self.max_chain_len,
                max_span_len=self.max_span_len,
            )
            chains[fid] = chain
            entities.extend((fid, s, e) for s, e in chain.as_tuples())
        return entities, chains

    def _metadata(self) -> dict:
        meta = super()._metadata()
        meta["query_fields"] = self.registry.field_ids
        meta["max_span_len"] = self.max_span_len
        meta["max_chain_len"] = self.max_chain_len
        return meta


class SeqLabelModel(_BaseModel):
    model_type = SEQLABEL

    def __init__(
        self,
        config: EncoderConfig,
        vocab: Vocabulary,
        tagset: TagSet,
        seed: int = 0,
        _store: ParamStore | None = None,
    ):
        init_rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
        if _store is None:
            store = init_encoder_params(config, init_rng)
            init_tag_head(store, config.hidden_size, len(tagset), init_rng)
        else:
            store = _store
        super().__init__(config, vocab, store)
        self.tagset = tagset

    def predict_doc(self, doc: Document) -> list[Entity]:
        hidden, _ = self.encode_doc(doc)
        logits = tag_forward(hidden, self.store)
        return decode_document_tags(logits, doc, self.tagset)

    def _metadata(self) -> dict:
        meta = super()._metadata()
        meta["tag_fields"] = self.tagset.field_ids
        return meta


def load_model(path, trainable: bool = False, seed: int = 0):
    """Restore a SpanModel or SeqLabelModel from a checkpoint archive."""
    tensors, meta = load_archive(path)
    model_type = meta.get("model_type")
    config = EncoderConfig.from_dict(meta["encoder_config"])
    vocab = Vocabulary(meta["vocab"])
    store = ParamStore()
    store.load_state(tensors)
    if model_type == SPAN:
        return SpanModel(
            config,
            vocab,
            seed=seed,
            max_span_len=int(meta.get("max_span_len", DEFAULT_MAX_SPAN_LEN)),
            max_chain_len=int(meta.get("max_chain_len", DEFAULT_MAX_CHAIN_LEN)),
            _store=store,
            _registry_fields=meta.get("query_fields", []),
            _frozen=not trainable,
        )
    if model_type == SEQLABEL:
        return SeqLabelModel(config, vocab, TagSet(meta.get("tag_fields", [])), seed=seed, _store=store)
    raise ConfigError(f"{path}: unknown model_type {model_type!r} in checkpoint")


def load_pretrained_metadata(path) -> tuple[EncoderConfig, Vocabulary, dict]:
    tensors, meta = load_archive(path)
    return EncoderConfig.from_dict(meta["encoder_config"]), Vocabulary(meta["vocab"]), tensors


def transfer_encoder(model, tensors: dict) -> int:
    """Copy encoder weights from a checkpoint into a (possibly different-head) model."""
    copied = 0
    for name, arr in tensors.items():
        if name.startswith("encoder/") and name in model.store:
            target = model.store[name]
            if target.value.shape != arr.shape:
                raise ConfigError(f"pretrained tensor {name!r} has shape {arr.shape}, model expects {target.value.shape}")
            target.value[...] = arr
            copied += 1
    return copied
