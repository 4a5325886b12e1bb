"""Per-token BIO tagging baseline: linear head, token-level CE, BIO decoding."""

from __future__ import annotations

import warnings

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .docmodel import Document
from .errors import AnnotationError

OUTSIDE = "O"


class TagSet:
    """O at index 0, then B-f / I-f per field in schema order."""

    def __init__(self, field_ids):
        self.field_ids = list(field_ids)
        self.labels = [OUTSIDE]
        for f in self.field_ids:
            self.labels.append(f"B-{f}")
            self.labels.append(f"I-{f}")
        self._index = {lab: i for i, lab in enumerate(self.labels)}

    def __len__(self) -> int:
        return len(self.labels)

    def id_of(self, label: str) -> int:
        if label not in self._index:
            raise AnnotationError(f"unknown tag label {label!r}")
        return self._index[label]

    def label_of(self, tag_id: int) -> str:
        return self.labels[tag_id]


def init_tag_head(store: ParamStore, hidden_size: int, num_tags: int, rng: np.random.Generator) -> None:
    store.add("taghead/w", rng.normal(0.0, 0.02, size=(hidden_size, num_tags)))
    store.add("taghead/b", np.zeros(num_tags))


def tag_forward(hidden: Tensor, params: ParamStore) -> Tensor:
    """Per-token tag logits [n x num_tags]."""
    return ad.matmul(hidden, params["taghead/w"]) + params["taghead/b"]


def tag_loss(logits: Tensor, gold_tags: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean token-level cross entropy over unmasked positions.

    Callers mask out padding and the null token. A fully masked document
    contributes 0 (with a warning) rather than dividing by zero.
    """
    gold_tags = np.asarray(gold_tags, dtype=np.intp)
    num_tags = logits.value.shape[1]
    if gold_tags.min(initial=0) < 0 or gold_tags.max(initial=0) >= num_tags:
        raise IndexError(f"gold tag id outside 0..{num_tags - 1}")
    rows = np.flatnonzero(np.asarray(mask) > 0)
    if rows.size == 0:
        warnings.warn("tag_loss over a fully masked document; defining the loss as 0")
        return ad.constant(0.0)
    return ad.cross_entropy_rows(logits, gold_tags, rows)


def tag_loss_mask(doc: Document, max_seq_len: int) -> np.ndarray:
    """Real tokens only: padding and the null token are excluded from the loss."""
    mask = np.zeros(max_seq_len)
    mask[1 : len(doc.tokens)] = 1.0
    return mask


def bio_encode(doc: Document, tagset: TagSet, max_seq_len: int) -> np.ndarray:
    """Gold tag ids for every position; O on the null token and padding."""
    tags = np.zeros(max_seq_len, dtype=np.intp)
    for ann in doc.annotations:
        for s, e in ann.spans:
            if e >= max_seq_len:
                raise AnnotationError(f"{doc.doc_id}: span ({s},{e}) exceeds max_seq_len {max_seq_len}")
            for pos in range(s, e + 1):
                if tags[pos] != 0:
                    raise AnnotationError(f"{doc.doc_id}: overlapping entities at token {pos}")
                prefix = "B" if pos == s else "I"
                tags[pos] = tagset.id_of(f"{prefix}-{ann.field_id}")
    return tags


def bio_decode(tags: list[str], strict: bool = False) -> list[tuple[str, int, int]]:
    """Tags for real tokens (tags[0] is token 1) -> (field_id, start, end) entities.

    Lenient by default: an I-f with no live run of the same field opens a
    new entity; with strict=True it is treated as O instead.
    """
    entities: list[tuple[str, int, int]] = []
    cur_field: str | None = None
    cur_start = 0
    cur_end = 0

    def close():
        nonlocal cur_field
        if cur_field is not None:
            entities.append((cur_field, cur_start, cur_end))
            cur_field = None

    for i, tag in enumerate(tags, start=1):
        if tag == OUTSIDE:
            close()
            continue
        prefix, fid = tag.split("-", 1)
        if prefix == "B":
            close()
            cur_field, cur_start, cur_end = fid, i, i
        elif prefix == "I":
            if cur_field == fid:
                cur_end = i
            elif strict:
                close()
            else:
                close()
                cur_field, cur_start, cur_end = fid, i, i
        else:
            raise AnnotationError(f"malformed BIO tag {tag!r}")
    close()
    return entities


def decode_document_tags(logits: Tensor, doc: Document, tagset: TagSet) -> list[tuple[str, int, int]]:
    """Argmax tags for the document's real tokens, decoded to entities."""
    n_real = doc.num_real_tokens
    pred_ids = np.asarray(logits.value[1 : 1 + n_real]).argmax(axis=1)
    return bio_decode([tagset.label_of(int(t)) for t in pred_ids])
