"""Recursive multi-answer span decoding and its teacher-forced loss.

The first answer for a field comes from the field's query vector; every
following answer is scored by the hidden state of the previous answer's
start token. Decoding stops on the null span (0,0), on an exact repeat
of an earlier span, or at the chain-length cap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .errors import AnnotationError
from .spanhead import SpanPrediction, predict_span, score_span, span_loss

DEFAULT_MAX_CHAIN_LEN = 32

NULL_STOP = "null_stop"
REPEAT_STOP = "repeat_stop"
MAX_LEN_STOP = "max_len_stop"


@dataclass
class LinkChain:
    spans: list[SpanPrediction] = field(default_factory=list)
    terminated: bool = True
    termination_reason: str = NULL_STOP

    def as_tuples(self) -> list[tuple[int, int]]:
        return [(p.start, p.end) for p in self.spans]


@dataclass(frozen=True)
class ChainExample:
    """Gold multi-answer chain for one (document, field) pair."""

    field_id: str
    spans: tuple[tuple[int, int], ...]


def decode_chain(
    query: Tensor,
    hidden: Tensor,
    params: ParamStore,
    mask: np.ndarray,
    max_chain_len: int = DEFAULT_MAX_CHAIN_LEN,
    max_span_len: int | None = None,
) -> LinkChain:
    """Greedy recursive decoding; never returns null or duplicate spans."""
    kwargs = {} if max_span_len is None else {"max_span_len": max_span_len}
    chain = LinkChain()
    seen: set[tuple[int, int]] = set()
    q = query
    while len(chain.spans) < max_chain_len:
        pred = predict_span(score_span(q, hidden, params, mask), **kwargs)
        if pred.is_null:
            chain.termination_reason = NULL_STOP
            return chain
        key = (pred.start, pred.end)
        if key in seen:
            chain.termination_reason = REPEAT_STOP
            return chain
        seen.add(key)
        chain.spans.append(pred)
        q = ad.slice_rows(hidden, pred.start, pred.start + 1)
    chain.termination_reason = MAX_LEN_STOP
    return chain


def chain_loss(
    example: ChainExample,
    hidden: Tensor,
    query: Tensor,
    params: ParamStore,
    mask: np.ndarray,
) -> Tensor:
    """Teacher-forced chain loss, averaged over the k+1 steps.

    Step 0 scores with the field query against gold span 1; step i >= 1
    scores with the hidden state of gold start i against gold span i+1;
    the final step is supervised toward the null span so the model learns
    to stop. A field with no gold spans is a single step toward (0,0).
    """
    n = hidden.value.shape[0]
    for s, e in example.spans:
        if s < 1 or e >= n or mask[e] <= 0 or mask[s] <= 0:
            raise AnnotationError(f"{example.field_id}: gold span ({s},{e}) out of range for this document")

    targets = list(example.spans) + [(0, 0)]
    q = query
    total: Tensor | None = None
    for i, gold in enumerate(targets):
        step = span_loss(score_span(q, hidden, params, mask), gold)
        total = step if total is None else total + step
        if i < len(example.spans):
            q = ad.slice_rows(hidden, example.spans[i][0], example.spans[i][0] + 1)
    return total * (1.0 / len(targets))
