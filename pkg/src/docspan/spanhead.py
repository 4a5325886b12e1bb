"""Query registry and the bilinear start/end span scorer.

One learnable query vector per extraction field, kept apart from the
encoder so the same encoder can serve any number of datasets. Scoring is
a bilinear form per endpoint: start_logits[i] = q' W_start h_i (same for
end), with the softmax taken over sequence positions, not tag classes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .errors import ConfigError

DEFAULT_MAX_SPAN_LEN = 30


@dataclass
class SpanScores:
    start_logits: Tensor  # shape [n]
    end_logits: Tensor  # shape [n]


@dataclass(frozen=True)
class SpanPrediction:
    start: int
    end: int
    score: float

    @property
    def is_null(self) -> bool:
        return self.start == 0 and self.end == 0


def init_span_head(store: ParamStore, hidden_size: int, rng: np.random.Generator) -> None:
    store.add("head/w_start", rng.normal(0.0, 0.02, size=(hidden_size, hidden_size)))
    store.add("head/w_end", rng.normal(0.0, 0.02, size=(hidden_size, hidden_size)))


class QueryRegistry:
    """Field id -> learnable query vector, namespaced as "<dataset>/<field>".

    New ids may only be registered while the registry is unfrozen
    (training); lookups of unknown ids on a frozen registry fail loudly so
    inference never invents queries.
    """

    def __init__(self, store: ParamStore, hidden_size: int, rng: np.random.Generator, frozen: bool = False):
        self._store = store
        self._hidden = hidden_size
        self._rng = rng
        self._order: list[str] = []
        self.frozen = frozen

    @property
    def field_ids(self) -> list[str]:
        return list(self._order)

    def __contains__(self, field_id: str) -> bool:
        return f"query/{field_id}" in self._store

    def register(self, field_id: str) -> Tensor:
        name = f"query/{field_id}"
        if name in self._store:
            return self._store[name]
        if self.frozen:
            raise ConfigError(f"unknown field {field_id!r}: registry is frozen at inference time")
        t = self._store.add(name, self._rng.normal(0.0, 0.02, size=self._hidden))
        self._order.append(field_id)
        return t

    def get(self, field_id: str) -> Tensor:
        name = f"query/{field_id}"
        if name not in self._store:
            if self.frozen:
                raise ConfigError(f"unknown field {field_id!r}: registry is frozen at inference time")
            return self.register(field_id)
        return self._store[name]

    def adopt(self, field_ids) -> None:
        """Record ids already present in the store (checkpoint restore path)."""
        for fid in field_ids:
            if f"query/{fid}" not in self._store:
                raise ConfigError(f"checkpoint manifest lists {fid!r} but no query tensor exists")
            if fid not in self._order:
                self._order.append(fid)


def score_span(q: Tensor, hidden: Tensor, params: ParamStore, mask: np.ndarray) -> SpanScores:
    """Bilinear start/end logits of the query against every position.

    `q` is either a registry query or a token hidden state (the recursive
    step); `mask` marks real positions, padding is pushed to a large
    negative logit before any softmax.
    """
    c = hidden.value.shape[1]
    if q.value.ndim == 1:
        q = ad.reshape(q, (1, q.value.shape[0]))
    if q.value.shape != (1, c):
        raise ad.ShapeError(f"query shape {q.value.shape} incompatible with hidden size {c}")
    bias = ad.constant(np.where(mask > 0, 0.0, ad.NEG_MASK))
    ht = ad.transpose(hidden)
    start = ad.reshape(ad.matmul(ad.matmul(q, params["head/w_start"]), ht), (-1,)) + bias
    end = ad.reshape(ad.matmul(ad.matmul(q, params["head/w_end"]), ht), (-1,)) + bias
    return SpanScores(start_logits=start, end_logits=end)


def span_loss(scores: SpanScores, gold: tuple[int, int]) -> Tensor:
    """Cross entropy over all positions for the start index plus the end index."""
    s, e = gold
    return ad.cross_entropy(scores.start_logits, s) + ad.cross_entropy(scores.end_logits, e)


def predict_span(scores: SpanScores, max_span_len: int = DEFAULT_MAX_SPAN_LEN) -> SpanPrediction:
    """Joint argmax of start+end logits over the null span and all valid pairs.

    Candidates are (0,0) plus every (s,e) with 1 <= s <= e <= min(s +
    max_span_len, n-1); ties go to the smaller start, then smaller end,
    which also means exact ties against the null span keep the null.
    """
    start = np.asarray(scores.start_logits.value, dtype=np.float64)
    end = np.asarray(scores.end_logits.value, dtype=np.float64)
    n = start.shape[0]

    best_score = start[0] + end[0]
    best = SpanPrediction(0, 0, float(best_score))
    if n == 1:
        return best

    # Windowed end maxima: row s holds end logits for e in [s, s+max_span_len].
    width = max_span_len + 1
    padded = np.full(n + width, -np.inf)
    padded[:n] = end
    idx = np.arange(1, n)[:, None] + np.arange(width)[None, :]
    windows = padded[idx]
    best_e_off = windows.argmax(axis=1)
    row_scores = start[1:] + windows[np.arange(n - 1), best_e_off]
    s_off = int(row_scores.argmax())
    if row_scores[s_off] > best_score:
        s = s_off + 1
        e = s + int(best_e_off[s_off])
        best = SpanPrediction(s, e, float(row_scores[s_off]))
    return best
