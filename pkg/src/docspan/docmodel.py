"""Document, geometry and annotation data model.

Coordinates live on a normalized 0-1000 grid with the origin at the top
left. Token position 0 is always a synthetic null token; it is the
training target for "no (more) answers" and never belongs to an entity.
Entity spans are therefore 1-based inclusive (start, end) pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import AnnotationError

GRID = 1000

PAD_TEXT = "[PAD]"
NULL_TEXT = "[NULL]"
UNK_TEXT = "[UNK]"


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


@dataclass(frozen=True)
class BoundingBox:
    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        for name in ("x0", "y0", "x1", "y1"):
            v = getattr(self, name)
            if not isinstance(v, int):
                object.__setattr__(self, name, int(v))
        if not (0 <= self.x0 <= self.x1 <= GRID and 0 <= self.y0 <= self.y1 <= GRID):
            raise ValueError(f"invalid bounding box ({self.x0},{self.y0},{self.x1},{self.y1})")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x0, self.y0, self.x1, self.y1)


NULL_BOX = BoundingBox(0, 0, 0, 0)


@dataclass(frozen=True)
class Token:
    text: str
    box: BoundingBox
    line_id: int = 0

    def __post_init__(self):
        if not self.text:
            raise AnnotationError("token text must be non-empty")


NULL_TOKEN = Token(NULL_TEXT, NULL_BOX, line_id=-1)


@dataclass(frozen=True)
class EntityAnnotation:
    """Gold spans for one field in one document, in chain order."""

    field_id: str
    spans: tuple[tuple[int, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "spans", tuple((int(s), int(e)) for s, e in self.spans))
        if not self.field_id:
            raise AnnotationError("annotation field_id must be non-empty")
        for s, e in self.spans:
            if not (1 <= s <= e):
                raise AnnotationError(f"{self.field_id}: span ({s},{e}) must satisfy 1 <= start <= end")
        ordered = sorted(self.spans)
        for (s1, e1), (s2, e2) in zip(ordered, ordered[1:]):
            if s2 <= e1:
                raise AnnotationError(f"{self.field_id}: overlapping spans ({s1},{e1}) and ({s2},{e2})")


@dataclass(frozen=True)
class Document:
    doc_id: str
    tokens: tuple[Token, ...]  # tokens[0] is the null token
    page_width: int
    page_height: int
    annotations: tuple[EntityAnnotation, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "annotations", tuple(self.annotations))
        if not self.tokens or self.tokens[0].text != NULL_TEXT:
            raise AnnotationError(f"{self.doc_id}: token 0 must be the null token")

    @property
    def num_real_tokens(self) -> int:
        return len(self.tokens) - 1

    def validate(self) -> None:
        """Check that every annotation span points at real tokens of this document."""
        n = len(self.tokens)
        for ann in self.annotations:
            for s, e in ann.spans:
                if e >= n:
                    raise AnnotationError(
                        f"{self.doc_id}: {ann.field_id} span ({s},{e}) exceeds {n - 1} real tokens"
                    )


@dataclass(frozen=True)
class FieldSchema:
    dataset_id: str
    field_ids: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "field_ids", tuple(self.field_ids))
        if len(set(self.field_ids)) != len(self.field_ids):
            raise AnnotationError(f"{self.dataset_id}: duplicate field ids in schema")


class Vocabulary:
    """Closed whole-word vocabulary with reserved pad/null/unknown symbols."""

    def __init__(self, words: list[str]):
        if words[:3] != [PAD_TEXT, NULL_TEXT, UNK_TEXT]:
            raise ValueError("vocabulary must start with the reserved symbols")
        self._words = list(words)
        self._index = {w: i for i, w in enumerate(self._words)}
        if len(self._index) != len(self._words):
            raise ValueError("vocabulary contains duplicate words")

    @classmethod
    def build(cls, texts) -> "Vocabulary":
        reserved = {PAD_TEXT, NULL_TEXT, UNK_TEXT}
        ordinary = sorted({t for t in texts if t not in reserved})
        return cls([PAD_TEXT, NULL_TEXT, UNK_TEXT] + ordinary)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def null_id(self) -> int:
        return 1

    @property
    def unk_id(self) -> int:
        return 2

    def __len__(self) -> int:
        return len(self._words)

    def id_of(self, text: str) -> int:
        return self._index.get(text, self.unk_id)

    def words(self) -> list[str]:
        return list(self._words)


def split_line_to_words(line_box: BoundingBox, word_texts: list[str]) -> list[BoundingBox]:
    """Partition a line box horizontally, proportionally to word lengths.

    Word i weighs len(word_texts[i]) characters; a one-character separator
    between consecutive words is carved out and discarded. Interval
    boundaries are round-half-up of the cumulative fraction of the line
    width, so the first box starts at x0 and the last ends at x1.
    """
    if not word_texts:
        raise AnnotationError("split_line_to_words requires at least one word")
    if any(not w for w in word_texts):
        raise AnnotationError("split_line_to_words got an empty word")
    weights: list[int] = []
    for i, w in enumerate(word_texts):
        if i > 0:
            weights.append(1)  # separator
        weights.append(len(w))
    total = sum(weights)
    width = line_box.x1 - line_box.x0

    boundaries = [line_box.x0]
    cum = 0
    for w in weights:
        cum += w
        boundaries.append(line_box.x0 + _round_half_up(cum / total * width))

    boxes = []
    for i in range(len(word_texts)):
        lo = boundaries[2 * i]
        hi = boundaries[2 * i + 1]
        boxes.append(BoundingBox(lo, line_box.y0, hi, line_box.y1))
    return boxes


def normalize_box(pixel_box, page_width: int, page_height: int) -> BoundingBox:
    """Map pixel coordinates to the 0-1000 grid (round half-up, clamped)."""
    if page_width <= 0 or page_height <= 0:
        raise ValueError(f"page dimensions must be positive, got {page_width}x{page_height}")
    x0, y0, x1, y1 = pixel_box

    def norm(v, dim):
        return min(GRID, max(0, _round_half_up(v * GRID / dim)))

    return BoundingBox(norm(x0, page_width), norm(y0, page_height), norm(x1, page_width), norm(y1, page_height))


def gold_chain_order(annotation: EntityAnnotation, doc: Document) -> EntityAnnotation:
    """Sort spans top-to-bottom then left-to-right by their start token's box.

    Ties fall back to token index, so the result is a stable permutation
    and the operation is idempotent.
    """
    def key(span):
        tok = doc.tokens[span[0]]
        return (tok.box.y0, tok.box.x0, span[0])

    return EntityAnnotation(annotation.field_id, tuple(sorted(annotation.spans, key=key)))


def tokenize(raw_words, vocab: Vocabulary | None = None, max_seq_len: int = 512):
    """Build the model-facing token sequence from (text, box[, line_id]) words.

    Prepends the null token, truncates to max_seq_len - 1 real tokens, and
    (when a vocabulary is given) maps texts to ids with unknowns collapsed
    to the unknown symbol.

    Returns (tokens, ids, num_truncated); ids is None without a vocabulary.
    """
    limit = max_seq_len - 1
    tokens = [NULL_TOKEN]
    num_truncated = max(0, len(raw_words) - limit)
    for item in raw_words[:limit]:
        if len(item) == 3:
            text, box, line_id = item
        else:
            text, box = item
            line_id = 0
        tokens.append(Token(text, box, line_id))
    ids = None
    if vocab is not None:
        ids = [vocab.null_id] + [vocab.id_of(t.text) for t in tokens[1:]]
    return tokens, ids, num_truncated
