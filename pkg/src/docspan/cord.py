"""Loader for CORD-style receipt ground truth.

Per-receipt JSON files: valid_line entries carry a category and a list
of words, each word a quadrilateral (x1..x4, y1..y4) plus text. Quads
become axis-aligned rectangles (min/max), normalized against the image
size. The words of one line+category form one span; spans of the same
category across lines form one annotation in chain order, namespaced
"cord/<category>". Group-level structure is flattened.
"""

from __future__ import annotations

import json
import warnings
from pathlib import Path

from .datasets import Dataset
from .docmodel import (
    Document,
    EntityAnnotation,
    FieldSchema,
    NULL_TOKEN,
    Token,
    gold_chain_order,
    normalize_box,
)
from .errors import DataError

EXPECTED_SPLIT_SIZES = {"train": 800, "dev": 100, "validation": 100, "test": 100}


def _quad_to_rect(quad: dict) -> tuple[float, float, float, float]:
    xs = [quad["x1"], quad["x2"], quad["x3"], quad["x4"]]
    ys = [quad["y1"], quad["y2"], quad["y3"], quad["y4"]]
    return min(xs), min(ys), max(xs), max(ys)


def _page_size(rec: dict, override: tuple[int, int] | None) -> tuple[int, int]:
    if override is not None:
        return override
    meta = rec.get("meta", {})
    size = meta.get("image_size", {})
    width = size.get("width", meta.get("width"))
    height = size.get("height", meta.get("height"))
    if not width or not height:
        raise DataError("no image size in metadata (pass an explicit page-size override)")
    return int(width), int(height)


def _parse_receipt(path: Path, doc_id: str, page_size: tuple[int, int] | None) -> Document:
    with open(path, "r", encoding="utf-8") as f:
        rec = json.load(f)
    width, height = _page_size(rec, page_size)

    tokens = [NULL_TOKEN]
    line_spans: list[tuple[str, int, int]] = []  # (category, start, end)
    for line_id, line in enumerate(rec.get("valid_line", [])):
        category = str(line.get("category", "") or "")
        start = len(tokens)
        for word in line.get("words", []):
            text = str(word.get("text", "")).strip()
            if not text:
                continue
            rect = _quad_to_rect(word["quad"])
            box = normalize_box(rect, width, height)
            tokens.append(Token(text, box, line_id=line_id))
        end = len(tokens) - 1
        if end >= start and category:
            line_spans.append((category, start, end))

    bare = Document(doc_id=doc_id, tokens=tuple(tokens), page_width=width, page_height=height)
    by_category: dict[str, list[tuple[int, int]]] = {}
    for category, start, end in line_spans:
        by_category.setdefault(category, []).append((start, end))
    annotations = tuple(
        gold_chain_order(EntityAnnotation(f"cord/{cat}", tuple(spans)), bare)
        for cat, spans in sorted(by_category.items())
    )
    doc = Document(
        doc_id=doc_id,
        tokens=tuple(tokens),
        page_width=width,
        page_height=height,
        annotations=annotations,
    )
    doc.validate()
    return doc


def load_cord(root, split: str, page_size: tuple[int, int] | None = None) -> Dataset:
    """Load one CORD split; file order is the document order (sorted by name).

    Malformed files are reported and skipped so one bad receipt does not
    sink the load; a split-size mismatch only warns.
    """
    root = Path(root)
    candidates = [root / split / "json", root / split]
    json_dir = next((d for d in candidates if d.is_dir()), None)
    if json_dir is None:
        raise DataError(f"no CORD ground-truth directory under {root} for split {split!r}")
    files = sorted(json_dir.glob("*.json"))
    if not files:
        raise DataError(f"{json_dir}: no ground-truth JSON files")

    documents = []
    failures: list[str] = []
    for path in files:
        doc_id = f"cord-{split}-{path.stem}"
        try:
            documents.append(_parse_receipt(path, doc_id, page_size))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError, DataError) as e:
            failures.append(f"{path.name}: {e}")
    if failures:
        summary = "; ".join(failures[:5])
        warnings.warn(f"skipped {len(failures)} malformed CORD file(s): {summary}")
    if not documents:
        raise DataError(f"{json_dir}: every ground-truth file failed to parse")

    expected = EXPECTED_SPLIT_SIZES.get(split)
    if expected is not None and len(documents) != expected:
        warnings.warn(f"CORD {split} split has {len(documents)} documents, expected {expected}")

    field_ids = sorted({ann.field_id for doc in documents for ann in doc.annotations})
    dataset = Dataset("cord", FieldSchema("cord", tuple(field_ids)), documents, split=split)
    dataset.validate()
    return dataset
