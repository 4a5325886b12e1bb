"""Dataset container and JSON-lines persistence.

File layout: a header line carrying the schema version and dataset
identity, then one document per line. Real tokens only are serialized;
the null token is reconstructed on load. Key names are part of the
stable on-disk contract:

    header:   {"schema_version", "dataset_id", "split", "field_ids"}
    document: {"doc_id", "page_width", "page_height",
               "tokens": [{"text", "box": [x0,y0,x1,y1], "line_id"}],
               "annotations": [{"field_id", "spans": [[start,end], ...]}]}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .docmodel import BoundingBox, Document, EntityAnnotation, FieldSchema, NULL_TOKEN, Token
from .errors import DataError

SCHEMA_VERSION = 1


@dataclass
class Dataset:
    dataset_id: str
    schema: FieldSchema
    documents: list[Document] = field(default_factory=list)
    split: str = "train"

    def __len__(self) -> int:
        return len(self.documents)

    def validate(self) -> None:
        known = set(self.schema.field_ids)
        for doc in self.documents:
            doc.validate()
            for ann in doc.annotations:
                if ann.field_id not in known:
                    raise DataError(f"{doc.doc_id}: annotation field {ann.field_id!r} not in schema")

    def token_texts(self):
        for doc in self.documents:
            for tok in doc.tokens[1:]:
                yield tok.text


def _doc_to_json(doc: Document) -> dict:
    return {
        "doc_id": doc.doc_id,
        "page_width": doc.page_width,
        "page_height": doc.page_height,
        "tokens": [
            {"text": t.text, "box": list(t.box.as_tuple()), "line_id": t.line_id} for t in doc.tokens[1:]
        ],
        "annotations": [
            {"field_id": a.field_id, "spans": [list(s) for s in a.spans]} for a in doc.annotations
        ],
    }


def _doc_from_json(rec: dict) -> Document:
    tokens = [NULL_TOKEN]
    for t in rec["tokens"]:
        box = BoundingBox(*t["box"])
        tokens.append(Token(t["text"], box, int(t.get("line_id", 0))))
    anns = tuple(
        EntityAnnotation(a["field_id"], tuple((int(s), int(e)) for s, e in a["spans"]))
        for a in rec["annotations"]
    )
    return Document(
        doc_id=rec["doc_id"],
        tokens=tuple(tokens),
        page_width=int(rec["page_width"]),
        page_height=int(rec["page_height"]),
        annotations=anns,
    )


def save_jsonl(dataset: Dataset, path) -> None:
    header = {
        "schema_version": SCHEMA_VERSION,
        "dataset_id": dataset.dataset_id,
        "split": dataset.split,
        "field_ids": list(dataset.schema.field_ids),
    }
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for doc in dataset.documents:
            f.write(json.dumps(_doc_to_json(doc), sort_keys=True) + "\n")


def load_jsonl(path) -> Dataset:
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise DataError(f"{path}: empty dataset file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: line 1: malformed header ({e})") from e
    version = header.get("schema_version")
    if version != SCHEMA_VERSION:
        raise DataError(f"{path}: schema_version {version!r} unsupported (expected {SCHEMA_VERSION})")
    dataset = Dataset(
        dataset_id=header["dataset_id"],
        schema=FieldSchema(header["dataset_id"], tuple(header["field_ids"])),
        split=header.get("split", "train"),
    )
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            dataset.documents.append(_doc_from_json(json.loads(line)))
        except (json.JSONDecodeError, KeyError, ValueError) as e:
            raise DataError(f"{path}: line {lineno}: {e}") from e
    dataset.validate()
    return dataset
