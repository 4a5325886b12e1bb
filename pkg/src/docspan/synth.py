"""Synthetic visually-rich document generator.

Documents are laid out on a row/column grid. Every field has a
deterministic key token (its local name); values are short token runs
drawn from a closed lexicon, so models must combine token identity with
layout to extract them. Two layout styles:

    key_value_rows: key token with the first value to its right, further
        values stacked below the first (vertical continuation links).
    table_columns:  one column per field, key token as the column header,
        values listed underneath sharing the column's x extent.

Rare fields are driven by `doc_frequency`, which fixes the exact number
of documents containing the field, so corpus statistics are reproducible
from the seed alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datasets import Dataset
from .docmodel import (
    BoundingBox,
    Document,
    EntityAnnotation,
    FieldSchema,
    NULL_TOKEN,
    Token,
    gold_chain_order,
    normalize_box,
    split_line_to_words,
)
from .errors import ConfigError, DataError

KEY_VALUE_ROWS = "key_value_rows"
TABLE_COLUMNS = "table_columns"

_NONSENSE = [
    "plomb", "grath", "sover", "quint", "marle", "dretch", "fimble", "oskar",
    "trunt", "velma", "corbin", "haze", "jilt", "krons", "lumen", "mirth",
    "nopal", "ostrel", "pranso", "quab", "rindle", "sarn", "tovel", "umber",
    "vint", "wolder", "xanthe", "yarrow", "zephyr", "bostel",
]
_AMOUNTS = [f"${d}.{c:02d}" for d in (1, 2, 3, 5, 8, 12, 20, 45, 99) for c in (0, 25, 50, 99)]
_NUMBERS = [str(n) for n in range(0, 30)]

VALUE_LEXICON = _NONSENSE + _AMOUNTS + _NUMBERS


@dataclass(frozen=True)
class FieldSpec:
    name: str  # local name; the generator namespaces it with the dataset id
    multiplicity: tuple[int, int] = (1, 1)  # value count range when the field is present
    doc_frequency: float = 1.0  # fraction of documents containing the field
    value_len: tuple[int, int] = (1, 2)  # tokens per value

    def __post_init__(self):
        lo, hi = self.multiplicity
        if not (1 <= lo <= hi):
            raise ConfigError(f"{self.name}: multiplicity range {self.multiplicity} invalid")
        vlo, vhi = self.value_len
        if not (1 <= vlo <= vhi):
            raise ConfigError(f"{self.name}: value_len range {self.value_len} invalid")
        if not (0.0 <= self.doc_frequency <= 1.0):
            raise ConfigError(f"{self.name}: doc_frequency {self.doc_frequency} outside [0,1]")


@dataclass(frozen=True)
class SynthConfig:
    dataset_id: str
    num_docs: int
    fields: tuple[FieldSpec, ...]
    layout: str = KEY_VALUE_ROWS
    grid_rows: int = 12
    grid_cols: int = 6
    page_width: int = 1000
    page_height: int = 800
    noise_tokens: int = 4
    seed: int = 0
    split: str = "train"

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple(self.fields))
        if self.layout not in (KEY_VALUE_ROWS, TABLE_COLUMNS):
            raise ConfigError(f"unknown layout {self.layout!r}")
        if self.num_docs < 1 or self.grid_rows < 2 or self.grid_cols < 2:
            raise ConfigError("num_docs must be >= 1 and the grid at least 2x2")
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate field names in {self.dataset_id}")
        self._check_capacity()

    def _check_capacity(self):
        if self.layout == KEY_VALUE_ROWS:
            worst_rows = sum(f.multiplicity[1] for f in self.fields)
            if worst_rows > self.grid_rows:
                raise DataError(
                    f"{self.dataset_id}: up to {worst_rows} value rows do not fit "
                    f"{self.grid_rows} grid rows"
                )
        else:
            if len(self.fields) > self.grid_cols:
                raise DataError(f"{self.dataset_id}: {len(self.fields)} fields exceed {self.grid_cols} columns")
            worst = max((f.multiplicity[1] for f in self.fields), default=0)
            if worst > self.grid_rows - 1:
                raise DataError(
                    f"{self.dataset_id}: up to {worst} values per field do not fit "
                    f"{self.grid_rows - 1} value rows"
                )


@dataclass
class _Placed:
    row: int
    col: int
    sub: int
    text: str
    box: BoundingBox


def _cell_box(config: SynthConfig, row: int, col: int) -> BoundingBox:
    cw = config.page_width / config.grid_cols
    ch = config.page_height / config.grid_rows
    pad_x, pad_y = 0.06 * cw, 0.15 * ch
    return normalize_box(
        (col * cw + pad_x, row * ch + pad_y, (col + 1) * cw - pad_x, (row + 1) * ch - pad_y),
        config.page_width,
        config.page_height,
    )


def _place_value(placed, occupied, config, row, col, texts):
    """Put a multi-token value into one grid cell; returns nothing, appends tokens."""
    occupied.add((row, col))
    cell = _cell_box(config, row, col)
    boxes = split_line_to_words(cell, texts) if len(texts) > 1 else [cell]
    for sub, (text, box) in enumerate(zip(texts, boxes)):
        placed.append(_Placed(row, col, sub, text, box))


def gen_synthetic(config: SynthConfig) -> Dataset:
    """Generate a dataset; byte-identical output for identical configs."""
    rng = np.random.default_rng(config.seed)
    field_ids = tuple(f"{config.dataset_id}/{f.name}" for f in config.fields)
    schema = FieldSchema(config.dataset_id, field_ids)

    # Exact per-field document membership, fixed before any layout draws.
    members: list[set[int]] = []
    for spec in config.fields:
        count = int(round(spec.doc_frequency * config.num_docs))
        if count >= config.num_docs:
            members.append(set(range(config.num_docs)))
        else:
            members.append(set(rng.choice(config.num_docs, size=count, replace=False).tolist()))

    documents = []
    for doc_idx in range(config.num_docs):
        here = [i for i in range(len(config.fields)) if doc_idx in members[i]]
        order = list(here)
        rng.shuffle(order)

        placed: list[_Placed] = []
        occupied: set[tuple[int, int]] = set()
        value_cells: dict[int, list[tuple[int, int]]] = {i: [] for i in order}

        if config.layout == KEY_VALUE_ROWS:
            cursor = 0
            for i in order:
                spec = config.fields[i]
                m = int(rng.integers(spec.multiplicity[0], spec.multiplicity[1] + 1))
                if cursor + m > config.grid_rows:
                    raise DataError(f"{config.dataset_id}: doc {doc_idx} overflows the grid rows")
                vcol = int(rng.integers(1, config.grid_cols))
                occupied.add((cursor, vcol - 1))
                placed.append(_Placed(cursor, vcol - 1, 0, spec.name, _cell_box(config, cursor, vcol - 1)))
                for j in range(m):
                    value_cells[i].append((cursor + j, vcol))
                cursor += m
        else:  # TABLE_COLUMNS
            cols = list(rng.permutation(config.grid_cols))[: len(order)]
            for i, col in zip(order, cols):
                spec = config.fields[i]
                m = int(rng.integers(spec.multiplicity[0], spec.multiplicity[1] + 1))
                occupied.add((0, col))
                placed.append(_Placed(0, col, 0, spec.name, _cell_box(config, 0, col)))
                for j in range(m):
                    value_cells[i].append((1 + j, col))

        # Values (cells were reserved above; fill them with lexicon tokens).
        value_tokens: dict[int, list[list[str]]] = {}
        for i in order:
            spec = config.fields[i]
            runs = []
            for row, col in value_cells[i]:
                t = int(rng.integers(spec.value_len[0], spec.value_len[1] + 1))
                texts = [str(w) for w in rng.choice(VALUE_LEXICON, size=t)]
                _place_value(placed, occupied, config, row, col, texts)
                runs.append(texts)
            value_tokens[i] = runs

        # Unannotated distractors on free cells.
        free = [
            (r, c)
            for r in range(config.grid_rows)
            for c in range(config.grid_cols)
            if (r, c) not in occupied
        ]
        n_noise = min(config.noise_tokens, len(free))
        if n_noise:
            picks = rng.choice(len(free), size=n_noise, replace=False)
            for p in sorted(int(x) for x in picks):
                r, c = free[p]
                occupied.add((r, c))
                word = str(rng.choice(VALUE_LEXICON))
                placed.append(_Placed(r, c, 0, word, _cell_box(config, r, c)))

        placed.sort(key=lambda p: (p.row, p.col, p.sub))
        tokens = tuple([NULL_TOKEN] + [Token(p.text, p.box, line_id=p.row) for p in placed])
        index_of = {(p.row, p.col, p.sub): k + 1 for k, p in enumerate(placed)}
        bare = Document(
            doc_id=f"{config.dataset_id}-{config.split}-{doc_idx:04d}",
            tokens=tokens,
            page_width=config.page_width,
            page_height=config.page_height,
        )

        annotations = []
        for i in sorted(order):
            spans = []
            for (row, col), texts in zip(value_cells[i], value_tokens[i]):
                start = index_of[(row, col, 0)]
                spans.append((start, start + len(texts) - 1))
            ann = EntityAnnotation(field_ids[i], tuple(spans))
            annotations.append(gold_chain_order(ann, bare))

        doc = Document(
            doc_id=bare.doc_id,
            tokens=tokens,
            page_width=config.page_width,
            page_height=config.page_height,
            annotations=tuple(annotations),
        )
        doc.validate()
        documents.append(doc)

    dataset = Dataset(config.dataset_id, schema, documents, split=config.split)
    dataset.validate()
    return dataset


def synth_config_from_dict(d: dict, split: str, num_docs: int, seed: int) -> SynthConfig:
    """Build a per-split SynthConfig from the gen-data config file contents."""
    fields = tuple(
        FieldSpec(
            name=f["name"],
            multiplicity=tuple(f.get("multiplicity", [1, 1])),
            doc_frequency=float(f.get("doc_frequency", 1.0)),
            value_len=tuple(f.get("value_len", [1, 2])),
        )
        for f in d["fields"]
    )
    return SynthConfig(
        dataset_id=d["dataset_id"],
        num_docs=num_docs,
        fields=fields,
        layout=d.get("layout", KEY_VALUE_ROWS),
        grid_rows=int(d.get("grid_rows", 12)),
        grid_cols=int(d.get("grid_cols", 6)),
        page_width=int(d.get("page_width", 1000)),
        page_height=int(d.get("page_height", 800)),
        noise_tokens=int(d.get("noise_tokens", 4)),
        seed=seed,
        split=split,
    )
