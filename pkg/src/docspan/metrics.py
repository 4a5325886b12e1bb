"""Entity-level precision/recall/F1 (micro and macro) and comparison tables.

A prediction counts as a true positive only on an exact (field_id, start,
end) match against a not-yet-matched gold entity of the same document.
Micro pools counts over everything; macro averages per-field F1 and skips
fields absent from both gold and predictions.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from .docmodel import Document

Entity = tuple[str, int, int]


@dataclass
class FieldStats:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0


@dataclass
class EvalReport:
    per_field: dict[str, FieldStats] = field(default_factory=dict)
    num_documents: int = 0
    num_gold_entities: int = 0

    def _pooled(self) -> FieldStats:
        pooled = FieldStats()
        for st in self.per_field.values():
            pooled.tp += st.tp
            pooled.fp += st.fp
            pooled.fn += st.fn
        return pooled

    @property
    def micro_precision(self) -> float:
        return self._pooled().precision

    @property
    def micro_recall(self) -> float:
        return self._pooled().recall

    @property
    def micro_f1(self) -> float:
        return self._pooled().f1

    @property
    def macro_f1(self) -> float:
        f1s = [st.f1 for st in self.per_field.values() if st.tp + st.fp + st.fn > 0]
        return sum(f1s) / len(f1s) if f1s else 0.0

    def rows(self) -> list[dict]:
        out = []
        for fid in sorted(self.per_field):
            st = self.per_field[fid]
            out.append(
                {
                    "field_id": fid,
                    "tp": st.tp,
                    "fp": st.fp,
                    "fn": st.fn,
                    "precision": st.precision,
                    "recall": st.recall,
                    "f1": st.f1,
                }
            )
        return out


def gold_entities(doc: Document) -> list[Entity]:
    """Every gold span is one entity."""
    out = []
    for ann in doc.annotations:
        for s, e in ann.spans:
            out.append((ann.field_id, s, e))
    return out


def entity_f1(pred, gold, known_fields=None) -> EvalReport:
    """Score per-document entity lists (parallel lists over documents).

    Duplicate predictions within one document are collapsed before
    matching; matching is exact and one-to-one.
    """
    if len(pred) != len(gold):
        raise ValueError(f"pred covers {len(pred)} documents, gold covers {len(gold)}")
    known = set(known_fields) if known_fields is not None else None
    report = EvalReport(num_documents=len(gold))

    def stats(fid: str) -> FieldStats:
        if fid not in report.per_field:
            report.per_field[fid] = FieldStats()
        return report.per_field[fid]

    for pred_doc, gold_doc in zip(pred, gold):
        pred_set = set(pred_doc)
        if known is not None:
            for fid, _, _ in pred_set:
                if fid not in known:
                    raise ValueError(f"prediction references unknown field {fid!r}")
        gold_set = set(gold_doc)
        report.num_gold_entities += len(gold_set)
        for ent in sorted(pred_set):
            fid = ent[0]
            if ent in gold_set:
                gold_set.remove(ent)
                stats(fid).tp += 1
            else:
                stats(fid).fp += 1
        for ent in gold_set:
            stats(ent[0]).fn += 1
    return report


@dataclass
class ComparisonTable:
    header: list[str]
    rows: list[list[str]]

    def to_text(self) -> str:
        widths = [len(h) for h in self.header]
        for row in self.rows:
            widths = [max(w, len(cell)) for w, cell in zip(widths, row)]
        lines = []
        for cells in [self.header] + self.rows:
            lines.append("  ".join(cell.ljust(w) for cell, w in zip(cells, widths)).rstrip())
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(self.header)
        writer.writerows(self.rows)
        return buf.getvalue()


def compare_report(reports: list[tuple[str, EvalReport]]) -> ComparisonTable:
    """One row per method; macro/micro first, then per-field F1 columns."""
    if not reports:
        raise ValueError("compare_report needs at least one report")
    fields = sorted({fid for _, rep in reports for fid in rep.per_field})
    header = ["method", "f1_macro", "f1_micro"] + fields
    rows = []
    for name, rep in reports:
        row = [name, f"{rep.macro_f1:.4f}", f"{rep.micro_f1:.4f}"]
        for fid in fields:
            st = rep.per_field.get(fid)
            row.append(f"{st.f1:.4f}" if st is not None else "")
        rows.append(row)
    return ComparisonTable(header, rows)
