"""SVG rendering of token boxes and decoded chains.

Start tokens of predicted spans are outlined red, end tokens blue;
consecutive links of one chain are connected start-to-start with an
arrow labeled by the field id. Dependency-free string building.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

from .docmodel import Document

VIEW = 1000  # the normalized grid is drawn 1:1

START_COLOR = "#d62728"  # red outline: span start tokens
END_COLOR = "#1f77b4"  # blue outline: span end tokens
ARROW_COLORS = ["#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"]


def _rect(box, stroke, width, fill="none", dash=None):
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return (
        f'<rect x="{box.x0}" y="{box.y0}" width="{max(1, box.x1 - box.x0)}" '
        f'height="{max(1, box.y1 - box.y0)}" fill="{fill}" stroke="{stroke}" '
        f'stroke-width="{width}"{extra}/>'
    )


def _center(box):
    return (box.x0 + box.x1) / 2.0, (box.y0 + box.y1) / 2.0


def render_document_svg(doc: Document, chains: dict[str, list[tuple[int, int]]], path) -> None:
    """Write an SVG of the document with the given per-field chains overlaid."""
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {VIEW} {VIEW}" '
        f'width="{VIEW}" height="{VIEW}">',
        "<defs>"
        '<marker id="arrowhead" markerWidth="8" markerHeight="8" refX="7" refY="4" orient="auto">'
        '<path d="M0,0 L8,4 L0,8 z" fill="#555555"/>'
        "</marker>"
        "</defs>",
        f'<rect x="0" y="0" width="{VIEW}" height="{VIEW}" fill="#ffffff"/>',
        "<style>text{font-family:sans-serif;}</style>",
    ]

    for tok in doc.tokens[1:]:
        parts.append(_rect(tok.box, "#bbbbbb", 1, fill="#f4f4f4"))
        cx, cy = _center(tok.box)
        size = max(8, min(16, (tok.box.y1 - tok.box.y0) - 4))
        parts.append(
            f'<text x="{cx:.0f}" y="{cy:.0f}" text-anchor="middle" dominant-baseline="middle" '
            f'font-size="{size}" fill="#333333">{escape(tok.text)}</text>'
        )

    for k, (fid, spans) in enumerate(sorted(chains.items())):
        color = ARROW_COLORS[k % len(ARROW_COLORS)]
        for s, e in spans:
            parts.append(_rect(doc.tokens[s].box, START_COLOR, 3))
            parts.append(_rect(doc.tokens[e].box, END_COLOR, 3, dash="4,3"))
        for (s1, _), (s2, _) in zip(spans, spans[1:]):
            x1, y1 = _center(doc.tokens[s1].box)
            x2, y2 = _center(doc.tokens[s2].box)
            parts.append(
                f'<line x1="{x1:.0f}" y1="{y1:.0f}" x2="{x2:.0f}" y2="{y2:.0f}" '
                f'stroke="{color}" stroke-width="2.5" marker-end="url(#arrowhead)"/>'
            )
        if spans:
            x, y = _center(doc.tokens[spans[0][0]].box)
            parts.append(
                f'<text x="{x:.0f}" y="{max(10, y - 14):.0f}" text-anchor="middle" '
                f'font-size="12" fill="{color}">{escape(fid)}</text>'
            )

    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(parts) + "\n")
