import numpy as np
import pytest

from docspan.docmodel import (
    BoundingBox,
    Document,
    EntityAnnotation,
    NULL_TOKEN,
    Token,
    Vocabulary,
)
from docspan.encoder import EncoderConfig
from docspan.models import SpanModel


def make_doc(words, annotations=(), doc_id="doc-0", page=(1000, 1000)):
    """words: list of (text, (x0,y0,x1,y1)) or (text, (x0,y0,x1,y1), line_id)."""
    tokens = [NULL_TOKEN]
    for item in words:
        line_id = item[2] if len(item) == 3 else 0
        tokens.append(Token(item[0], BoundingBox(*item[1]), line_id))
    anns = tuple(EntityAnnotation(fid, tuple(spans)) for fid, spans in annotations)
    doc = Document(doc_id, tuple(tokens), page[0], page[1], anns)
    doc.validate()
    return doc


def grid_words(texts, per_row=4, box_size=100):
    """Lay texts on a simple grid, left-to-right then top-to-bottom."""
    words = []
    for i, text in enumerate(texts):
        r, c = divmod(i, per_row)
        x0, y0 = c * box_size + 10, r * box_size + 10
        words.append((text, (x0, y0, x0 + box_size - 20, y0 + box_size - 20), r))
    return words


@pytest.fixture
def toy_vocab():
    return Vocabulary.build(["alpha", "bravo", "carol", "delta", "echo", "fox", "golf", "hotel"])


def tiny_span_model(vocab, n=8, c=8, layers=1, heads=1, seed=0):
    config = EncoderConfig(
        hidden_size=c, num_layers=layers, num_heads=heads, max_seq_len=n, vocab_size=len(vocab)
    )
    return SpanModel(config, vocab, seed=seed)


def rng_for(seed):
    return np.random.default_rng(seed)
