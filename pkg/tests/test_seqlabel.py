import math

import numpy as np
import pytest

from docspan import autodiff as ad
from docspan.autodiff import ParamStore, grad_check, parameter
from docspan.errors import AnnotationError
from docspan.seqlabel import (
    TagSet,
    bio_decode,
    bio_encode,
    init_tag_head,
    tag_forward,
    tag_loss,
    tag_loss_mask,
)

from conftest import make_doc, grid_words
from oracles import per_token_ce


class TestTagSet:
    def test_layout(self):
        ts = TagSet(["x/a", "x/b"])
        assert len(ts) == 5
        assert ts.labels[0] == "O"
        assert ts.labels == ["O", "B-x/a", "I-x/a", "B-x/b", "I-x/b"]
        assert ts.id_of("I-x/b") == 4

    def test_unknown_label(self):
        with pytest.raises(AnnotationError):
            TagSet(["a"]).id_of("B-zzz")


class TestTagForward:
    def test_zero_params_uniform(self):
        store = ParamStore()
        init_tag_head(store, 4, 5, np.random.default_rng(0))
        store["taghead/w"].value[...] = 0.0
        logits = tag_forward(ad.constant(np.random.default_rng(1).normal(size=(6, 4))), store)
        assert np.allclose(logits.value, 0.0)

    def test_shape(self):
        for num_fields in (1, 2, 4):
            ts = TagSet([f"d/f{i}" for i in range(num_fields)])
            store = ParamStore()
            init_tag_head(store, 8, len(ts), np.random.default_rng(0))
            logits = tag_forward(ad.constant(np.zeros((10, 8))), store)
            assert logits.value.shape == (10, 2 * num_fields + 1)

    def test_gradient_check(self):
        rng = np.random.default_rng(3)
        store = ParamStore()
        init_tag_head(store, 4, 5, rng)
        hidden = parameter(rng.normal(size=(6, 4)))
        gold = rng.integers(0, 5, size=6)
        mask = np.array([0, 1, 1, 1, 0, 1], dtype=float)

        def loss_fn():
            return tag_loss(tag_forward(hidden, store), gold, mask)

        err = grad_check(loss_fn, [store["taghead/w"], store["taghead/b"], hidden])
        assert err < 1e-4


class TestTagLoss:
    def test_all_correct_one_hot(self):
        gold = np.array([0, 1, 2, 0])
        logits = np.full((4, 3), -20.0)
        for i, t in enumerate(gold):
            logits[i, t] = 20.0
        loss = tag_loss(ad.constant(logits), gold, np.ones(4))
        assert loss.item() < 1e-3

    def test_uniform_closed_form(self):
        # F=2 fields -> 5 classes -> ln 5 per token
        loss = tag_loss(ad.constant(np.zeros((7, 5))), np.zeros(7, dtype=int), np.ones(7))
        assert loss.item() == pytest.approx(math.log(5), abs=1e-12)

    def test_fully_masked_is_zero_with_warning(self):
        with pytest.warns(UserWarning):
            loss = tag_loss(ad.constant(np.zeros((4, 3))), np.zeros(4, dtype=int), np.zeros(4))
        assert loss.item() == 0.0

    def test_invalid_tag_index(self):
        with pytest.raises(IndexError):
            tag_loss(ad.constant(np.zeros((4, 3))), np.array([0, 1, 7, 0]), np.ones(4))

    def test_matches_per_token_oracle(self):
        rng = np.random.default_rng(17)
        for _ in range(50):
            n, k = int(rng.integers(2, 12)), int(rng.integers(2, 7))
            logits = rng.normal(size=(n, k)) * 3
            gold = rng.integers(0, k, size=n)
            mask = (rng.random(n) > 0.3).astype(float)
            if mask.sum() == 0:
                mask[0] = 1.0
            ours = tag_loss(ad.constant(logits), gold, mask).item()
            assert ours == pytest.approx(per_token_ce(logits, gold, mask), rel=1e-12)


class TestBioCoding:
    def test_decode_worked_example(self):
        assert bio_decode(["B-a", "I-a", "O", "B-b"]) == [("a", 1, 2), ("b", 4, 4)]

    def test_all_outside(self):
        assert bio_decode(["O", "O", "O"]) == []

    def test_lenient_orphan_inside(self):
        assert bio_decode(["I-a", "I-a"]) == [("a", 1, 2)]

    def test_strict_orphan_inside(self):
        assert bio_decode(["I-a", "I-a"], strict=True) == []

    def test_field_switch_inside_run(self):
        assert bio_decode(["B-a", "I-b"]) == [("a", 1, 1), ("b", 2, 2)]

    def test_encode_marks_b_then_i(self):
        doc = make_doc(grid_words(["k", "v1", "v2", "x"]), annotations=[("d/f", [(2, 3)])])
        ts = TagSet(["d/f"])
        tags = bio_encode(doc, ts, max_seq_len=8)
        assert tags[2] == ts.id_of("B-d/f")
        assert tags[3] == ts.id_of("I-d/f")
        assert tags[1] == 0 and tags[4] == 0

    def test_overlap_rejected(self):
        doc = make_doc(
            grid_words(["a", "b", "c"]),
            annotations=[("d/f", [(1, 2)]), ("d/g", [(2, 3)])],
        )
        with pytest.raises(AnnotationError):
            bio_encode(doc, TagSet(["d/f", "d/g"]), max_seq_len=8)

    def test_roundtrip_random_non_overlapping(self):
        rng = np.random.default_rng(23)
        for _ in range(100):
            n = int(rng.integers(3, 20))
            fields = [f"d/f{i}" for i in range(int(rng.integers(1, 4)))]
            ts = TagSet(fields)
            # carve non-overlapping spans from the token range
            spans = []
            pos = 1
            while pos <= n:
                length = int(rng.integers(1, 4))
                end = min(pos + length - 1, n)
                if rng.random() < 0.6:
                    spans.append((str(rng.choice(fields)), pos, end))
                pos = end + 1
            by_field = {}
            for fid, s, e in spans:
                by_field.setdefault(fid, []).append((s, e))
            doc = make_doc(grid_words(["w"] * n), annotations=sorted(by_field.items()))
            tags = bio_encode(doc, ts, max_seq_len=n + 1)
            labels = [ts.label_of(int(t)) for t in tags[1 : n + 1]]
            decoded = bio_decode(labels)
            assert decoded == sorted(spans, key=lambda x: x[1])
            # decoded entities are sorted and non-overlapping
            for (_, _, e1), (_, s2, _) in zip(decoded, decoded[1:]):
                assert e1 < s2

    def test_loss_mask_excludes_null_and_padding(self):
        doc = make_doc(grid_words(["a", "b"]))
        mask = tag_loss_mask(doc, max_seq_len=6)
        assert mask.tolist() == [0.0, 1.0, 1.0, 0.0, 0.0, 0.0]
