import math

import numpy as np
import pytest

from docspan import autodiff as ad
from docspan.autodiff import ParamStore, backward
from docspan.checkpoint import load_archive, save_archive
from docspan.errors import ConfigError
from docspan.spanhead import (
    QueryRegistry,
    SpanScores,
    init_span_head,
    predict_span,
    score_span,
    span_loss,
)
from docspan.training import Adam, OptimizerConfig

from oracles import brute_force_best_span


def head_with(n=8, c=8, seed=0, identity=False):
    store = ParamStore()
    rng = np.random.default_rng(seed)
    init_span_head(store, c, rng)
    if identity:
        store["head/w_start"].value[...] = np.eye(c)
        store["head/w_end"].value[...] = np.eye(c)
    mask = np.ones(n)
    return store, mask


class TestScoreSpan:
    def test_orthonormal_rows_identity_head(self):
        n = c = 8
        store, mask = head_with(n, c, identity=True)
        hidden = ad.constant(np.eye(n))
        q = ad.constant(np.eye(n)[3])
        scores = score_span(q, hidden, store, mask)
        assert int(np.argmax(scores.start_logits.value)) == 3
        assert int(np.argmax(scores.end_logits.value)) == 3

    def test_zero_query_uniform(self):
        store, mask = head_with()
        hidden = ad.constant(np.random.default_rng(0).normal(size=(8, 8)))
        scores = score_span(ad.constant(np.zeros(8)), hidden, store, mask)
        assert np.allclose(scores.start_logits.value, scores.start_logits.value[0])

    def test_padded_position_never_argmax(self):
        store, _ = head_with()
        mask = np.array([1.0] * 4 + [0.0] * 4)
        rng = np.random.default_rng(1)
        for _ in range(50):
            hidden = ad.constant(rng.normal(size=(8, 8)) * 10)
            q = ad.constant(rng.normal(size=8))
            scores = score_span(q, hidden, store, mask)
            assert int(np.argmax(scores.start_logits.value)) < 4
            pred = predict_span(scores)
            assert pred.end < 4

    def test_dimension_mismatch(self):
        store, mask = head_with()
        with pytest.raises(ad.ShapeError):
            score_span(ad.constant(np.zeros(5)), ad.constant(np.zeros((8, 8))), store, mask)


class TestSpanLoss:
    def test_uniform_closed_form(self):
        n = 8
        scores = SpanScores(ad.constant(np.zeros(n)), ad.constant(np.zeros(n)))
        assert span_loss(scores, (2, 4)).item() == pytest.approx(2 * math.log(8), abs=1e-12)

    def test_near_one_hot(self):
        n = 8
        start = np.full(n, -20.0)
        end = np.full(n, -20.0)
        start[2] = 20.0
        end[4] = 20.0
        loss = span_loss(SpanScores(ad.constant(start), ad.constant(end)), (2, 4))
        assert loss.item() < 1e-3

    def test_null_target_trains_stop(self):
        scores = SpanScores(ad.constant(np.zeros(4)), ad.constant(np.zeros(4)))
        assert span_loss(scores, (0, 0)).item() == pytest.approx(2 * math.log(4), abs=1e-12)

    def test_gold_out_of_range(self):
        scores = SpanScores(ad.constant(np.zeros(4)), ad.constant(np.zeros(4)))
        with pytest.raises(IndexError):
            span_loss(scores, (0, 9))

    def test_shift_invariance(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            start = rng.normal(size=10)
            end = rng.normal(size=10)
            base = span_loss(SpanScores(ad.constant(start), ad.constant(end)), (3, 5)).item()
            shifted = span_loss(SpanScores(ad.constant(start + 7.5), ad.constant(end)), (3, 5)).item()
            assert shifted == pytest.approx(base, abs=1e-9)
            p1 = predict_span(SpanScores(ad.constant(start), ad.constant(end)))
            p2 = predict_span(SpanScores(ad.constant(start + 7.5), ad.constant(end)))
            assert (p1.start, p1.end) == (p2.start, p2.end)


class TestPredictSpan:
    def test_null_dominant(self):
        start = np.array([10.0, 0.0, 0.0, 0.0])
        end = np.array([10.0, 0.0, 0.0, 0.0])
        pred = predict_span(SpanScores(ad.constant(start), ad.constant(end)))
        assert (pred.start, pred.end) == (0, 0) and pred.is_null

    def test_one_hot_pair(self):
        n = 8
        start = np.full(n, -5.0)
        end = np.full(n, -5.0)
        start[2] = 5.0
        end[4] = 5.0
        pred = predict_span(SpanScores(ad.constant(start), ad.constant(end)), max_span_len=3)
        assert (pred.start, pred.end) == (2, 4)
        assert pred.score == pytest.approx(10.0)

    def test_best_end_before_best_start(self):
        # end peak at 1, start peak at 5: joint search must still return the
        # best *valid* pair, verified against exhaustive enumeration.
        start = np.array([0.0, 1.0, 0.5, 0.0, 0.0, 9.0, 0.0, 0.0])
        end = np.array([0.0, 9.0, 1.0, 0.0, 0.0, 0.3, 0.2, 0.0])
        scores = SpanScores(ad.constant(start), ad.constant(end))
        for L in (1, 2, 7):
            pred = predict_span(scores, max_span_len=L)
            assert (pred.start, pred.end) == brute_force_best_span(start, end, L)

    def test_matches_enumeration_on_500_random_vectors(self):
        rng = np.random.default_rng(123)
        for trial in range(500):
            n = int(rng.integers(2, 33))
            L = int(rng.integers(1, 12))
            start = rng.normal(size=n) * rng.choice([0.3, 1.0, 5.0])
            end = rng.normal(size=n) * rng.choice([0.3, 1.0, 5.0])
            if rng.random() < 0.3:  # force ties sometimes
                start = np.round(start)
                end = np.round(end)
            pred = predict_span(SpanScores(ad.constant(start), ad.constant(end)), max_span_len=L)
            assert (pred.start, pred.end) == brute_force_best_span(start, end, L), f"trial {trial}"


class TestQueryRegistry:
    def test_auto_registration_then_frozen_rejects(self):
        store = ParamStore()
        reg = QueryRegistry(store, 8, np.random.default_rng(0))
        q = reg.get("ds/a")
        assert q.value.shape == (8,)
        assert "ds/a" in reg
        reg.frozen = True
        with pytest.raises(ConfigError):
            reg.get("ds/unknown")

    def test_train_save_load_roundtrip_bit_exact(self, tmp_path):
        store = ParamStore()
        rng = np.random.default_rng(0)
        init_span_head(store, 4, rng)
        reg = QueryRegistry(store, 4, rng)
        q = reg.get("ds/a")

        # one real optimizer step so the vector moves off its init
        hidden = ad.constant(rng.normal(size=(5, 4)))
        mask = np.ones(5)
        loss = span_loss(score_span(q, hidden, store, mask), (1, 2))
        backward(loss)
        Adam(store, OptimizerConfig(lr=1e-3)).step()
        trained = q.value.copy()

        path = tmp_path / "reg.ckpt"
        save_archive(path, store.state(), {"fields": reg.field_ids})
        tensors, meta = load_archive(path)
        assert meta["fields"] == ["ds/a"]
        assert np.array_equal(tensors["query/ds/a"], trained)
        assert tensors["query/ds/a"].tobytes() == trained.tobytes()
