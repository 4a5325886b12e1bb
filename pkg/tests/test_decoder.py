import math

import numpy as np
import pytest

from docspan import autodiff as ad
from docspan.autodiff import ParamStore, grad_check, parameter
from docspan.decoder import (
    ChainExample,
    MAX_LEN_STOP,
    NULL_STOP,
    REPEAT_STOP,
    chain_loss,
    decode_chain,
)
from docspan.errors import AnnotationError
from docspan.spanhead import init_span_head

from oracles import reference_decode_chain


def steering_head(n, transitions):
    """Build H=I and bilinear forms that steer decoding along `transitions`.

    transitions: {query_pos: (start_peak, end_peak)}; query_pos 0 doubles
    as the initial query T = e_0.
    """
    store = ParamStore()
    init_span_head(store, n, np.random.default_rng(0))
    store["head/w_start"].value[...] = 0.0
    store["head/w_end"].value[...] = 0.0
    for qpos, (s_peak, e_peak) in transitions.items():
        store["head/w_start"].value[qpos, s_peak] = 50.0
        store["head/w_end"].value[qpos, e_peak] = 50.0
    hidden = ad.constant(np.eye(n))
    query = ad.constant(np.eye(n)[0])
    return store, hidden, query, np.ones(n)


class TestDecodeChain:
    def test_immediate_null(self):
        store, hidden, query, mask = steering_head(10, {0: (0, 0)})
        chain = decode_chain(query, hidden, store, mask)
        assert chain.as_tuples() == [] and chain.termination_reason == NULL_STOP

    def test_two_links_then_null(self):
        store, hidden, query, mask = steering_head(10, {0: (2, 3), 2: (7, 8), 7: (0, 0)})
        chain = decode_chain(query, hidden, store, mask)
        assert chain.as_tuples() == [(2, 3), (7, 8)]
        assert chain.termination_reason == NULL_STOP

    def test_repeat_stop(self):
        store, hidden, query, mask = steering_head(10, {0: (2, 3), 2: (7, 8), 7: (2, 3)})
        chain = decode_chain(query, hidden, store, mask)
        assert chain.as_tuples() == [(2, 3), (7, 8)]
        assert chain.termination_reason == REPEAT_STOP

    def test_max_len_stop(self):
        # 1 -> 2 -> 3 -> ... walks forward; cap the chain early
        transitions = {i: (i + 1, i + 1) for i in range(0, 8)}
        store, hidden, query, mask = steering_head(10, transitions)
        chain = decode_chain(query, hidden, store, mask, max_chain_len=3)
        assert chain.as_tuples() == [(1, 1), (2, 2), (3, 3)]
        assert chain.termination_reason == MAX_LEN_STOP

    def test_matches_reference_on_200_random_instances(self):
        rng = np.random.default_rng(99)
        reasons = set()
        for trial in range(200):
            n = int(rng.integers(3, 17))
            c = int(rng.integers(2, 9))
            max_chain = int(rng.integers(1, 7))
            max_span = int(rng.integers(1, 6))
            store = ParamStore()
            init_span_head(store, c, rng)
            store["head/w_start"].value[...] = rng.normal(size=(c, c))
            store["head/w_end"].value[...] = rng.normal(size=(c, c))
            hidden_vals = rng.normal(size=(n, c)) * 2
            query_vec = rng.normal(size=c)
            mask = np.ones(n)
            if rng.random() < 0.4:
                mask[int(rng.integers(1, n)) :] = 0.0

            chain = decode_chain(
                ad.constant(query_vec), ad.constant(hidden_vals), store, mask,
                max_chain_len=max_chain, max_span_len=max_span,
            )
            ref_chain, ref_reason = reference_decode_chain(
                query_vec, hidden_vals,
                store["head/w_start"].value, store["head/w_end"].value,
                mask, max_chain, max_span,
            )
            assert chain.as_tuples() == ref_chain, f"trial {trial}"
            assert chain.termination_reason == ref_reason, f"trial {trial}"
            reasons.add(ref_reason)
        assert reasons == {NULL_STOP, REPEAT_STOP, MAX_LEN_STOP}  # all stop rules exercised

    def test_termination_on_1000_adversarial_inputs(self):
        rng = np.random.default_rng(7)
        for trial in range(1000):
            n = int(rng.integers(2, 20))
            c = int(rng.integers(1, 6))
            store = ParamStore()
            init_span_head(store, c, rng)
            scale = rng.choice([0.0, 1e-8, 1.0, 1e6])
            store["head/w_start"].value[...] = rng.normal(size=(c, c)) * scale
            store["head/w_end"].value[...] = rng.normal(size=(c, c)) * scale
            hidden = ad.constant(rng.normal(size=(n, c)))
            query = ad.constant(rng.normal(size=c))
            max_chain = int(rng.integers(1, 12))
            chain = decode_chain(query, hidden, store, np.ones(n), max_chain_len=max_chain)
            tuples = chain.as_tuples()
            assert len(tuples) <= max_chain
            assert (0, 0) not in tuples
            assert len(set(tuples)) == len(tuples)


class TestChainLoss:
    def test_zero_gold_spans_single_null_step(self):
        n = 6
        store = ParamStore()
        init_span_head(store, n, np.random.default_rng(0))
        store["head/w_start"].value[...] = 0.0
        store["head/w_end"].value[...] = 0.0
        hidden = ad.constant(np.eye(n))
        loss = chain_loss(ChainExample("f", ()), hidden, ad.constant(np.zeros(n)), store, np.ones(n))
        # one step, uniform logits: CE(start,0) + CE(end,0) = 2 ln n
        assert loss.item() == pytest.approx(2 * math.log(n), abs=1e-9)

    def test_step_count_k_plus_one(self):
        # Independent teacher-forcing loop recomputes the loss with plain numpy.
        rng = np.random.default_rng(4)
        n, c = 9, 5
        store = ParamStore()
        init_span_head(store, c, rng)
        ws = store["head/w_start"].value
        we = store["head/w_end"].value
        hidden_vals = rng.normal(size=(n, c))
        query_vec = rng.normal(size=c)
        mask = np.ones(n)

        def ce(logits, t):
            m = logits.max()
            return m + np.log(np.exp(logits - m).sum()) - logits[t]

        for golds in [((2, 3),), ((2, 3), (5, 6)), ((1, 1), (4, 5), (7, 8))]:
            expected_steps = []
            q = query_vec
            for i, (s, e) in enumerate(list(golds) + [(0, 0)]):
                start_logits = np.array([q @ ws @ hidden_vals[j] for j in range(n)])
                end_logits = np.array([q @ we @ hidden_vals[j] for j in range(n)])
                expected_steps.append(ce(start_logits, s) + ce(end_logits, e))
                if i < len(golds):
                    q = hidden_vals[golds[i][0]]
            expected = sum(expected_steps) / len(expected_steps)
            assert len(expected_steps) == len(golds) + 1

            loss = chain_loss(
                ChainExample("f", golds), ad.constant(hidden_vals), ad.constant(query_vec), store, mask
            )
            assert loss.item() == pytest.approx(expected, rel=1e-12)

    def test_perfect_logits_tiny_loss(self):
        store, hidden, query, mask = steering_head(10, {0: (2, 3), 2: (5, 6), 5: (0, 0)})
        loss = chain_loss(ChainExample("f", ((2, 3), (5, 6))), hidden, query, store, mask)
        assert loss.item() < 1e-3

    def test_out_of_range_gold_rejected(self):
        store, hidden, query, mask = steering_head(6, {0: (0, 0)})
        with pytest.raises(AnnotationError):
            chain_loss(ChainExample("f", ((1, 7),)), hidden, query, store, mask)
        mask2 = mask.copy()
        mask2[4:] = 0.0
        with pytest.raises(AnnotationError):
            chain_loss(ChainExample("f", ((4, 4),)), hidden, query, store, mask2)

    def test_gradient_check_toy(self):
        rng = np.random.default_rng(12)
        n, c = 6, 4
        store = ParamStore()
        init_span_head(store, c, rng)
        hidden = parameter(rng.normal(size=(n, c)))
        query = parameter(rng.normal(size=c))
        mask = np.ones(n)

        def loss_fn():
            return chain_loss(ChainExample("f", ((1, 2), (4, 4))), hidden, query, store, mask)

        err = grad_check(loss_fn, [store["head/w_start"], store["head/w_end"], hidden, query])
        assert err < 1e-4
