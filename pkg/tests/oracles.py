"""Independent brute-force references the fast paths are checked against.

Everything in this file is deliberately written from the definitions
(explicit loops, no shared code with the package internals).
"""

import numpy as np

NEG = -1.0e30


def brute_force_best_span(start, end, max_span_len):
    """Exhaustive argmax over {(0,0)} and all valid (s,e); ties: smaller s, then e."""
    n = len(start)
    best = (0, 0, start[0] + end[0])
    for s in range(1, n):
        for e in range(s, min(s + max_span_len, n - 1) + 1):
            score = start[s] + end[e]
            if score > best[2]:
                best = (s, e, score)
    return best[0], best[1]


def reference_decode_chain(query_vec, hidden, w_start, w_end, mask, max_chain_len, max_span_len):
    """Step-by-step simulation of the recursive decoder using explicit loops."""
    n = hidden.shape[0]

    def scores(q):
        start = np.empty(n)
        end = np.empty(n)
        for i in range(n):
            if mask[i] > 0:
                start[i] = float(q @ w_start @ hidden[i])
                end[i] = float(q @ w_end @ hidden[i])
            else:
                start[i] = NEG
                end[i] = NEG
        return start, end

    chain = []
    reason = "max_len_stop"
    q = np.asarray(query_vec, dtype=np.float64).reshape(-1)
    while len(chain) < max_chain_len:
        s, e = brute_force_best_span(*scores(q), max_span_len)
        if s == 0 and e == 0:
            reason = "null_stop"
            break
        if (s, e) in chain:
            reason = "repeat_stop"
            break
        chain.append((s, e))
        q = hidden[s]
    return chain, reason


def pooled_micro_f1(pred_docs, gold_docs):
    """Micro F1 from pooled exact-match counts, computed with plain loops."""
    tp = fp = fn = 0
    for pred, gold in zip(pred_docs, gold_docs):
        gold_left = list(set(gold))
        for ent in set(pred):
            if ent in gold_left:
                gold_left.remove(ent)
                tp += 1
            else:
                fp += 1
        fn += len(gold_left)
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return 2 * p * r / (p + r) if p + r else 0.0


def per_token_ce(logits, targets, mask):
    """Token-averaged cross entropy, one stable softmax per unmasked row."""
    total, count = 0.0, 0
    for i in range(logits.shape[0]):
        if mask[i] <= 0:
            continue
        row = logits[i]
        m = row.max()
        lse = m + np.log(np.exp(row - m).sum())
        total += lse - row[targets[i]]
        count += 1
    return total / count if count else 0.0
