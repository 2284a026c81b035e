"""Vectorized numpy implementations of the hot kernels.

Every function here has a loop twin in ``_numba`` with the same signature and
the same output, bit for bit on integer outputs.
"""

import numpy as np


def connected_components(n, src, dst):
    labels = np.arange(n, dtype=np.int64)
    if n == 0 or len(src) == 0:
        return labels
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    while True:
        low = np.minimum(labels[src], labels[dst])
        new = labels.copy()
        np.minimum.at(new, src, low)
        np.minimum.at(new, dst, low)
        # pointer jumping; labels always point at a vertex with a smaller or equal index
        new = new[new]
        if np.array_equal(new, labels):
            return labels
        labels = new


def normalize_by_source(src, scores, n_vertices, eps=1e-12):
    src = np.asarray(src, dtype=np.int64)
    clipped = np.maximum(np.asarray(scores, dtype=np.float64), 0.0)
    denom = np.bincount(src, weights=clipped, minlength=n_vertices)
    outdeg = np.bincount(src, minlength=n_vertices).astype(np.float64)
    fallback = denom[src] <= eps
    weights = np.empty(len(src), dtype=np.float64)
    weights[fallback] = 1.0 / outdeg[src[fallback]]
    keep = ~fallback
    weights[keep] = clipped[keep] / denom[src[keep]]
    return weights, fallback


def _row_keys(ptr, idx, base):
    """``row * base + value`` for every CSR entry; sorted when rows are."""
    rows = np.repeat(np.arange(len(ptr) - 1, dtype=np.int64), np.diff(ptr))
    return rows * base + idx


def _contains(sorted_keys, keys):
    pos = np.searchsorted(sorted_keys, keys)
    pos = np.minimum(pos, max(len(sorted_keys) - 1, 0))
    return (sorted_keys[pos] == keys) if len(sorted_keys) else np.zeros(len(keys), dtype=bool)


def _expand(ptr, idx, rows):
    """Concatenated CSR rows ``rows``, with the position in ``rows`` of each entry."""
    lengths = ptr[rows + 1] - ptr[rows]
    owner = np.repeat(np.arange(len(rows), dtype=np.int64), lengths)
    first = np.repeat(np.cumsum(lengths) - lengths, lengths)
    offsets = np.repeat(ptr[rows], lengths) + np.arange(len(owner), dtype=np.int64) - first
    return idx[offsets], owner, lengths


def pair_features(ts, author, tok_ptr, tok_idx, men_ptr, men_idx, opener, pi, pj):
    pi = np.asarray(pi, dtype=np.int64)
    pj = np.asarray(pj, dtype=np.int64)
    n_pairs = len(pi)
    out = np.zeros((n_pairs, 6), dtype=np.float64)
    if n_pairs == 0:
        return out
    out[:, 0] = np.log1p(np.maximum(ts[pi] - ts[pj], 0.0))
    out[:, 1] = (pi - pj).astype(np.float64)
    out[:, 2] = (author[pi] == author[pj]).astype(np.float64)
    out[:, 5] = opener[pj].astype(np.float64)

    base = int(max(author.max(initial=0), men_idx.max(initial=0))) + 1
    out[:, 3] = _contains(_row_keys(men_ptr, men_idx, base), pi * base + author[pj])

    vocab = int(tok_idx.max(initial=0)) + 1
    toks, owner, len_i = _expand(tok_ptr, tok_idx, pi)
    hit = _contains(_row_keys(tok_ptr, tok_idx, vocab), pj[owner] * vocab + toks)
    inter = np.bincount(owner, weights=hit, minlength=n_pairs)
    union = len_i + (tok_ptr[pj + 1] - tok_ptr[pj]) - inter
    np.divide(inter, union, out=out[:, 4], where=union > 0)
    return out


def select_antecedents(indptr, cand_pos, scores, self_scores):
    n = len(indptr) - 1
    chosen = np.full(n, -1, dtype=np.int64)
    counts = np.diff(indptr)
    if len(cand_pos) == 0:
        return chosen
    seg = np.repeat(np.arange(n), counts)
    order = np.lexsort((cand_pos, scores, seg))
    last = indptr[1:][counts > 0] - 1
    has = np.flatnonzero(counts > 0)
    pick = order[last]
    best_score = scores[pick]
    wins = best_score >= self_scores[has]
    chosen[has[wins]] = cand_pos[pick[wins]]
    return chosen


def confusion_matrix(gold, pred, k):
    gold = np.asarray(gold, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    return np.bincount(gold * k + pred, minlength=k * k).reshape(k, k).astype(np.int64)
