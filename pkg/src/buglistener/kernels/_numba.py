import functools
import math

import numba as nb
import numpy as np

njit = functools.partial(nb.njit, cache=True, nogil=True)


@njit
def _find(parent, x):
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


@njit
def connected_components(n, src, dst):
    parent = np.arange(n)
    for e in range(len(src)):
        a = _find(parent, src[e])
        b = _find(parent, dst[e])
        # the smaller index becomes the root so labels are canonical
        if a < b:
            parent[b] = a
        elif b < a:
            parent[a] = b
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        labels[i] = _find(parent, i)
    return labels


@njit
def normalize_by_source(src, scores, n_vertices, eps=1e-12):
    denom = np.zeros(n_vertices)
    outdeg = np.zeros(n_vertices)
    for e in range(len(src)):
        s = scores[e]
        if s > 0.0:
            denom[src[e]] += s
        outdeg[src[e]] += 1.0
    weights = np.empty(len(src))
    fallback = np.zeros(len(src), dtype=np.bool_)
    for e in range(len(src)):
        d = denom[src[e]]
        if d <= eps:
            weights[e] = 1.0 / outdeg[src[e]]
            fallback[e] = True
        else:
            weights[e] = max(scores[e], 0.0) / d
    return weights, fallback


@njit
def _jaccard(tok_ptr, tok_idx, i, j):
    a0, a1 = tok_ptr[i], tok_ptr[i + 1]
    b0, b1 = tok_ptr[j], tok_ptr[j + 1]
    inter = 0
    p, q = a0, b0
    while p < a1 and q < b1:
        if tok_idx[p] == tok_idx[q]:
            inter += 1
            p += 1
            q += 1
        elif tok_idx[p] < tok_idx[q]:
            p += 1
        else:
            q += 1
    union = (a1 - a0) + (b1 - b0) - inter
    if union == 0:
        return 0.0
    return inter / union


@njit
def pair_features(ts, author, tok_ptr, tok_idx, men_ptr, men_idx, opener, pi, pj):
    out = np.zeros((len(pi), 6))
    for p in range(len(pi)):
        i = pi[p]
        j = pj[p]
        out[p, 0] = math.log1p(max(ts[i] - ts[j], 0.0))
        out[p, 1] = i - j
        out[p, 2] = 1.0 if author[i] == author[j] else 0.0
        for m in range(men_ptr[i], men_ptr[i + 1]):
            if men_idx[m] == author[j]:
                out[p, 3] = 1.0
                break
        out[p, 4] = _jaccard(tok_ptr, tok_idx, i, j)
        out[p, 5] = 1.0 if opener[j] else 0.0
    return out


@njit
def select_antecedents(indptr, cand_pos, scores, self_scores):
    n = len(indptr) - 1
    chosen = np.full(n, -1, dtype=np.int64)
    for u in range(n):
        best = -np.inf
        best_pos = -1
        for k in range(indptr[u], indptr[u + 1]):
            s = scores[k]
            if s > best or (s == best and cand_pos[k] > best_pos):
                best = s
                best_pos = cand_pos[k]
        if best_pos >= 0 and best >= self_scores[u]:
            chosen[u] = best_pos
    return chosen


@njit
def confusion_matrix(gold, pred, k):
    out = np.zeros((k, k), dtype=np.int64)
    for n in range(len(gold)):
        out[gold[n], pred[n]] += 1
    return out
