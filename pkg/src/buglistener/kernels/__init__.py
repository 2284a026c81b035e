"""Hot numeric loops, compiled with numba when available.

``BUGLISTENER_KERNELS=numpy`` forces the pure-numpy path; ``numba`` (the
default) uses the jitted loops and falls back to numpy if numba cannot be
imported. Both paths are importable directly as ``numpy_backend`` and
``numba_backend`` for testing and benchmarking.
"""

import logging
import os

import numpy as np

from . import _numpy as numpy_backend

logger = logging.getLogger(__name__)

ENV_FLAG = "BUGLISTENER_KERNELS"

try:
    from . import _numba as numba_backend
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba_backend = None


def _select_backend():
    wanted = os.environ.get(ENV_FLAG, "numba").strip().lower()
    if wanted not in ("numba", "numpy"):
        raise ValueError(f"{ENV_FLAG} must be 'numba' or 'numpy', got {wanted!r}")
    if wanted == "numba" and numba_backend is None:
        logger.warning("numba unavailable, using numpy kernels")
        return "numpy", numpy_backend
    return wanted, numba_backend if wanted == "numba" else numpy_backend


BACKEND, _impl = _select_backend()


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def connected_components(n, src, dst):
    """Label each of ``n`` vertices with the smallest vertex index in its
    undirected component."""
    return _impl.connected_components(int(n), _i64(src), _i64(dst))


def normalize_by_source(src, scores, n_vertices, eps=1e-12):
    """Normalize non-negative parts of edge scores over each source vertex.

    Sources whose clipped score sum is at most ``eps`` get uniform weights
    ``1/outdeg``. Returns ``(weights, fallback_mask)``.
    """
    return _impl.normalize_by_source(_i64(src), _f64(scores), int(n_vertices), float(eps))


def pair_features(ts, author, tok_ptr, tok_idx, men_ptr, men_idx, opener, pi, pj):
    """Handcrafted reply-to features for candidate pairs ``(pi[p], pj[p])``.

    Columns: log1p time gap, index distance, same author, replier mentions
    the replied author, token Jaccard overlap, replied utterance is an opener.
    Token and mention rows are CSR arrays with sorted unique ids per row.
    """
    return _impl.pair_features(
        _f64(ts), _i64(author), _i64(tok_ptr), _i64(tok_idx), _i64(men_ptr),
        _i64(men_idx), np.ascontiguousarray(opener, dtype=np.bool_), _i64(pi), _i64(pj),
    )


def select_antecedents(indptr, cand_pos, scores, self_scores):
    """Pick the best-scoring earlier candidate per utterance.

    Ties go to the larger (more recent) candidate position. Returns -1 where
    the utterance has no candidates or its self score is strictly higher.
    """
    return _impl.select_antecedents(_i64(indptr), _i64(cand_pos), _f64(scores), _f64(self_scores))


def confusion_matrix(gold, pred, k):
    """``k x k`` counts, rows indexed by gold label, columns by prediction."""
    return _impl.confusion_matrix(_i64(gold), _i64(pred), int(k))
