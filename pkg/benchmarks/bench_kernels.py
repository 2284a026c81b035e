"""Time the numba and numpy kernel backends on synthetic inputs.

    python benchmarks/bench_kernels.py [--sizes 1000 10000 100000] [--repeat 5]

The first numba call per kernel is timed separately (JIT compile or cache
load); the table reports the best of ``--repeat`` warm runs.
"""

import argparse
import time

import numpy as np

from buglistener.kernels import numba_backend, numpy_backend


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def make_cases(n, rng, window=50):
    """Inputs sized like a chat log of ``n`` utterances."""
    cases = {}

    # union-find over reply links: one antecedent per utterance
    src = np.arange(1, n, dtype=np.int64)
    dst = src - rng.integers(1, np.minimum(src, window) + 1)
    cases["connected_components"] = (n, src, dst)

    # edge weights: ~3 out-edges per vertex
    e_src = np.sort(rng.integers(0, n, size=3 * n)).astype(np.int64)
    scores = rng.normal(size=3 * n)
    cases["normalize_by_source"] = (e_src, scores, n, 1e-12)

    # candidate windows for antecedent selection
    counts = np.minimum(np.arange(n), window)
    indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    cand = np.concatenate([np.arange(i - c, i) for i, c in enumerate(counts)]).astype(np.int64)
    cases["select_antecedents"] = (indptr, cand, rng.random(len(cand)), rng.random(n))

    # pair features over a slice of candidate pairs
    m = min(n, 2000)
    ts = np.cumsum(rng.exponential(30.0, size=m))
    author = rng.integers(0, 20, size=m).astype(np.int64)
    tok_rows = [np.unique(rng.integers(0, 500, size=rng.integers(1, 12))) for _ in range(m)]
    tok_ptr = np.concatenate([[0], np.cumsum([len(r) for r in tok_rows])]).astype(np.int64)
    tok_idx = np.concatenate(tok_rows).astype(np.int64)
    men_ptr = np.zeros(m + 1, dtype=np.int64)
    men_idx = np.zeros(0, dtype=np.int64)
    opener = rng.random(m) < 0.2
    k = np.minimum(np.arange(m), window)
    pi = np.repeat(np.arange(m), k).astype(np.int64)
    pj = np.concatenate([np.arange(i - c, i) for i, c in enumerate(k)]).astype(np.int64)
    cases["pair_features"] = (ts, author, tok_ptr, tok_idx, men_ptr, men_idx, opener, pi, pj)

    gold = rng.integers(0, 4, size=n).astype(np.int64)
    pred = rng.integers(0, 4, size=n).astype(np.int64)
    cases["confusion_matrix"] = (gold, pred, 4)
    return cases


def check_agree(name, a, b):
    if isinstance(a, tuple):
        return all(check_agree(name, x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-9, atol=1e-12)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[1_000, 10_000, 100_000])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if numba_backend is None:
        raise SystemExit("numba is not importable; nothing to compare")

    rng = np.random.default_rng(args.seed)
    first = make_cases(100, rng)
    print("first numba call (compile or cache load):")
    for name, inputs in first.items():
        t = time.perf_counter()
        getattr(numba_backend, name)(*inputs)
        print(f"  {name:<22} {1e3 * (time.perf_counter() - t):9.1f} ms")

    print(f"\n{'kernel':<22} {'n':>8} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}  agree")
    for n in args.sizes:
        for name, inputs in make_cases(n, rng).items():
            np_fn = getattr(numpy_backend, name)
            nb_fn = getattr(numba_backend, name)
            agree = check_agree(name, np_fn(*inputs), nb_fn(*inputs))
            t_np = _best(lambda: np_fn(*inputs), args.repeat)
            t_nb = _best(lambda: nb_fn(*inputs), args.repeat)
            print(f"{name:<22} {n:>8} {1e3 * t_np:10.3f} {1e3 * t_nb:10.3f} {t_np / t_nb:8.1f}  {agree}")


if __name__ == "__main__":
    main()
