"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each workload is run on both backends, outputs are checked for equality,
and the best wall time of ``--repeat`` runs is reported.
"""

import argparse
import sys
import time

import numpy as np

from desknmt import _kernels
from desknmt.tokenizer import learn_bpe, word_frequencies
from desknmt.toydata import toy_parallel


def best_of(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def workloads():
    corpus = toy_parallel(3000, seed=3, name_prob=0.5)
    lines = corpus.sources + corpus.targets
    freqs = word_frequencies(lines)
    table = learn_bpe(freqs, 400)
    words = [list(w) for w in freqs for _ in range(3)]
    ranks = table.ranks

    rng = np.random.default_rng(0)
    perms = [rng.permutation(n).tolist() for n in rng.integers(5, 60, size=4000)]

    def segment(k):
        return lambda: [k.apply_merges(w, ranks) for w in words]

    def ascending(k):
        return lambda: [k.count_ascending(p) for p in perms]

    def merge(k):
        seqs = [list("abababcabab" * 4) for _ in range(5000)]
        return lambda: [k.merge_pair(s, "a", "b") for s in seqs]

    return [
        ("apply_merges", segment, f"{len(words)} words, {len(table)} merges"),
        ("count_ascending", ascending, f"{len(perms)} permutations"),
        ("merge_pair", merge, "5000 sequences"),
    ]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    py = _kernels.python_backend
    cy = _kernels.compiled_backend
    if cy is None:
        print("compiled backend unavailable; build with `pip install -e . --no-build-isolation`")
    print(f"{'kernel':<16} {'workload':<28} {'python s':>10} {'cython s':>10} {'speedup':>8}")
    for name, make, desc in workloads():
        tp, out_py = best_of(make(py), args.repeat)
        if cy is None:
            print(f"{name:<16} {desc:<28} {tp:>10.4f} {'-':>10} {'-':>8}")
            continue
        tc, out_cy = best_of(make(cy), args.repeat)
        if out_py != out_cy:
            print(f"{name}: backends disagree", file=sys.stderr)
            return 1
        print(f"{name:<16} {desc:<28} {tp:>10.4f} {tc:>10.4f} {tp / tc:>7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
