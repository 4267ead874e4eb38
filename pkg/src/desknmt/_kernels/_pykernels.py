"""Pure-Python hot loops. Semantics must match ``_ckernels.pyx`` exactly."""

from __future__ import annotations


def merge_pair(symbols: list[str], left: str, right: str) -> list[str]:
    """Replace every non-overlapping (left, right) occurrence, scanning left to right."""
    out = []
    i = 0
    n = len(symbols)
    joined = left + right
    while i < n:
        if i + 1 < n and symbols[i] == left and symbols[i + 1] == right:
            out.append(joined)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return out


def apply_merges(symbols: list[str], ranks: dict) -> list[str]:
    """Apply a rank table to one word as if every merge were run in rank order.

    Each round picks the lowest-ranked adjacent pair whose rank exceeds the
    last one applied; pairs created with a rank that already passed are left
    alone, exactly as a sequential pass over the table would leave them.
    """
    last = -1
    while len(symbols) > 1:
        best = -1
        best_pair = None
        for i in range(len(symbols) - 1):
            r = ranks.get((symbols[i], symbols[i + 1]))
            if r is not None and r > last and (best < 0 or r < best):
                best = r
                best_pair = (symbols[i], symbols[i + 1])
        if best_pair is None:
            break
        symbols = merge_pair(symbols, best_pair[0], best_pair[1])
        last = best
    return symbols


def count_ascending(seq: list[int]) -> int:
    """Number of index pairs i < j with seq[i] < seq[j]."""
    n = len(seq)
    total = 0
    for i in range(n - 1):
        a = seq[i]
        for j in range(i + 1, n):
            if a < seq[j]:
                total += 1
    return total
