# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled twins of ``_pykernels``; identical semantics, typed loops."""


cpdef list merge_pair(list symbols, str left, str right):
    cdef Py_ssize_t i = 0
    cdef Py_ssize_t n = len(symbols)
    cdef list out = []
    cdef str joined = left + right
    while i < n:
        if i + 1 < n and symbols[i] == left and symbols[i + 1] == right:
            out.append(joined)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return out


cpdef list apply_merges(list symbols, dict ranks):
    cdef Py_ssize_t last = -1
    cdef Py_ssize_t best, r, i
    cdef object rank
    cdef object best_left, best_right
    while len(symbols) > 1:
        best = -1
        best_left = None
        best_right = None
        for i in range(len(symbols) - 1):
            rank = ranks.get((symbols[i], symbols[i + 1]))
            if rank is None:
                continue
            r = rank
            if r > last and (best < 0 or r < best):
                best = r
                best_left = symbols[i]
                best_right = symbols[i + 1]
        if best_left is None:
            break
        symbols = merge_pair(symbols, best_left, best_right)
        last = best
    return symbols


def count_ascending(seq):
    cdef Py_ssize_t n = len(seq)
    cdef Py_ssize_t i, j
    cdef long long total = 0
    cdef long long a
    cdef long long[::1] buf
    if n < 2:
        return 0
    import array
    arr = array.array("q", [int(x) for x in seq])
    buf = arr
    for i in range(n - 1):
        a = buf[i]
        for j in range(i + 1, n):
            if a < buf[j]:
                total += 1
    return total
