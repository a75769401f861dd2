"""Fused nearest-support reductions over shared Gram blocks.

Used by the 1-nearest-neighbor scan when several dense sources are
extended at once: each unordered block pair of points is scored once and
folded into per-source top-2 running maxima.  Tracking the runner-up
lets the caller prove in float64 terms when the float32 winner is the
true nearest support point; everything within the float32 error band
falls back to an exact rescan.

Accumulator layout: ``acc_max``/``acc_run``/``acc_arg`` are ``(m, n)``
arrays holding the best and second-best float32 scores seen for each
(source, point) and the point index attaining the best.  Kernels are
deterministic for any thread count: each parallel slice owns its output
entries, and score folding is a commutative top-2 merge (exact ties
leave the incumbent index in place, which the caller resolves exactly).
"""

import numpy as np

try:
    import numba
    from numba import njit, prange

    # kernels are only ever launched from one thread at a time, so the
    # portable workqueue layer suffices (and skips TBB version probing)
    numba.config.THREADING_LAYER = "workqueue"
    AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    AVAILABLE = False

MAX_SOURCES_PER_GROUP = 32
_CTILE = 1024  # column tile owned by one thread in fold_support_rows
_RTILE = 128  # row tile owned by one thread in fold_support_cols

if AVAILABLE:

    @njit(parallel=True, cache=True)
    def fold_support_rows(C, row_of_entry, src_of_entry, acc_max, acc_run, acc_arg, row_base, col_base):
        """Support points on rows: update every column point's top-2 per source."""
        nent = row_of_entry.shape[0]
        ncols = C.shape[1]
        ntiles = (ncols + _CTILE - 1) // _CTILE
        for t in prange(ntiles):
            c0 = t * _CTILE
            c1 = min(c0 + _CTILE, ncols)
            for e in range(nent):
                r = row_of_entry[e]
                j = src_of_entry[e]
                g = np.int32(row_base + r)
                for c in range(c0, c1):
                    v = C[r, c]
                    cc = col_base + c
                    mx = acc_max[j, cc]
                    rn = acc_run[j, cc]
                    ar = acc_arg[j, cc]
                    take = v > mx
                    lo = mx if take else v
                    acc_max[j, cc] = v if take else mx
                    acc_arg[j, cc] = g if take else ar
                    acc_run[j, cc] = lo if lo > rn else rn

    @njit(parallel=True, cache=True)
    def fold_support_cols(C, qbits, supp_col, supp_start, acc_max, acc_run, acc_arg, row_base, col_base):
        """Support points on columns: update every query row's top-2 per source."""
        nrows = C.shape[0]
        m = supp_start.shape[0] - 1
        ninf = np.float32(-np.inf)
        ntiles = (nrows + _RTILE - 1) // _RTILE
        for t in prange(ntiles):
            for r in range(t * _RTILE, min((t + 1) * _RTILE, nrows)):
                bits = qbits[row_base + r]
                if bits == 0:
                    continue
                for j in range(m):
                    if not (bits >> j) & 1:
                        continue
                    lo, hi = supp_start[j], supp_start[j + 1]
                    if lo == hi:
                        continue
                    m1 = ninf
                    m2 = ninf
                    argc = -1
                    for k in range(lo, hi):
                        c = supp_col[k]
                        v = C[r, c]
                        if v > m1:
                            m2 = m1
                            m1 = v
                            argc = c
                        elif v > m2:
                            m2 = v
                    g = row_base + r
                    gm = acc_max[j, g]
                    l2 = m1 if m1 < gm else gm
                    if m1 > gm:
                        acc_arg[j, g] = np.int32(col_base + argc)
                        acc_max[j, g] = m1
                    rn = acc_run[j, g]
                    rn = m2 if m2 > rn else rn
                    acc_run[j, g] = l2 if l2 > rn else rn

    def set_threads(threads: int) -> None:
        numba.set_num_threads(max(1, min(int(threads), numba.config.NUMBA_NUM_THREADS)))

else:  # pragma: no cover

    def set_threads(threads: int) -> None:
        pass
