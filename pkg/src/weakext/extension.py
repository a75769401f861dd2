"""Extend source votes to abstaining points through embedding space.

Each source keeps every vote it already casts.  For an abstaining point,
the source's voting neighborhood within its threshold radius is located
by an exhaustive scan over the source's support, and a weighting rule
(1-nearest-neighbor or a uniformly weighted sum) turns the neighborhood
into a vote; points with an empty neighborhood keep abstaining.  Newly
labeled points never seed further extension.

The scan is exact in float64.  Internally a float32 score pass prunes
candidates and every decision near a threshold or a tie is re-evaluated
in float64, so results are identical to a pure float64 scan.  When
several dense sources are extended at once the scan switches to a shared
blocked Gram traversal that computes each unordered block pair of points
once and reuses it for every source.
"""

from __future__ import annotations

import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _nnkernel
from .core import (
    EmbeddingSet,
    Metric,
    RadiusConfig,
    VoteMatrix,
    Weighting,
    paired_distances,
    pairwise_distances,
)

__all__ = [
    "NeighborSet",
    "ExtensionReport",
    "neighbors_in_support",
    "nearest_in_support",
    "extend_votes",
    "coverage",
    "min_overlap",
]

_BLOCK = 4096
_CHUNK_ELEMS = 32 * 1024 * 1024  # float32 score elements per per-source chunk


@dataclass(frozen=True)
class NeighborSet:
    """Voting neighbors of one query point for one source.

    Sorted by ascending distance, ties by ascending point index; every
    index lies in the source's support.
    """

    query_index: int
    indices: np.ndarray
    distances: np.ndarray


@dataclass(frozen=True)
class ExtensionReport:
    """Coverage and overlap statistics before and after extension."""

    radii: np.ndarray
    weighting: Weighting
    original_coverage: np.ndarray
    extended_coverage: np.ndarray
    newly_labeled_fraction: np.ndarray
    min_overlap_before: float | None
    min_overlap_after: float | None

    def to_dict(self) -> dict:
        return {
            "radii": self.radii.tolist(),
            "weighting": self.weighting.value,
            "original_coverage": self.original_coverage.tolist(),
            "extended_coverage": self.extended_coverage.tolist(),
            "newly_labeled_fraction": self.newly_labeled_fraction.tolist(),
            "min_overlap_before": self.min_overlap_before,
            "min_overlap_after": self.min_overlap_after,
        }


def coverage(votes: VoteMatrix) -> np.ndarray:
    """Fraction of points with a nonzero vote, per source."""
    return (votes.votes != 0).mean(axis=0)


def min_overlap(votes: VoteMatrix) -> float:
    """Empirical minimal overlap: min_i max_{j != i} of pairwise support overlap."""
    if votes.m < 2:
        raise ValueError("min_overlap requires at least 2 sources")
    nz = (votes.votes != 0).astype(np.float64)
    pair = (nz.T @ nz) / votes.n
    np.fill_diagonal(pair, -np.inf)
    return float(pair.max(axis=1).min())


def neighbors_in_support(
    emb: EmbeddingSet,
    votes: VoteMatrix,
    source: int,
    query: int,
    radius: float,
    metric: Metric = Metric.COSINE,
) -> NeighborSet:
    """All support points of ``source`` within ``radius`` of ``query``."""
    if radius < 0:
        raise ValueError(f"radius must be nonnegative, got {radius}")
    if votes.votes[query, source] != 0:
        raise ValueError(f"point {query} is already voted on by source {source}")
    supp = votes.support(source)
    if supp.size == 0:
        return NeighborSet(query, np.empty(0, np.int64), np.empty(0, np.float64))
    dist = pairwise_distances(emb, [query], supp, metric)[0]
    keep = dist <= radius
    idx, d = supp[keep], dist[keep]
    order = np.lexsort((idx, d))
    return NeighborSet(query, idx[order], d[order])


# ---------------------------------------------------------------------------
# Bulk scan machinery


class _ScoreSpace:
    """Score = monotone proxy for closeness (cosine similarity or -dist^2).

    ``tau`` bounds |float32 score - float64 score|, so any comparison
    within ``tau`` of a threshold or a running maximum is re-decided in
    float64.
    """

    def __init__(self, emb: EmbeddingSet, metric: Metric):
        self.emb = emb
        self.metric = Metric(metric)
        if self.metric is Metric.COSINE:
            self.use32 = True
            self.tau = 1e-4  # >> d * eps_f32 for unit rows
        else:
            mx = float(emb.sq_norms.max())
            self.use32 = 0.0 < mx < 1e30
            # the float64 fallback still needs a band: block scores use the
            # norm-expansion form while exact checks difference coordinates
            self.tau = 2e-4 * mx if self.use32 else 1e-9 * mx
        if self.metric is Metric.EUCLIDEAN and self.use32:
            self._sq32 = emb.sq_norms.astype(np.float32)

    def block(self, lo_r, hi_r, lo_c, hi_c) -> np.ndarray:
        if self.metric is Metric.COSINE:
            u = self.emb.unit32 if self.use32 else self.emb.unit
            return u[lo_r:hi_r] @ u[lo_c:hi_c].T
        if self.use32:
            x, sq = self.emb.data32, self._sq32
        else:
            x, sq = self.emb.data, self.emb.sq_norms
        dot = x[lo_r:hi_r] @ x[lo_c:hi_c].T
        return 2.0 * dot - sq[lo_r:hi_r][:, None] - sq[lo_c:hi_c][None, :]

    def score_at_radius(self, r: float) -> float:
        if self.metric is Metric.COSINE:
            return 1.0 - r
        return -(r * r)


@dataclass
class _SourceState:
    source: int
    queries: np.ndarray  # abstaining rows, ascending
    support: np.ndarray  # voting rows, ascending
    radius: float
    # position of each point in `queries`, -1 elsewhere
    qpos: np.ndarray = field(default=None, repr=False)
    # 1nn accumulators (indexed by position in `queries`)
    best_dist: np.ndarray | None = None
    best_col: np.ndarray | None = None
    # wsum accumulators
    in_count: np.ndarray | None = None
    vote_sum: np.ndarray | None = None


def _new_state(votes, source, radius, weighting) -> _SourceState:
    col = votes.votes[:, source]
    q = np.flatnonzero(col == 0)
    s = np.flatnonzero(col != 0)
    qpos = np.full(votes.n, -1, dtype=np.int64)
    qpos[q] = np.arange(q.size)
    st = _SourceState(source, q, s, float(radius), qpos)
    if weighting is Weighting.ONE_NEAREST_NEIGHBOR:
        st.best_dist = np.full(q.size, np.inf)
        st.best_col = np.full(q.size, votes.n, dtype=np.int64)
    else:
        st.in_count = np.zeros(q.size, dtype=np.int64)
        st.vote_sum = np.zeros(q.size, dtype=np.int64)
    return st


def _merge_nearest(st, pos, dist, col, lock):
    with lock:
        cur_d, cur_c = st.best_dist[pos], st.best_col[pos]
        better = (dist < cur_d) | ((dist == cur_d) & (col < cur_c))
        upd = pos[better]
        st.best_dist[upd] = dist[better]
        st.best_col[upd] = col[better]


def _refine_first_per_group(emb, metric, groups, qids, cids):
    """Exact distances for candidate pairs; keep the best per group.

    Returns (group index, distance, support id) of each group's winner,
    ties resolved to the smallest support id.
    """
    dist = paired_distances(emb, qids, cids, metric)
    order = np.lexsort((cids, dist, groups))
    gs = groups[order]
    first = np.empty(gs.size, dtype=bool)
    first[0] = True
    first[1:] = gs[1:] != gs[:-1]
    pick = order[first]
    return groups[pick], dist[pick], cids[pick]


def _reduce_query_rows(sub, qpos, qids, cols, st, space, votes, lock, weighting):
    """Fold a (queries x support) score block into the accumulators."""
    if sub.size == 0:
        return
    emb, metric, tau = space.emb, space.metric, space.tau
    if weighting is Weighting.ONE_NEAREST_NEIGHBOR:
        am = sub.argmax(axis=1)
        mx = sub[np.arange(sub.shape[0]), am]
        rr, cc = np.nonzero(sub >= (mx[:, None] - tau))
        grp, dist, cid = _refine_first_per_group(emb, metric, rr, qids[rr], cols[cc])
        _merge_nearest(st, qpos[grp], dist, cid, lock)
        return
    sthr = space.score_at_radius(st.radius)
    vcol = votes.votes[cols, st.source].astype(np.float64)
    definite = sub > (sthr + tau)
    counts = definite.sum(axis=1).astype(np.int64)
    sums = np.rint(definite.astype(np.float64) @ vcol).astype(np.int64)
    rr, cc = np.nonzero(np.abs(sub - np.float64(sthr)) <= tau)
    if rr.size:
        dist = paired_distances(emb, qids[rr], cols[cc], metric)
        inside = dist <= st.radius
        rr, cc = rr[inside], cc[inside]
        np.add.at(counts, rr, 1)
        np.add.at(sums, rr, vcol[cc].astype(np.int64))
    with lock:
        st.in_count[qpos] += counts
        st.vote_sum[qpos] += sums


def _reduce_support_rows_wsum(mat, supp_local, supp_ids, col_base, st, space, votes, lock):
    """Fold a (support x block-column) score block into wsum accumulators.

    ``mat`` holds scores for a contiguous column block of points; rows of
    interest are the source's support inside the row block.  Columns that
    are not queries of the source are dropped from the sparse candidate
    lists instead of being sliced out up front.
    """
    if supp_local.size == 0:
        return
    ncols = mat.shape[1]
    qp_cols = st.qpos[col_base : col_base + ncols]
    if not (qp_cols >= 0).any():
        return
    emb, metric, tau = space.emb, space.metric, space.tau
    sub = mat[supp_local]
    sthr = space.score_at_radius(st.radius)
    vrow = votes.votes[supp_ids, st.source].astype(np.float64)
    definite = sub > (sthr + tau)
    counts = definite.sum(axis=0).astype(np.int64)
    sums = np.rint(vrow @ definite.astype(np.float64)).astype(np.int64)
    rr, cc = np.nonzero(np.abs(sub - np.float64(sthr)) <= tau)
    keep = qp_cols[cc] >= 0
    rr, cc = rr[keep], cc[keep]
    if rr.size:
        dist = paired_distances(emb, np.int64(col_base) + cc, supp_ids[rr], metric)
        inside = dist <= st.radius
        rr, cc = rr[inside], cc[inside]
        np.add.at(counts, cc, 1)
        np.add.at(sums, cc, vrow[rr].astype(np.int64))
    valid = qp_cols >= 0
    with lock:
        st.in_count[qp_cols[valid]] += counts[valid]
        st.vote_sum[qp_cols[valid]] += sums[valid]


def _run_tasks(tasks, threads):
    if threads <= 1 or len(tasks) <= 1:
        for t in tasks:
            t()
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for f in [pool.submit(t) for t in tasks]:
            f.result()


def _scan_sources(emb, votes, states, weighting, metric, threads):
    """Fill the accumulators of every state by exhaustive support scans."""
    states = [st for st in states if st.queries.size and st.support.size]
    if not states:
        return
    space = _ScoreSpace(emb, metric)
    lock = threading.Lock()
    n = votes.n

    per_source_cells = sum(st.queries.size * st.support.size for st in states)
    shared_cells = n * n // 2 + n * _BLOCK // 2
    use_shared = len(states) >= 2 and shared_cells < per_source_cells and space.use32
    if use_shared and weighting is Weighting.ONE_NEAREST_NEIGHBOR and _nnkernel.AVAILABLE:
        _scan_shared_nearest(emb, votes, states, space, threads)
        return

    tasks = []
    if use_shared and weighting is Weighting.THRESHOLDED_WEIGHTED_SUM:
        bounds = list(range(0, n, _BLOCK)) + [n]
        nblk = len(bounds) - 1
        scut = [np.searchsorted(st.support, bounds) for st in states]

        def make_pair(bi, bj):
            lo_i, hi_i = bounds[bi], bounds[bi + 1]
            lo_j, hi_j = bounds[bj], bounds[bj + 1]

            def task():
                mat = space.block(lo_i, hi_i, lo_j, hi_j)
                # queries in the J columns, support rows inside block I
                for k, st in enumerate(states):
                    sl = st.support[scut[k][bi] : scut[k][bi + 1]]
                    _reduce_support_rows_wsum(mat, sl - lo_i, sl, lo_j, st, space, votes, lock)
                if bi != bj:
                    tmat = np.ascontiguousarray(mat.T)
                    for k, st in enumerate(states):
                        sl = st.support[scut[k][bj] : scut[k][bj + 1]]
                        _reduce_support_rows_wsum(tmat, sl - lo_j, sl, lo_i, st, space, votes, lock)

            return task

        for bi in range(nblk):
            for bj in range(bi, nblk):
                tasks.append(make_pair(bi, bj))
    else:
        for st in states:
            chunk = max(64, _CHUNK_ELEMS // st.support.size)

            def make_chunk(st, lo, hi, scols):
                def task():
                    qg = st.queries[lo:hi]
                    sub = _rect_block(space, qg, scols)
                    _reduce_query_rows(sub, np.arange(lo, hi), qg, scols, st, space, votes, lock, weighting)

                return task

            for lo in range(0, st.queries.size, chunk):
                tasks.append(make_chunk(st, lo, min(lo + chunk, st.queries.size), st.support))
    _run_tasks(tasks, threads)


def _scan_shared_nearest(emb, votes, states, space, threads):
    """Blocked Gram traversal folding all sources' 1nn scans at once.

    Every unordered block pair is scored once; numba kernels maintain
    per-(source, point) top-2 float32 scores.  A query whose top-2 gap
    exceeds the float32 error band has a provably unique float64 winner;
    the rest are resolved by an exact rescan.
    """
    if votes.n >= 2**31:
        raise ValueError("shared scan supports at most 2^31 - 1 points")
    _nnkernel.set_threads(threads)
    n = votes.n
    bounds = list(range(0, n, _BLOCK)) + [n]
    nblk = len(bounds) - 1
    groups = [
        states[g : g + _nnkernel.MAX_SOURCES_PER_GROUP]
        for g in range(0, len(states), _nnkernel.MAX_SOURCES_PER_GROUP)
    ]
    accs = []
    qbits_all = []
    scuts = []
    for grp in groups:
        mg = len(grp)
        qbits = np.zeros(n, np.uint32)
        for k, st in enumerate(grp):
            qbits[st.queries] |= np.uint32(1 << k)
        qbits_all.append(qbits)
        scuts.append([np.searchsorted(st.support, bounds) for st in grp])
        accs.append(
            (
                np.full((mg, n), -np.inf, np.float32),
                np.full((mg, n), -np.inf, np.float32),
                np.full((mg, n), -1, np.int32),
            )
        )

    pairs = [(bi, bj) for bi in range(nblk) for bj in range(bi, nblk)]

    def score_pair(idx):
        bi, bj = pairs[idx]
        return space.block(bounds[bi], bounds[bi + 1], bounds[bj], bounds[bj + 1])

    # pipeline: score the next block pair (BLAS) while kernels fold this one
    prefetch = ThreadPoolExecutor(max_workers=1) if threads > 1 and len(pairs) > 1 else None
    pending = prefetch.submit(score_pair, 0) if prefetch else None
    try:
        for idx, (bi, bj) in enumerate(pairs):
            mat = pending.result() if pending is not None else score_pair(idx)
            if prefetch and idx + 1 < len(pairs):
                pending = prefetch.submit(score_pair, idx + 1)
            else:
                pending = None
            lo_i, lo_j = bounds[bi], bounds[bj]
            for grp, qbits, scut, (am, ar, aa) in zip(groups, qbits_all, scuts, accs):
                # support rows in block I vote on every column point of block J
                rows = [st.support[scut[k][bi] : scut[k][bi + 1]] - lo_i for k, st in enumerate(grp)]
                srcs = [np.full(r.size, k, np.int64) for k, r in enumerate(rows)]
                _nnkernel.fold_support_rows(
                    mat, np.concatenate(rows), np.concatenate(srcs), am, ar, aa, lo_i, lo_j
                )
                if bi != bj:
                    # query rows in block I scan support columns in block J
                    cols = [st.support[scut[k][bj] : scut[k][bj + 1]] - lo_j for k, st in enumerate(grp)]
                    cstarts = np.cumsum([0] + [c.size for c in cols]).astype(np.int64)
                    _nnkernel.fold_support_cols(
                        mat, qbits, np.concatenate(cols), cstarts, am, ar, aa, lo_i, lo_j,
                    )
    finally:
        if prefetch:
            prefetch.shutdown(wait=False, cancel_futures=True)

    tau = space.tau
    for grp, (am, ar, aa) in zip(groups, accs):
        for k, st in enumerate(grp):
            mx = am[k, st.queries].astype(np.float64)
            rn = ar[k, st.queries].astype(np.float64)
            arg = aa[k, st.queries]
            found = np.isfinite(mx)
            sure = found & ((mx - rn) > tau)
            idx = np.flatnonzero(sure)
            if idx.size:
                st.best_dist[idx] = paired_distances(emb, st.queries[idx], arg[idx], space.metric)
                st.best_col[idx] = arg[idx]
            fb = np.flatnonzero(found & ~sure)
            if fb.size:
                d, c = _exact_nearest(emb, st.queries[fb], st.support, space.metric)
                st.best_dist[fb] = d
                st.best_col[fb] = c


def _exact_nearest(emb, queries, support, metric):
    """Exact float64 nearest support point per query; ties to lowest index."""
    best_d = np.empty(queries.size)
    best_c = np.empty(queries.size, np.int64)
    chunk = max(16, 4 * 1024 * 1024 // max(support.size, 1))
    for lo in range(0, queries.size, chunk):
        dist = pairwise_distances(emb, queries[lo : lo + chunk], support, metric)
        am = dist.argmin(axis=1)
        rows = np.arange(dist.shape[0])
        best_d[lo : lo + chunk] = dist[rows, am]
        best_c[lo : lo + chunk] = support[am]
    return best_d, best_c


def _rect_block(space, rows, cols) -> np.ndarray:
    if space.metric is Metric.COSINE:
        u = space.emb.unit32 if space.use32 else space.emb.unit
        return u[rows] @ u[cols].T
    if space.use32:
        x, sq = space.emb.data32, space._sq32
    else:
        x, sq = space.emb.data, space.emb.sq_norms
    dot = x[rows] @ x[cols].T
    return 2.0 * dot - sq[rows][:, None] - sq[cols][None, :]


def _default_threads(threads):
    if threads is None:
        return min(4, os.cpu_count() or 1)
    return max(1, int(threads))


def nearest_in_support(
    emb: EmbeddingSet,
    votes: VoteMatrix,
    source: int,
    metric: Metric = Metric.COSINE,
    threads: int | None = None,
):
    """For every abstaining point: its nearest support point of ``source``.

    Returns ``(queries, distances, nearest_index)``; distance is ``inf``
    (index ``n``) when the support is empty.  Ties resolve to the lowest
    point index.
    """
    st = _new_state(votes, source, np.inf, Weighting.ONE_NEAREST_NEIGHBOR)
    _scan_sources(emb, votes, [st], Weighting.ONE_NEAREST_NEIGHBOR, metric, _default_threads(threads))
    return st.queries, st.best_dist, st.best_col


def extend_votes(
    emb: EmbeddingSet,
    votes: VoteMatrix,
    config: RadiusConfig,
    metric: Metric = Metric.COSINE,
    threads: int | None = None,
) -> tuple[VoteMatrix, ExtensionReport]:
    """Extend every source's votes to abstainers within its radius.

    Existing votes are never altered; a radius of 0 leaves a source
    untouched; abstainers with an empty neighborhood keep abstaining.
    With the weighted-sum rule a neighborhood voting to an exact zero sum
    stays an abstain.
    """
    if emb.n != votes.n:
        raise ValueError(f"embeddings have {emb.n} rows but votes have {votes.n}")
    if config.radii.shape[0] != votes.m:
        raise ValueError(f"config has {config.radii.shape[0]} radii for {votes.m} sources")
    weighting = config.weighting
    threads = _default_threads(threads)

    states = [
        _new_state(votes, j, config.radii[j], weighting)
        for j in range(votes.m)
        if config.radii[j] > 0.0
    ]
    _scan_sources(emb, votes, states, weighting, metric, threads)

    extended = np.array(votes.votes, copy=True)
    newly = np.zeros(votes.m, dtype=np.float64)
    for st in states:
        if st.queries.size == 0 or st.support.size == 0:
            continue
        if weighting is Weighting.ONE_NEAREST_NEIGHBOR:
            member = st.best_dist <= st.radius
            vote = votes.votes[np.minimum(st.best_col, votes.n - 1), st.source]
            extended[st.queries[member], st.source] = vote[member]
        else:
            member = st.in_count > 0
            vote = np.sign(st.vote_sum).astype(np.int8)
            extended[st.queries[member], st.source] = vote[member]
        newly[st.source] = member.sum() / votes.n

    out = VoteMatrix(extended)
    report = ExtensionReport(
        radii=config.radii,
        weighting=weighting,
        original_coverage=coverage(votes),
        extended_coverage=coverage(out),
        newly_labeled_fraction=newly,
        min_overlap_before=min_overlap(votes) if votes.m >= 2 else None,
        min_overlap_after=min_overlap(out) if votes.m >= 2 else None,
    )
    return out, report
