"""Synthetic planar tasks, radius sweeps, tuning, and evaluation metrics.

The synthetic family draws points uniformly on the unit square, labels
them by an alternating checkerboard of ``cells x cells`` squares (or
spatially at random), and gives each source a random support on which it
votes the true label with a configured accuracy.  Supports and noise
draws come from per-purpose child seeds, so changing one source's
accuracy never moves any support, and the correct-vote coupling is
monotone in the accuracy.  Distances in this planar space are Euclidean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    DegeneracyError,
    EmbeddingSet,
    LabelVector,
    Metric,
    RadiusConfig,
    VoteMatrix,
    Weighting,
)
from .diagnostics import (
    DEFAULT_PAIR_BUDGET,
    LipschitzProfile,
    estimate_profile,
    leave_one_out_constant,
    lift_bound_curve,
)
from .extension import coverage, extend_votes, nearest_in_support
from .label_model import estimate_accuracies, predict

__all__ = [
    "SyntheticTask",
    "generate_checkerboard",
    "MetricsReport",
    "evaluate",
    "RadiusBins",
    "SweepResult",
    "sweep_radius",
    "TuneResult",
    "tune_shared_radius",
    "RefineResult",
    "refine_radii",
    "TheoryRadiusResult",
    "theory_guided_radius",
]


@dataclass(frozen=True)
class SyntheticTask:
    embeddings: EmbeddingSet
    gold: LabelVector
    votes: VoteMatrix
    seed: int
    layout: str
    cells: int
    accuracies: tuple
    support_fractions: tuple

    @property
    def metric(self) -> Metric:
        return Metric.EUCLIDEAN


def generate_checkerboard(
    n: int,
    cells: int,
    num_sources: int,
    accuracies,
    support_fractions,
    seed: int,
    layout: str = "checkerboard",
) -> SyntheticTask:
    """Planar task with checkerboard (or spatially random) gold labels.

    A cell whose coordinate sum is even is positive.  Each source votes
    on a uniformly random subset of the configured fraction, agreeing
    with the gold label independently with its configured accuracy.
    """
    if n < 1 or cells < 1:
        raise ValueError("n and cells must be positive")
    if num_sources < 3:
        raise ValueError("synthetic tasks need at least 3 sources for the label model")
    if layout not in ("checkerboard", "random"):
        raise ValueError(f"unknown layout {layout!r}")
    accuracies = tuple(float(a) for a in accuracies)
    support_fractions = tuple(float(p) for p in support_fractions)
    if len(accuracies) != num_sources or len(support_fractions) != num_sources:
        raise ValueError("accuracies and support_fractions must have one entry per source")
    if any(not 0.0 <= a <= 1.0 for a in accuracies):
        raise ValueError("accuracies must lie in [0, 1]")
    if any(not 0.0 <= p <= 1.0 for p in support_fractions):
        raise ValueError("support fractions must lie in [0, 1]")

    # independent streams: changing the layout or accuracies never moves
    # the points or the supports
    s_points, s_labels, s_support, s_noise = np.random.SeedSequence(seed).spawn(4)
    points = np.random.default_rng(s_points).uniform(size=(n, 2))
    if layout == "checkerboard":
        cell = np.minimum((points * cells).astype(np.int64), cells - 1)
        gold = np.where((cell.sum(axis=1) % 2) == 0, 1, -1).astype(np.int8)
    else:
        gold = np.where(np.random.default_rng(s_labels).random(n) < 0.5, 1, -1).astype(np.int8)

    rng_support = np.random.default_rng(s_support)
    rng_noise = np.random.default_rng(s_noise)
    votes = np.zeros((n, num_sources), dtype=np.int8)
    for j in range(num_sources):
        size = int(round(support_fractions[j] * n))
        idx = rng_support.choice(n, size=size, replace=False)
        correct = rng_noise.random(size) < accuracies[j]
        votes[idx, j] = np.where(correct, gold[idx], -gold[idx])

    return SyntheticTask(
        embeddings=EmbeddingSet(points),
        gold=LabelVector(gold),
        votes=VoteMatrix(votes),
        seed=seed,
        layout=layout,
        cells=cells,
        accuracies=accuracies,
        support_fractions=support_fractions,
    )


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    n: int

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "n": self.n,
        }


def evaluate(predictions: LabelVector, gold: LabelVector) -> MetricsReport:
    """Accuracy, precision, recall, and F1 with +1 as the positive class.

    Zero-denominator precision/recall/F1 are reported as 0.
    """
    if predictions.n != gold.n:
        raise ValueError(f"predictions have {predictions.n} entries but gold has {gold.n}")
    p, g = predictions.labels, gold.labels
    tp = int(((p == 1) & (g == 1)).sum())
    fp = int(((p == 1) & (g == -1)).sum())
    fn = int(((p == -1) & (g == 1)).sum())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall else 0.0
    return MetricsReport(
        accuracy=float((p == g).mean()),
        precision=precision,
        recall=recall,
        f1=f1,
        n=gold.n,
    )


# ---------------------------------------------------------------------------
# Radius sweeps


@dataclass(frozen=True)
class SweepResult:
    """Per-radius coverage, metric, lift, and plug-in lift bound."""

    source: int
    radii: np.ndarray
    coverage: np.ndarray
    metric_values: np.ndarray
    lift: np.ndarray
    bound: np.ndarray | None
    base_metric: float
    weighting: Weighting
    metric_name: str = "accuracy"
    profile: LipschitzProfile | None = None
    extended_accuracy: np.ndarray | None = None
    new_region_accuracy: np.ndarray | None = None

    def to_csv(self, path) -> None:
        """Write (radius, coverage, metric, lift, bound) rows for plotting."""
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write("radius,coverage,metric,lift,bound\n")
            for k in range(self.radii.size):
                b = self.bound[k] if self.bound is not None else None
                cells = [self.radii[k], self.coverage[k], self.metric_values[k], self.lift[k], b]
                fh.write(",".join("" if c is None or not np.isfinite(c) else repr(float(c))
                                  for c in cells))
                fh.write("\n")


def _nearest_cache(emb, votes, source, metric, threads=None):
    queries, dist, col = nearest_in_support(emb, votes, source, metric=metric, threads=threads)
    vote = votes.votes[np.minimum(col, votes.n - 1), source]
    return queries, dist, vote


def _threshold_column(votes, source, cache, radius):
    """Extended column of one source at ``radius`` from its nearest cache."""
    col = np.array(votes.votes[:, source], copy=True)
    if radius > 0:
        queries, dist, vote = cache
        sel = dist <= radius
        col[queries[sel]] = vote[sel]
    return col


class RadiusBins:
    """Cached query-support distance binning for repeated radius sweeps.

    Tasks generated from the same seed share points and supports even as
    accuracies or the label layout change, so the exact distances and
    their grid bins can be computed once per family.  ``d <= radii[b]``
    holds exactly for every bin index ``>= bins``; votes enter later as
    bincount weights.
    """

    def __init__(self, emb, votes, source, radii, metric):
        from .core import pairwise_distances

        self.radii = np.asarray(radii, dtype=np.float64)
        self.metric = Metric(metric)
        self.source = source
        col = votes.votes[:, source]
        self.queries = np.flatnonzero(col == 0)
        self.support = np.flatnonzero(col != 0)
        k = self.radii.size
        nq, ns = self.queries.size, self.support.size
        self._flat = np.empty((nq, ns), dtype=np.int64)
        if ns:
            chunk = max(16, 4 * 1024 * 1024 // ns)
            for lo in range(0, nq, chunk):
                q = self.queries[lo : lo + chunk]
                d = pairwise_distances(emb, q, self.support, self.metric)
                bins = np.searchsorted(self.radii, d, side="left")
                self._flat[lo : lo + chunk] = np.arange(lo, lo + q.size)[:, None] * (k + 1) + bins
        counts = np.bincount(self._flat.ravel(), minlength=nq * (k + 1)).reshape(nq, k + 1)
        self.counts = np.cumsum(counts[:, :-1], axis=1)

    def matches(self, votes, source) -> bool:
        col = votes.votes[:, source]
        return (
            source == self.source
            and np.array_equal(np.flatnonzero(col == 0), self.queries)
            and np.array_equal(np.flatnonzero(col != 0), self.support)
        )

    def vote_sums(self, votes) -> np.ndarray:
        """Signed support-vote sums per (query, radius) for one vote matrix."""
        nq, k = self.queries.size, self.radii.size
        w = np.broadcast_to(
            votes.votes[self.support, self.source].astype(np.float64), self._flat.shape
        )
        sums = np.bincount(self._flat.ravel(), weights=w.ravel(), minlength=nq * (k + 1))
        sums = np.rint(sums).astype(np.int64).reshape(nq, k + 1)
        return np.cumsum(sums[:, :-1], axis=1)


def sweep_radius(
    task: SyntheticTask,
    source: int,
    radii,
    prior: float = 0.5,
    weighting: Weighting = Weighting.THRESHOLDED_WEIGHTED_SUM,
    compute_bound: bool = True,
    pair_budget: int = DEFAULT_PAIR_BUDGET,
    profile_seed: int = 0,
    threads: int | None = None,
    bins: RadiusBins | None = None,
    on_degenerate: str = "raise",
) -> SweepResult:
    """Extend one source over a radius grid, refitting the model each time.

    Records the extended coverage of that source, the label model's
    accuracy against the task's gold labels, the lift over the
    unextended baseline, and the plug-in lift lower bound with the
    per-radius measured accuracies plugged in.

    The default weighting is the uniformly weighted sum: past the peak
    it averages over dissimilar regions and degrades, which is the
    over-extension regime this sweep studies (a 1-nearest-neighbor
    extension saturates once the radius exceeds the support's covering
    distance).

    Deep in the over-extension regime an agreement moment can hit an
    exact zero, where accuracy recovery degenerates at that radius;
    ``on_degenerate="skip"`` reports nan for such radii instead of
    raising.
    """
    if on_degenerate not in ("raise", "skip"):
        raise ValueError(f"on_degenerate must be 'raise' or 'skip', got {on_degenerate!r}")
    radii = np.asarray(radii, dtype=np.float64)
    emb, votes, gold = task.embeddings, task.votes, task.gold
    if not 0 <= source < votes.m:
        raise ValueError(f"source {source} out of range for {votes.m} sources")
    weighting = Weighting(weighting)

    base_params = estimate_accuracies(votes, prior)
    base_post, base_pred = predict(votes, base_params)
    base_metric = evaluate(base_pred, gold).accuracy

    if weighting is Weighting.ONE_NEAREST_NEIGHBOR:
        cache = _nearest_cache(emb, votes, source, task.metric, threads)
    else:
        if bins is None:
            bins = RadiusBins(emb, votes, source, radii, task.metric)
        elif not (np.array_equal(bins.radii, radii) and bins.matches(votes, source)):
            raise ValueError("supplied RadiusBins do not match this task's support and grid")
        queries, counts, sums = bins.queries, bins.counts, bins.vote_sums(votes)

    orig_col = np.array(votes.votes[:, source], copy=True)
    gold_arr = gold.labels
    cov = np.empty(radii.size)
    met = np.empty(radii.size)
    a_bar = np.full(radii.size, np.nan)
    a_new = np.full(radii.size, np.nan)
    work = np.array(votes.votes, copy=True)
    for k, r in enumerate(radii):
        if weighting is Weighting.ONE_NEAREST_NEIGHBOR:
            col = _threshold_column(votes, source, cache, float(r))
        else:
            col = np.array(orig_col, copy=True)
            if r > 0:
                member = counts[:, k] > 0
                col[queries[member]] = np.sign(sums[member, k]).astype(np.int8)
        work[:, source] = col
        vm = VoteMatrix(work)
        cov[k] = (col != 0).mean()
        try:
            params = estimate_accuracies(vm, prior)
            _, pred = predict(vm, params)
            met[k] = evaluate(pred, gold).accuracy
        except DegeneracyError:
            if on_degenerate == "raise":
                raise
            met[k] = np.nan
        ext_mask = col != 0
        new_mask = ext_mask & (orig_col == 0)
        if ext_mask.any():
            a_bar[k] = (col[ext_mask] == gold_arr[ext_mask]).mean()
        if new_mask.any():
            a_new[k] = (col[new_mask] == gold_arr[new_mask]).mean()

    bound = None
    profile = None
    if compute_bound:
        profile = estimate_profile(
            emb, radii, votes=votes, labels=gold, budget=pair_budget,
            seed=profile_seed, metric=task.metric,
        )
        c_const = leave_one_out_constant(votes, base_params, gold, source)
        p_j = float(coverage(votes)[source])
        bound = lift_bound_curve(
            profile, source, float(base_params.accuracies[source]), p_j, c_const,
            extended_accuracy_curve=a_bar, new_region_accuracy_curve=a_new,
        )
    return SweepResult(
        source=source,
        radii=radii,
        coverage=cov,
        metric_values=met,
        lift=met - base_metric,
        bound=bound,
        base_metric=base_metric,
        weighting=weighting,
        profile=profile,
        extended_accuracy=a_bar,
        new_region_accuracy=a_new,
    )


# ---------------------------------------------------------------------------
# Radius tuning on a labeled dev set


def _resolve_metric_name(name: str, dev_labels: LabelVector) -> str:
    if name != "auto":
        return name
    balance = float((dev_labels.labels == 1).mean())
    return "f1" if balance < 0.35 else "accuracy"


def _dev_metric(pred: LabelVector, dev_labels: LabelVector, name: str) -> float:
    head = LabelVector(pred.labels[: dev_labels.n])
    rep = evaluate(head, dev_labels)
    return rep.f1 if name == "f1" else rep.accuracy


@dataclass(frozen=True)
class TuneResult:
    radius: float
    metric_name: str
    metric_value: float
    radii: np.ndarray | None
    metric_curve: np.ndarray | None
    note: str | None = None


def tune_shared_radius(
    emb: EmbeddingSet,
    votes: VoteMatrix,
    dev_labels: LabelVector,
    prior: float,
    radii,
    metric: Metric = Metric.COSINE,
    weighting: Weighting = Weighting.ONE_NEAREST_NEIGHBOR,
    tune_metric: str = "auto",
    threads: int | None = None,
) -> TuneResult:
    """Grid-search one shared radius for the extend-fit-predict pipeline.

    Maximizes the dev metric; ties resolve toward the smaller radius.
    Sources with full coverage have nothing to extend, so if every
    source is fully covered the search is skipped.
    """
    radii = np.asarray(radii, dtype=np.float64)
    if radii.size == 0:
        raise ValueError("radius grid must be nonempty")
    if dev_labels.n == 0 or dev_labels.n > votes.n:
        raise ValueError("dev labels must cover a nonempty prefix of the dataset")
    name = _resolve_metric_name(tune_metric, dev_labels)
    weighting = Weighting(weighting)

    extendable = [
        j for j in range(votes.m) if (votes.votes[:, j] == 0).any() and (votes.votes[:, j] != 0).any()
    ]
    if not extendable:
        params = estimate_accuracies(votes, prior)
        _, pred = predict(votes, params)
        return TuneResult(
            radius=0.0,
            metric_name=name,
            metric_value=_dev_metric(pred, dev_labels, name),
            radii=None,
            metric_curve=None,
            note="no abstains to extend",
        )

    evaluate_radii = _make_pipeline_evaluator(
        emb, votes, dev_labels, prior, name, metric, weighting, extendable, threads
    )
    curve = np.array([evaluate_radii({j: float(r) for j in extendable}) for r in radii])
    best = int(np.argmax(curve))  # first max = smallest radius on ties
    return TuneResult(
        radius=float(radii[best]),
        metric_name=name,
        metric_value=float(curve[best]),
        radii=radii,
        metric_curve=curve,
    )


def _make_pipeline_evaluator(emb, votes, dev_labels, prior, name, metric, weighting, extendable, threads):
    """Dev-metric evaluator for per-source radii; caches 1nn scans."""
    if weighting is Weighting.ONE_NEAREST_NEIGHBOR:
        caches = {j: _nearest_cache(emb, votes, j, metric, threads) for j in extendable}
        work = np.array(votes.votes, copy=True)

        def run(radii_by_source: dict) -> float:
            for j in extendable:
                work[:, j] = _threshold_column(votes, j, caches[j], radii_by_source.get(j, 0.0))
            vm = VoteMatrix(work)
            params = estimate_accuracies(vm, prior)
            _, pred = predict(vm, params)
            return _dev_metric(pred, dev_labels, name)

        return run

    def run(radii_by_source: dict) -> float:
        vec = np.zeros(votes.m)
        for j, r in radii_by_source.items():
            vec[j] = r
        ext, _ = extend_votes(emb, votes, RadiusConfig(vec, weighting), metric=metric, threads=threads)
        params = estimate_accuracies(ext, prior)
        _, pred = predict(ext, params)
        return _dev_metric(pred, dev_labels, name)

    return run


@dataclass(frozen=True)
class RefineResult:
    config: RadiusConfig
    metric_name: str
    metric_value: float
    passes: int


def default_local_grid(r_star: float) -> np.ndarray:
    """Per-coordinate search grid around a shared radius."""
    return np.unique(r_star * np.array([0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0]))


def refine_radii(
    emb: EmbeddingSet,
    votes: VoteMatrix,
    dev_labels: LabelVector,
    prior: float,
    r_star: float,
    local_grids=None,
    passes: int = 1,
    metric: Metric = Metric.COSINE,
    weighting: Weighting = Weighting.ONE_NEAREST_NEIGHBOR,
    tune_metric: str = "auto",
    threads: int | None = None,
) -> RefineResult:
    """Per-coordinate descent over source radii starting from a shared value.

    Sources in fixed index order, one pass by default; each coordinate
    keeps its current radius among the candidates, so the dev metric
    never decreases.  Full-coverage sources are pinned to radius 0.
    """
    if passes < 1:
        raise ValueError("passes must be at least 1")
    name = _resolve_metric_name(tune_metric, dev_labels)
    weighting = Weighting(weighting)
    extendable = [
        j for j in range(votes.m) if (votes.votes[:, j] == 0).any() and (votes.votes[:, j] != 0).any()
    ]
    current = {j: float(r_star) for j in extendable}
    run = _make_pipeline_evaluator(emb, votes, dev_labels, prior, name, metric, weighting, extendable, threads)
    best_val = run(current) if extendable else _baseline_dev_metric(votes, prior, dev_labels, name)

    if local_grids is None:
        local_grids = {j: default_local_grid(float(r_star)) for j in extendable}
    elif not isinstance(local_grids, dict):
        local_grids = {j: np.asarray(g, dtype=np.float64) for j, g in zip(extendable, local_grids)}

    for _ in range(passes):
        for j in extendable:
            candidates = np.unique(np.append(np.asarray(local_grids[j], dtype=np.float64), current[j]))
            for r in candidates:  # ascending: ties keep the smaller radius
                if r == current[j]:
                    continue
                trial = dict(current)
                trial[j] = float(r)
                val = run(trial)
                if val > best_val or (val == best_val and r < current[j]):
                    best_val = val
                    current = trial

    radii = np.zeros(votes.m)
    for j, r in current.items():
        radii[j] = r
    return RefineResult(
        config=RadiusConfig(radii, weighting),
        metric_name=name,
        metric_value=float(best_val),
        passes=passes,
    )


def _baseline_dev_metric(votes, prior, dev_labels, name):
    params = estimate_accuracies(votes, prior)
    _, pred = predict(votes, params)
    return _dev_metric(pred, dev_labels, name)


@dataclass(frozen=True)
class TheoryRadiusResult:
    radius: float
    informative: bool
    bounds: np.ndarray


def theory_guided_radius(
    profile: LipschitzProfile,
    source: int,
    accuracy: float,
    support_fraction: float,
    other_sources_constant: float,
    radii=None,
    extended_accuracy_curve=None,
    new_region_accuracy_curve=None,
) -> TheoryRadiusResult:
    """Radius maximizing the plug-in lift lower bound.

    Accuracy plug-ins follow ``lift_bound_curve``: measured curves when
    supplied, chained lower bounds otherwise.  Returns radius 0 flagged
    non-informative when the bound is nowhere positive.
    """
    if radii is not None:
        radii = np.asarray(radii, dtype=np.float64)
        if radii.shape != profile.radii.shape or not np.array_equal(radii, profile.radii):
            raise ValueError("radius grid must match the profile's grid")
    bounds = lift_bound_curve(
        profile, source, accuracy, support_fraction, other_sources_constant,
        extended_accuracy_curve=extended_accuracy_curve,
        new_region_accuracy_curve=new_region_accuracy_curve,
    )
    best = int(np.argmax(bounds))
    if bounds[best] <= 0.0:
        return TheoryRadiusResult(radius=0.0, informative=False, bounds=bounds)
    return TheoryRadiusResult(radius=float(profile.radii[best]), informative=True, bounds=bounds)
