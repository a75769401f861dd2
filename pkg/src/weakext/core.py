"""Core domain types, distance functions, and file I/O.

Data model: an embedding matrix (one row per data point), a vote matrix
over {-1, 0, +1} where 0 means the source abstains, hard label vectors
over {-1, +1}, per-source extension radii, and the parameters of the
probabilistic label model (per-source accuracies, abstain rates, and the
class-balance prior).

On-disk formats are byte-deterministic:

* ``.emb`` -- a single JSON header line ``{"d": <int>, "n": <int>}``
  terminated by ``\\n``, followed by ``n * d`` little-endian IEEE-754
  32-bit floats in row-major order.  In memory everything is float64.
* votes / labels -- headerless CSV of integers, one data point per row.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

__all__ = [
    "DataError",
    "DegeneracyError",
    "Metric",
    "Weighting",
    "EmbeddingSet",
    "VoteMatrix",
    "LabelVector",
    "RadiusConfig",
    "LabelModelParams",
    "cosine_distance",
    "pairwise_distances",
    "load_embeddings",
    "save_embeddings",
    "load_votes",
    "save_votes",
    "load_labels",
    "save_labels",
]


class DataError(ValueError):
    """Malformed or out-of-contract input data (files, matrices)."""


class DegeneracyError(ValueError):
    """A numeric degeneracy: estimator or bound undefined for these inputs."""


class Metric(str, Enum):
    COSINE = "cosine"
    EUCLIDEAN = "euclidean"


class Weighting(str, Enum):
    ONE_NEAREST_NEIGHBOR = "1nn"
    THRESHOLDED_WEIGHTED_SUM = "wsum"


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass
class EmbeddingSet:
    """An ``n x d`` real matrix of embeddings, one row per data point.

    Rows must be finite and nonzero (cosine distance is undefined on the
    zero vector).  Instances are immutable after construction and safe
    for concurrent reads; derived quantities (norms, unit rows, float32
    mirrors) are cached lazily.
    """

    data: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, order="C", copy=True)
        if data.ndim != 2:
            raise DataError(f"embedding matrix must be 2-D, got shape {data.shape}")
        if data.shape[0] == 0 or data.shape[1] == 0:
            raise DataError(f"embedding matrix must be nonempty, got shape {data.shape}")
        bad = np.flatnonzero(~np.isfinite(data).all(axis=1))
        if bad.size:
            raise DataError(f"non-finite embedding entry in row {bad[0]}")
        zero = np.flatnonzero((data == 0.0).all(axis=1))
        if zero.size:
            raise DataError(f"all-zero embedding row {zero[0]} (cosine distance undefined)")
        self.data = _freeze(data)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def _cached(self, key, build):
        val = self._cache.get(key)
        if val is None:
            val = _freeze(build())
            self._cache[key] = val
        return val

    @property
    def sq_norms(self) -> np.ndarray:
        return self._cached("sq", lambda: np.einsum("ij,ij->i", self.data, self.data))

    @property
    def unit(self) -> np.ndarray:
        """Rows scaled to unit Euclidean norm (float64)."""
        return self._cached("unit", lambda: self.data / np.sqrt(self.sq_norms)[:, None])

    @property
    def unit32(self) -> np.ndarray:
        return self._cached("unit32", lambda: self.unit.astype(np.float32))

    @property
    def data32(self) -> np.ndarray:
        return self._cached("data32", lambda: self.data.astype(np.float32))


def _validate_alphabet(arr: np.ndarray, alphabet: tuple, what: str) -> None:
    ok = np.isin(arr, alphabet)
    if not ok.all():
        if arr.ndim == 2:
            r, c = np.argwhere(~ok)[0]
            raise DataError(f"{what} entry {arr[r, c]} at (row {r}, col {c}) not in {sorted(alphabet)}")
        r = np.flatnonzero(~ok)[0]
        raise DataError(f"{what} entry {arr[r]} at row {r} not in {sorted(alphabet)}")


@dataclass
class VoteMatrix:
    """``n x m`` integer matrix of source votes; entries in {-1, 0, +1}."""

    votes: np.ndarray

    def __post_init__(self):
        votes = np.array(self.votes, dtype=np.int8, order="C", copy=True)
        if votes.ndim != 2:
            raise DataError(f"vote matrix must be 2-D, got shape {votes.shape}")
        _validate_alphabet(votes, (-1, 0, 1), "vote")
        self.votes = _freeze(votes)

    @property
    def n(self) -> int:
        return self.votes.shape[0]

    @property
    def m(self) -> int:
        return self.votes.shape[1]

    def support(self, j: int) -> np.ndarray:
        """Indices of the points source ``j`` votes on, ascending."""
        return np.flatnonzero(self.votes[:, j] != 0)


@dataclass
class LabelVector:
    """Hard labels over {-1, +1} (gold or predicted)."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.array(self.labels, dtype=np.int8, order="C", copy=True)
        if labels.ndim != 1:
            raise DataError(f"label vector must be 1-D, got shape {labels.shape}")
        _validate_alphabet(labels, (-1, 1), "label")
        self.labels = _freeze(labels)

    @property
    def n(self) -> int:
        return self.labels.shape[0]


@dataclass
class RadiusConfig:
    """Per-source extension radii (distance units) plus the weighting rule.

    A radius of 0 means "do not extend this source".
    """

    radii: np.ndarray
    weighting: Weighting = Weighting.ONE_NEAREST_NEIGHBOR

    def __post_init__(self):
        radii = np.array(self.radii, dtype=np.float64, order="C", copy=True)
        if radii.ndim != 1:
            raise DataError(f"radii must be 1-D, got shape {radii.shape}")
        if not np.isfinite(radii).all() or (radii < 0).any():
            raise DataError("radii must be finite and nonnegative")
        self.radii = _freeze(radii)
        self.weighting = Weighting(self.weighting)

    @classmethod
    def from_similarities(cls, sims, weighting=Weighting.ONE_NEAREST_NEIGHBOR) -> "RadiusConfig":
        """Convert cosine-similarity thresholds ``s`` to radii ``1 - s``."""
        sims = np.asarray(sims, dtype=np.float64)
        return cls(1.0 - sims, weighting)

    def to_dict(self) -> dict:
        return {"radii": self.radii.tolist(), "weighting": self.weighting.value}

    @classmethod
    def from_dict(cls, d: dict) -> "RadiusConfig":
        return cls(np.asarray(d["radii"], dtype=np.float64), Weighting(d["weighting"]))


@dataclass
class LabelModelParams:
    """Label-model parameters: accuracies a_i in (0,1), abstain rates, prior."""

    accuracies: np.ndarray
    abstain_rates: np.ndarray
    prior: float

    def __post_init__(self):
        acc = np.array(self.accuracies, dtype=np.float64, order="C", copy=True)
        ab = np.array(self.abstain_rates, dtype=np.float64, order="C", copy=True)
        if acc.ndim != 1 or ab.shape != acc.shape:
            raise DataError("accuracies and abstain_rates must be 1-D and the same length")
        if not ((acc > 0) & (acc < 1)).all():
            raise DataError("accuracies must lie strictly in (0, 1)")
        if not ((ab >= 0) & (ab <= 1)).all():
            raise DataError("abstain rates must lie in [0, 1]")
        if not (0.0 < self.prior < 1.0):
            raise DataError(f"class-balance prior must lie strictly in (0, 1), got {self.prior}")
        self.accuracies = _freeze(acc)
        self.abstain_rates = _freeze(ab)
        self.prior = float(self.prior)

    @property
    def m(self) -> int:
        return self.accuracies.shape[0]

    def to_dict(self) -> dict:
        return {
            "accuracies": self.accuracies.tolist(),
            "abstain_rates": self.abstain_rates.tolist(),
            "prior": self.prior,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LabelModelParams":
        return cls(
            np.asarray(d["accuracies"], dtype=np.float64),
            np.asarray(d["abstain_rates"], dtype=np.float64),
            float(d["prior"]),
        )


# ---------------------------------------------------------------------------
# Distances


def cosine_distance(u, v) -> float:
    """Cosine distance ``1 - <u,v> / (|u||v|)`` in [0, 2].

    Exactly 0 for identical vectors; raises on zero-norm input.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise ValueError(f"vectors must be 1-D and the same length, got {u.shape} and {v.shape}")
    duu = float(np.dot(u, u))
    dvv = float(np.dot(v, v))
    if duu == 0.0 or dvv == 0.0:
        raise ValueError("cosine distance undefined for zero-norm input")
    sim = float(np.dot(u, v)) / float(np.sqrt(duu * dvv))
    sim = min(1.0, max(-1.0, sim))
    return 1.0 - sim


def pairwise_distances(emb: EmbeddingSet, rows, cols, metric: Metric = Metric.COSINE) -> np.ndarray:
    """Exact float64 distance block ``len(rows) x len(cols)``.

    Euclidean distances come from direct coordinate differences (no
    norm-expansion cancellation near duplicates); computed in column
    chunks to bound memory.
    """
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    metric = Metric(metric)
    if metric is Metric.COSINE:
        sim = emb.unit[rows] @ emb.unit[cols].T
        return np.clip(1.0 - sim, 0.0, 2.0)
    out = np.empty((rows.size, cols.size))
    a = emb.data[rows]
    step = max(1, 2_000_000 // max(1, rows.size * emb.d))
    for lo in range(0, cols.size, step):
        diff = a[:, None, :] - emb.data[cols[lo : lo + step]][None, :, :]
        out[:, lo : lo + step] = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return out


def paired_distances(emb: EmbeddingSet, idx_a, idx_b, metric: Metric = Metric.COSINE) -> np.ndarray:
    """Exact float64 distances for aligned index pairs (idx_a[k], idx_b[k])."""
    idx_a = np.asarray(idx_a, dtype=np.int64)
    idx_b = np.asarray(idx_b, dtype=np.int64)
    metric = Metric(metric)
    out = np.empty(idx_a.size)
    step = max(1, 8_000_000 // max(1, emb.d))
    for lo in range(0, idx_a.size, step):
        a, b = idx_a[lo : lo + step], idx_b[lo : lo + step]
        if metric is Metric.COSINE:
            sim = np.einsum("ij,ij->i", emb.unit[a], emb.unit[b])
            out[lo : lo + step] = np.clip(1.0 - sim, 0.0, 2.0)
        else:
            diff = emb.data[a] - emb.data[b]
            out[lo : lo + step] = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return out


# ---------------------------------------------------------------------------
# File I/O


def save_embeddings(emb: EmbeddingSet, path) -> None:
    header = json.dumps({"n": emb.n, "d": emb.d}, sort_keys=True) + "\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(emb.data.astype("<f4")).tobytes())


def load_embeddings(path) -> EmbeddingSet:
    path = Path(path)
    with open(path, "rb") as fh:
        header = fh.readline()
        payload = fh.read()
    try:
        meta = json.loads(header.decode("ascii"))
        n, d = int(meta["n"]), int(meta["d"])
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: bad embedding header line: {exc}") from None
    if n <= 0 or d <= 0:
        raise DataError(f"{path}: header requires positive n and d, got n={n}, d={d}")
    expected = n * d * 4
    if len(payload) < expected:
        raise DataError(f"{path}: truncated payload ({len(payload)} bytes, expected {expected})")
    if len(payload) > expected:
        raise DataError(f"{path}: payload length mismatch ({len(payload)} bytes, expected {expected})")
    data = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(n, d)
    try:
        return EmbeddingSet(data)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def _load_int_csv(path, what: str) -> np.ndarray:
    path = Path(path)
    rows = []
    width = None
    with open(path, "r", encoding="ascii") as fh:
        for r, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise DataError(f"{path}: row {r} has {len(cells)} columns, expected {width}")
            try:
                rows.append([int(c) for c in cells])
            except ValueError:
                bad = next(i for i, c in enumerate(cells) if not _is_int(c))
                raise DataError(f"{path}: non-integer {what} entry {cells[bad]!r} at (row {r}, col {bad})") from None
    if not rows:
        raise DataError(f"{path}: no rows")
    return np.asarray(rows, dtype=np.int64)


def _is_int(s: str) -> bool:
    try:
        int(s)
        return True
    except ValueError:
        return False


def load_votes(path) -> VoteMatrix:
    arr = _load_int_csv(path, "vote")
    try:
        return VoteMatrix(arr)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def save_votes(votes: VoteMatrix, path) -> None:
    _save_int_csv(votes.votes, path)


def load_labels(path) -> LabelVector:
    arr = _load_int_csv(path, "label")
    if arr.ndim == 2 and arr.shape[1] != 1:
        raise DataError(f"{path}: label files must have one column, got {arr.shape[1]}")
    try:
        return LabelVector(arr[:, 0])
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def save_labels(labels: LabelVector, path) -> None:
    _save_int_csv(labels.labels[:, None], path)


def _save_int_csv(arr: np.ndarray, path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for row in arr:
            fh.write(",".join(str(int(v)) for v in row))
            fh.write("\n")
