"""ReliefF feature relevance scoring.

Scores every feature by the sampled K-nearest-neighbor update: for each
sampled instance, the K nearest same-class neighbors (hits) pull its
features' weights down by their normalized differences, and the K nearest
opposite-class neighbors (misses) push them up:

    W[i] <- W[i] - sum_k diff_i(x, hit_k) / (n*K) + sum_k diff_i(x, miss_k) / (n*K)

diff_i is the absolute per-feature difference divided by that feature's
(max - min) over the training set; neighbor search uses the total Manhattan
distance of these normalized diffs over all features. Sampling all instances
(sample_fraction = 1) makes the result independent of the seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .dataset import DataError, Label, feature_matrix, labels01, _round_half_up


@dataclass(frozen=True)
class ReliefFConfig:
    k_neighbors: int = 3
    sample_fraction: float = 0.10
    seed: int = 0
    top_n: int = 2500

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")
        if not 0.0 < self.sample_fraction <= 1.0:
            raise ValueError("sample_fraction must be in (0, 1]")
        if self.top_n < 1:
            raise ValueError("top_n must be >= 1")


@dataclass(frozen=True)
class NeighborSets:
    """Nearest hit/miss scan indices for one sampled instance."""

    instance: int
    hits: np.ndarray  # K same-class scan indices, nearest first
    misses: np.ndarray  # K opposite-class scan indices, nearest first


@dataclass(frozen=True)
class FeatureScores:
    weights: np.ndarray  # float64, length P
    n_sampled: int
    ranking: np.ndarray  # feature indices, weight descending / index ascending

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)
        r = np.asarray(self.ranking, dtype=np.int64)
        r.flags.writeable = False
        object.__setattr__(self, "ranking", r)


@dataclass(frozen=True)
class CandidateSet:
    """Top-ranked feature indices with their weights, best first."""

    indices: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        i = np.asarray(self.indices, dtype=np.int64)
        w = np.asarray(self.weights, dtype=np.float64)
        i.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "indices", i)
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return int(self.indices.size)


def normalized_features(x: np.ndarray) -> np.ndarray:
    """Divide each feature by its (max - min) over the rows; zero-range
    features are zeroed so they contribute nothing to diffs or distances."""
    x = np.asarray(x, dtype=np.float64)
    rng = x.max(axis=0) - x.min(axis=0)
    out = np.zeros_like(x)
    nz = rng > 0
    out[:, nz] = x[:, nz] / rng[nz]
    return out


def neighbor_sets(xn: np.ndarray, labels: np.ndarray, instance: int, k: int,
                  dist_row: np.ndarray | None = None) -> NeighborSets:
    """K nearest hits and misses of one instance by total Manhattan distance
    on normalized features. Ties break by ascending scan index; the instance
    itself is excluded."""
    if dist_row is None:
        dist_row = np.abs(xn - xn[instance]).sum(axis=1)
    d = dist_row.copy()
    d[instance] = np.inf
    order = np.argsort(d, kind="stable")
    same = labels[order] == labels[instance]
    hits = order[same][:k]
    misses = order[~same][:k]
    return NeighborSets(instance=instance, hits=hits, misses=misses)


def score_features(train, cfg: ReliefFConfig) -> FeatureScores:
    """Compute ReliefF relevance weights over a list of training scans.

    n_sampled = max(1, round(sample_fraction * n_train)) instances are drawn
    uniformly without replacement; contributions are accumulated in ascending
    instance order, so the result does not depend on evaluation order and is
    bitwise identical across seeds when sample_fraction = 1.
    """
    if len(train) == 0:
        raise DataError("empty training set")
    y = labels01(train)
    counts = {lab: int((y == int(lab)).sum()) for lab in Label}
    k = cfg.k_neighbors
    for lab, c in counts.items():
        if c <= k:
            raise DataError(
                f"class {lab.name} has {c} scans; ReliefF with K={k} needs more than K per class"
            )

    x = feature_matrix(train)
    n = x.shape[0]
    xn = normalized_features(x)

    n_sampled = max(1, _round_half_up(cfg.sample_fraction * n))
    rng = np.random.default_rng(cfg.seed)
    sampled = np.sort(rng.choice(n, size=n_sampled, replace=False))

    dists = cdist(xn[sampled], xn, metric="cityblock")
    weights = np.zeros(x.shape[1], dtype=np.float64)
    denom = float(n_sampled * k)
    for row, inst in enumerate(sampled):
        ns = neighbor_sets(xn, y, int(inst), k, dist_row=dists[row])
        weights -= np.abs(xn[ns.hits] - xn[inst]).sum(axis=0) / denom
        weights += np.abs(xn[ns.misses] - xn[inst]).sum(axis=0) / denom

    ranking = np.argsort(-weights, kind="stable")
    return FeatureScores(weights=weights, n_sampled=n_sampled, ranking=ranking)


def select_top(scores: FeatureScores, n: int) -> CandidateSet:
    """First n entries of the ranking (ties resolved by ascending index)."""
    p = scores.weights.size
    if not 1 <= n <= p:
        raise ValueError(f"top-N must be in [1, {p}], got {n}")
    idx = scores.ranking[:n]
    return CandidateSet(indices=idx, weights=scores.weights[idx])


def export_scores_tsv(scores: FeatureScores, path) -> None:
    """Write `feature_index<TAB>weight` rows in ranking order."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("feature_index\tweight\n")
        for i in scores.ranking:
            fh.write(f"{int(i)}\t{scores.weights[i]!r}\n")
