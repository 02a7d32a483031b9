"""Single-voxel decision stumps: the weak learners of the boosted ensemble.

A stump predicts POS when polarity * (value - threshold) > 0 and NEG
otherwise (equality goes to NEG). Training enumerates every candidate cut --
the midpoints of consecutive distinct sorted values plus one sentinel below
the minimum (which yields the two constant classifiers) -- and scores each
by weighted misclassification error or by weighted cross-entropy gain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import Label

SELECT_ERROR = "error"
SELECT_GAIN = "gain"


@dataclass(frozen=True)
class Stump:
    feature_index: int
    threshold: float
    polarity: int  # +1 or -1

    def __post_init__(self):
        if self.polarity not in (1, -1):
            raise ValueError(f"polarity must be +1 or -1, got {self.polarity}")
        if not math.isfinite(self.threshold):
            raise ValueError("threshold must be finite")


@dataclass(frozen=True)
class StumpFit:
    stump: Stump
    weighted_error: float  # against the training sample weights
    gain: float  # cross-entropy impurity decrease of the chosen cut


def predict_stump(stump: Stump, features: np.ndarray) -> Label:
    v = float(features[stump.feature_index])
    return Label.POS if stump.polarity * (v - stump.threshold) > 0 else Label.NEG


def stump_outputs(stump: Stump, values: np.ndarray) -> np.ndarray:
    """Vectorized +/-1 outputs of a stump over raw feature values."""
    return np.where(stump.polarity * (values - stump.threshold) > 0, 1.0, -1.0)


def _entropy2(w_pos: float, w_neg: float) -> float:
    """Weighted binary cross-entropy in bits, with 0*log(0) := 0."""
    total = w_pos + w_neg
    if total <= 0.0:
        return 0.0
    h = 0.0
    for w in (w_pos, w_neg):
        if w > 0.0:
            p = w / total
            h -= p * math.log2(p)
    return h


def split_gain(w: np.ndarray, y: np.ndarray, above: np.ndarray) -> float:
    """Cross-entropy gain of partitioning weighted samples by `above`."""
    w_total = float(w.sum())
    if w_total <= 0.0:
        return 0.0
    pos = y == 1
    parent = _entropy2(float(w[pos].sum()), float(w[~pos].sum()))
    child = 0.0
    for side in (above, ~above):
        ws = w[side]
        side_total = float(ws.sum())
        child += (side_total / w_total) * _entropy2(
            float(w[side & pos].sum()), float(w[side & ~pos].sum())
        )
    return max(0.0, parent - child)


def candidate_thresholds(values: np.ndarray) -> np.ndarray:
    """Sentinel below the minimum, then midpoints of consecutive distinct
    sorted values, ascending."""
    distinct = np.unique(values.astype(np.float64))
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    sentinel = distinct[0] - 1.0
    if sentinel >= distinct[0]:  # |min| so large that -1.0 is absorbed
        sentinel = np.nextafter(distinct[0], -np.inf)
    return np.concatenate(([sentinel], mids))


def train_stump(values, labels, sample_weights, feature_index: int = 0,
                criterion: str = SELECT_ERROR) -> StumpFit:
    """Fit the best cut on one feature under the given sample weights.

    criterion "error" (default) minimizes the weighted misclassification
    error; "gain" maximizes the cross-entropy gain. Ties break toward the
    smaller threshold, then polarity +1. The reported weighted_error is the
    direct sum of misclassified sample weights in input order.
    """
    v = np.asarray(values, dtype=np.float64)
    y = np.asarray([int(Label(l)) for l in labels], dtype=np.int8)
    w = np.asarray(sample_weights, dtype=np.float64)
    if v.ndim != 1 or v.shape != y.shape or v.shape != w.shape:
        raise ValueError("values, labels and sample_weights must be equal-length vectors")
    if v.size < 2:
        raise ValueError("need at least 2 scans to fit a stump")
    if not np.all(np.isfinite(v)):
        raise ValueError("values must be finite")
    if np.any(w < 0) or not math.isclose(float(w.sum()), 1.0, abs_tol=1e-9):
        raise ValueError("sample_weights must be nonnegative and sum to 1")
    if criterion not in (SELECT_ERROR, SELECT_GAIN):
        raise ValueError(f"unknown criterion {criterion!r}")
    pos = y == 1
    if float(w[pos].sum()) <= 0.0 or float(w[~pos].sum()) <= 0.0:
        raise ValueError("both labels must be present with positive total weight")

    best = None  # (threshold, polarity, error, gain)
    for t in candidate_thresholds(v):
        above = v > t
        gain = split_gain(w, y, above)
        err_p1 = float(w[above != pos].sum())
        err_m1 = float(w[(~above) != pos].sum())
        if criterion == SELECT_ERROR:
            for pol, err in ((1, err_p1), (-1, err_m1)):
                if best is None or err < best[2]:
                    best = (float(t), pol, err, gain)
        else:
            if best is None or gain > best[3]:
                pol, err = (1, err_p1) if err_p1 <= err_m1 else (-1, err_m1)
                best = (float(t), pol, err, gain)

    threshold, polarity, err, gain = best
    return StumpFit(
        stump=Stump(feature_index=feature_index, threshold=threshold, polarity=polarity),
        weighted_error=err,
        gain=gain,
    )
