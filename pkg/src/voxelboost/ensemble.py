"""Greedy AdaBoost over the ReliefF candidate voxels.

Builds the additive classifier P(x) = sum_i w_i * f_i(x_i) from single-voxel
stumps: each round refits every remaining candidate against the current
sample weights, keeps the stump with the lowest weighted error (ties: higher
cross-entropy gain, then lower feature index), and reweights the samples
toward its mistakes. Each voxel is used at most once; the decision is the
sign of P (zero goes to NEG).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._kernels import best_stumps_round
from .dataset import BrainMask, DataError, Label, feature_matrix, labels01
from .relieff import CandidateSet
from .stump import SELECT_ERROR, SELECT_GAIN, Stump, stump_outputs


@dataclass(frozen=True)
class BoostConfig:
    rounds: int = 260
    epsilon_floor: float = 1e-10
    selection: str = SELECT_ERROR  # per-round stump criterion; see stump module

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if not 0.0 < self.epsilon_floor < 0.5:
            raise ValueError("epsilon_floor must be in (0, 0.5)")
        if self.selection not in (SELECT_ERROR, SELECT_GAIN):
            raise ValueError(f"unknown selection criterion {self.selection!r}")


@dataclass(frozen=True)
class Member:
    stump: Stump
    weight: float


@dataclass(frozen=True)
class Ensemble:
    members: tuple[Member, ...]
    candidate_provenance: CandidateSet | None = None

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        feats = [m.stump.feature_index for m in self.members]
        if len(set(feats)) != len(feats):
            raise ValueError("ensemble members must use distinct feature indices")
        if not all(math.isfinite(m.weight) for m in self.members):
            raise ValueError("member weights must be finite")


@dataclass(frozen=True)
class TrainReport:
    feature_indices: np.ndarray  # chosen voxel per round
    weighted_errors: np.ndarray  # clamped epsilon_t
    member_weights: np.ndarray  # w_t = 0.5*ln((1-eps)/eps)
    gains: np.ndarray  # cross-entropy gain of the chosen stump
    exp_losses: np.ndarray  # sum over scans of exp(-y * P_t(x))
    train_accuracies: np.ndarray


def member_weight_from_error(eps: float) -> float:
    """AdaBoost member weight 0.5 * ln((1 - eps) / eps)."""
    return 0.5 * math.log((1.0 - eps) / eps)


def train_ensemble(train, candidates: CandidateSet, cfg: BoostConfig = BoostConfig()
                   ) -> tuple[Ensemble, TrainReport]:
    """Discrete AdaBoost over the candidate voxels.

    Stops after cfg.rounds rounds or when the candidates are exhausted.
    Deterministic: no randomness, and candidate evaluation order cannot
    affect the outcome (ties resolve by gain then feature index).
    """
    if len(candidates) == 0:
        raise ValueError("candidate set is empty")
    y01 = labels01(train)
    if len(set(y01.tolist())) < 2:
        raise DataError("training set must contain both labels")

    x = feature_matrix(train)
    cand_idx = candidates.indices
    xc = np.ascontiguousarray(x[:, cand_idx].T)  # (C, n)
    n_cand, n = xc.shape

    sort_idx = np.argsort(xc, axis=1, kind="stable").astype(np.int32)
    vals_sorted = np.take_along_axis(xc, sort_idx, axis=1)
    y_sorted = np.ascontiguousarray(y01[sort_idx])
    cut_ok = np.zeros((n_cand, n), dtype=np.bool_)
    cut_ok[:, :-1] = vals_sorted[:, :-1] < vals_sorted[:, 1:]

    w = np.full(n, 1.0 / n, dtype=np.float64)
    ypm = y01.astype(np.float64) * 2.0 - 1.0
    active = np.ones(n_cand, dtype=np.bool_)
    use_gain = cfg.selection == SELECT_GAIN

    out_err = np.empty(n_cand, dtype=np.float64)
    out_gain = np.empty(n_cand, dtype=np.float64)
    out_cut = np.empty(n_cand, dtype=np.int32)
    out_pol = np.empty(n_cand, dtype=np.int8)

    members: list[Member] = []
    rep_feat, rep_err, rep_w, rep_gain, rep_loss, rep_acc = [], [], [], [], [], []
    score = np.zeros(n, dtype=np.float64)
    cand_feat = cand_idx.astype(np.float64)

    for _ in range(min(cfg.rounds, n_cand)):
        w_pos = float(w[y01 == 1].sum())
        w_neg = float(w[y01 == 0].sum())
        best_stumps_round(sort_idx, y_sorted, cut_ok, w, active, w_pos, w_neg,
                          use_gain, out_err, out_gain, out_cut, out_pol)
        if use_gain:
            # max gain, ties by lower error then lower feature index
            order = np.lexsort((cand_feat, out_err, -out_gain))
        else:
            # min error, ties by higher gain then lower feature index
            order = np.lexsort((cand_feat, -out_gain, out_err))
        c = int(order[0])

        cut = int(out_cut[c])
        if cut < 0:
            threshold = float(vals_sorted[c, 0]) - 1.0
            if threshold >= float(vals_sorted[c, 0]):
                threshold = float(np.nextafter(vals_sorted[c, 0], -np.inf))
        else:
            threshold = (float(vals_sorted[c, cut]) + float(vals_sorted[c, cut + 1])) / 2.0
        stump = Stump(feature_index=int(cand_idx[c]), threshold=threshold,
                      polarity=int(out_pol[c]))

        eps = min(max(float(out_err[c]), cfg.epsilon_floor), 1.0 - cfg.epsilon_floor)
        alpha = member_weight_from_error(eps)
        outputs = stump_outputs(stump, xc[c].astype(np.float64))

        w = w * np.exp(-alpha * ypm * outputs)
        w /= w.sum()
        active[c] = False
        score += alpha * outputs
        members.append(Member(stump=stump, weight=alpha))

        rep_feat.append(stump.feature_index)
        rep_err.append(eps)
        rep_w.append(alpha)
        rep_gain.append(float(out_gain[c]))
        rep_loss.append(float(np.exp(-ypm * score).sum()))
        rep_acc.append(float(((score > 0) == (ypm > 0)).mean()))

    report = TrainReport(
        feature_indices=np.asarray(rep_feat, dtype=np.int64),
        weighted_errors=np.asarray(rep_err),
        member_weights=np.asarray(rep_w),
        gains=np.asarray(rep_gain),
        exp_losses=np.asarray(rep_loss),
        train_accuracies=np.asarray(rep_acc),
    )
    return Ensemble(members=tuple(members), candidate_provenance=candidates), report


def decision_value(ensemble: Ensemble, features: np.ndarray) -> float:
    """P(x) = sum of weight * (+/-1) stump outputs, summed in member order."""
    total = 0.0
    for m in ensemble.members:
        v = float(features[m.stump.feature_index])
        out = 1.0 if m.stump.polarity * (v - m.stump.threshold) > 0 else -1.0
        total += m.weight * out
    return total


def decision_values(ensemble: Ensemble, x: np.ndarray) -> np.ndarray:
    """Vectorized decision values for an (n_scans, P) matrix."""
    total = np.zeros(x.shape[0], dtype=np.float64)
    for m in ensemble.members:
        total += m.weight * stump_outputs(m.stump, x[:, m.stump.feature_index].astype(np.float64))
    return total


def predict(ensemble: Ensemble, features: np.ndarray) -> Label:
    """POS iff the decision value is strictly positive (zero goes to NEG)."""
    return Label.POS if decision_value(ensemble, features) > 0 else Label.NEG


def predict_all(ensemble: Ensemble, x: np.ndarray) -> np.ndarray:
    return (decision_values(ensemble, x) > 0).astype(np.int8)


# ---------------------------------------------------------------------------
# Model file: member array in round order plus the mask fingerprint, so a
# model refuses scans from a differently-shaped dataset at load time.
# ---------------------------------------------------------------------------


def save_model(ensemble: Ensemble, mask: BrainMask, path) -> Path:
    payload = {
        "members": [
            {
                "feature_index": m.stump.feature_index,
                "threshold": m.stump.threshold,
                "polarity": m.stump.polarity,
                "weight": m.weight,
            }
            for m in ensemble.members
        ],
        "fingerprint": mask.fingerprint(),
    }
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
    return path


def load_model(path, mask: BrainMask) -> Ensemble:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    fp = payload.get("fingerprint", {})
    if fp != mask.fingerprint():
        raise DataError(
            f"model fingerprint {fp} does not match the dataset mask {mask.fingerprint()}"
        )
    members = tuple(
        Member(
            stump=Stump(
                feature_index=int(m["feature_index"]),
                threshold=float(m["threshold"]),
                polarity=int(m["polarity"]),
            ),
            weight=float(m["weight"]),
        )
        for m in payload["members"]
    )
    return Ensemble(members=members, candidate_provenance=None)
