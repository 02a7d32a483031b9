"""Leakage-safe cross-validation, permutation significance tests, report
emitters, and the accuracy-vs-behavior correlation.

Two Monte Carlo CV schemes mirror the decoding protocols: WITHIN splits one
participant's blocks 70/30 per cycle; CROSS splits whole participants. Every
cycle rescored ReliefF, reselects candidates, and retrains the ensemble on
the train side only. Permutation tests shuffle labels among each
participant's blocks and rerun the identical pipeline.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .dataset import (
    DataError,
    DatasetBundle,
    Label,
    LabeledScan,
    feature_matrix,
    split_block_level,
    split_participant_level,
)
from .ensemble import BoostConfig, Ensemble, TrainReport, predict_all, train_ensemble
from .relieff import CandidateSet, FeatureScores, ReliefFConfig, score_features, select_top

PERM_SEED_STRIDE = 7919  # keeps permutation seeds away from seed+cycle offsets


class Scheme(str, Enum):
    WITHIN = "within"
    CROSS = "cross"


@dataclass(frozen=True)
class PipelineConfig:
    relieff: ReliefFConfig = field(default_factory=ReliefFConfig)
    boost: BoostConfig = field(default_factory=BoostConfig)
    train_fraction: float = 0.7
    cycles: int | None = None  # None -> 100 within, 20 cross
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must be in (0, 1)")
        if self.cycles is not None and self.cycles < 1:
            raise ValueError("cycles must be >= 1")

    def resolved_cycles(self, scheme: Scheme) -> int:
        if self.cycles is not None:
            return self.cycles
        return 100 if scheme == Scheme.WITHIN else 20


@dataclass(frozen=True)
class ConfusionMatrix:
    """2x2 counts indexed (true label, predicted label)."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.shape != (2, 2) or np.any(c < 0):
            raise ValueError("confusion counts must be a nonnegative 2x2 matrix")
        c.flags.writeable = False
        object.__setattr__(self, "counts", c)

    def row_rates(self) -> np.ndarray:
        """Row-normalized rates; rows with no scans are NaN."""
        totals = self.counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(totals > 0, self.counts / totals, np.nan)

    @property
    def accuracy(self) -> float:
        """Mean of the diagonal rates over non-empty rows."""
        rates = np.diag(self.row_rates())
        rates = rates[~np.isnan(rates)]
        if rates.size == 0:
            raise ValueError("confusion matrix has no scans")
        return float(rates.mean())


def confusion_from_predictions(y_true: np.ndarray, y_pred: np.ndarray) -> ConfusionMatrix:
    counts = np.zeros((2, 2), dtype=np.int64)
    for t, p in zip(np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)):
        counts[t, p] += 1
    return ConfusionMatrix(counts=counts)


@dataclass(frozen=True)
class CvReport:
    scheme: Scheme
    participant_id: int | None
    accuracies: np.ndarray  # per cycle
    confusions: tuple[ConfusionMatrix, ...]
    mean_accuracy: float
    std_accuracy: float  # sample std across cycles (0 for a single cycle)


@dataclass(frozen=True)
class PermutationReport:
    observed: float
    null_accuracies: np.ndarray
    n_perm: int
    p_value: float  # (#{null >= observed} + 1) / (n_perm + 1)


@dataclass(frozen=True)
class PipelineFit:
    scores: FeatureScores
    candidates: CandidateSet
    ensemble: Ensemble
    report: TrainReport


def fit_pipeline(train: list[LabeledScan], relieff_cfg: ReliefFConfig,
                 boost_cfg: BoostConfig) -> PipelineFit:
    """Score, select and boost on training scans only. Test data never
    enters this function, which is what makes the CV leakage-safe."""
    scores = score_features(train, relieff_cfg)
    n_top = min(relieff_cfg.top_n, scores.weights.size)
    candidates = select_top(scores, n_top)
    ens, rep = train_ensemble(train, candidates, boost_cfg)
    return PipelineFit(scores=scores, candidates=candidates, ensemble=ens, report=rep)


def evaluate(ensemble: Ensemble, test: list[LabeledScan]) -> ConfusionMatrix:
    if not test:
        raise DataError("empty test set")
    x = feature_matrix(test)
    y_true = np.fromiter((int(s.label) for s in test), dtype=np.int64, count=len(test))
    return confusion_from_predictions(y_true, predict_all(ensemble, x))


def _resolve_threads(n_threads: int) -> int:
    return (os.cpu_count() or 1) if n_threads == 0 else max(1, n_threads)


def _map_ordered(fn, items, n_threads: int) -> list:
    n_threads = _resolve_threads(n_threads)
    if n_threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=n_threads) as ex:
        return list(ex.map(fn, items))


def run_cv(bundle: DatasetBundle, scheme: Scheme, cfg: PipelineConfig,
           participant_id: int | None = None, n_threads: int = 1) -> CvReport:
    """Monte Carlo cross-validation under the given scheme.

    Cycle i uses the derived seed cfg.seed + i for its split and for the
    ReliefF sampling; training touches only the train side of each split.
    """
    scheme = Scheme(scheme)
    if scheme == Scheme.WITHIN and participant_id is None:
        raise ValueError("within-participant CV requires a participant_id")
    cycles = cfg.resolved_cycles(scheme)

    def one_cycle(i: int) -> ConfusionMatrix:
        seed_i = cfg.seed + i
        if scheme == Scheme.WITHIN:
            train, test = split_block_level(bundle, participant_id, cfg.train_fraction, seed_i)
        else:
            train, test = split_participant_level(bundle, cfg.train_fraction, seed_i)
        fit = fit_pipeline(train, replace(cfg.relieff, seed=seed_i), cfg.boost)
        return evaluate(fit.ensemble, test)

    confusions = _map_ordered(one_cycle, list(range(cycles)), n_threads)
    accuracies = np.asarray([c.accuracy for c in confusions])
    std = float(accuracies.std(ddof=1)) if cycles > 1 else 0.0
    return CvReport(
        scheme=scheme,
        participant_id=participant_id if scheme == Scheme.WITHIN else None,
        accuracies=accuracies,
        confusions=tuple(confusions),
        mean_accuracy=float(accuracies.mean()),
        std_accuracy=std,
    )


def permute_block_labels(bundle: DatasetBundle, seed: int) -> DatasetBundle:
    """Shuffle labels among each participant's blocks (whole blocks swap
    labels, preserving that participant's per-label block counts)."""
    rng = np.random.default_rng(seed)
    new_label: dict[tuple[int, int], Label] = {}
    for pid in bundle.participant_ids():
        blocks: dict[int, Label] = {}
        for s in bundle.scans:
            if s.participant_id == pid:
                blocks.setdefault(s.block_id, s.label)
        ids = sorted(blocks)
        labels = [blocks[b] for b in ids]
        shuffled = [labels[i] for i in rng.permutation(len(ids))]
        for b, lab in zip(ids, shuffled):
            new_label[(pid, b)] = lab
    scans = tuple(
        LabeledScan(
            features=s.features,
            label=new_label[(s.participant_id, s.block_id)],
            participant_id=s.participant_id,
            session_id=s.session_id,
            block_id=s.block_id,
            scan_index=s.scan_index,
        )
        for s in bundle.scans
    )
    return DatasetBundle(grid=bundle.grid, mask=bundle.mask, scans=scans,
                         label_names=bundle.label_names)


def permutation_test(bundle: DatasetBundle, scheme: Scheme, n_perm: int,
                     cfg: PipelineConfig, participant_id: int | None = None,
                     n_threads: int = 1) -> PermutationReport:
    """Observed CV accuracy against a block-label-permuted null.

    Permutation j shuffles with seed cfg.seed + PERM_SEED_STRIDE*(j+1) and
    reruns the identical pipeline seeded the same way.
    """
    if n_perm < 1:
        raise ValueError("n_perm must be >= 1")
    scheme = Scheme(scheme)
    observed = run_cv(bundle, scheme, cfg, participant_id=participant_id).mean_accuracy

    def one_perm(j: int) -> float:
        perm_seed = cfg.seed + PERM_SEED_STRIDE * (j + 1)
        permuted = permute_block_labels(bundle, perm_seed)
        rep = run_cv(permuted, scheme, replace(cfg, seed=perm_seed),
                     participant_id=participant_id)
        return rep.mean_accuracy

    nulls = np.asarray(_map_ordered(one_perm, list(range(n_perm)), n_threads))
    p = (int((nulls >= observed).sum()) + 1) / (n_perm + 1)
    return PermutationReport(observed=float(observed), null_accuracies=nulls,
                             n_perm=n_perm, p_value=float(p))


@dataclass(frozen=True)
class CorrelationResult:
    r: float
    pairs: tuple[tuple[float, float], ...]  # retained (x, y) pairs


def correlate_behavior(per_participant_accuracy, behavior_scores,
                       omit: set[int] | None = None) -> CorrelationResult:
    """Pearson correlation between accuracies and behavior scores, with an
    optional caller-supplied set of indices to omit (outliers are never
    dropped automatically)."""
    acc = np.asarray(per_participant_accuracy, dtype=np.float64)
    beh = np.asarray(behavior_scores, dtype=np.float64)
    if acc.shape != beh.shape or acc.ndim != 1:
        raise ValueError("accuracy and behavior vectors must have equal length")
    keep = np.ones(acc.size, dtype=bool)
    for i in omit or ():
        if not 0 <= i < acc.size:
            raise ValueError(f"omit index {i} out of range")
        keep[i] = False
    acc, beh = acc[keep], beh[keep]
    if acc.size < 3:
        raise ValueError("need at least 3 pairs after omission")
    if acc.std() == 0.0 or beh.std() == 0.0:
        raise ValueError("zero variance in one of the vectors")
    r = float(np.corrcoef(acc, beh)[0, 1])
    return CorrelationResult(r=r, pairs=tuple(zip(acc.tolist(), beh.tolist())))


# ---------------------------------------------------------------------------
# Report emitters
# ---------------------------------------------------------------------------


def write_json(obj: dict, path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, separators=(",", ":"))
    return path


def cv_report_to_dict(report: CvReport) -> dict:
    return {
        "scheme": report.scheme.value,
        "participant": report.participant_id,
        "cycles": int(report.accuracies.size),
        "mean_accuracy": report.mean_accuracy,
        "std_accuracy": report.std_accuracy,
        "per_cycle": [
            {"accuracy": float(a), "confusion": c.counts.tolist()}
            for a, c in zip(report.accuracies, report.confusions)
        ],
    }


def permutation_report_to_dict(report: PermutationReport) -> dict:
    return {
        "observed": report.observed,
        "n_perm": report.n_perm,
        "p_value": report.p_value,
        "null_accuracies": [float(v) for v in report.null_accuracies],
    }


def write_table1_tsv(rows, path) -> Path:
    """Per-participant results table: participant, accuracy, permutation p.

    `rows` holds (participant_id, accuracy, p_value-or-None) triples.
    """
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("participant\taccuracy\tp_value\n")
        for pid, acc, p in rows:
            p_txt = "NA" if p is None else f"{p:.3f}"
            fh.write(f"{pid}\t{acc:.3f}\t{p_txt}\n")
    return path


def write_table2_tsv(report: CvReport, path, title: str,
                     label_names: tuple[str, str] = ("NEG", "POS")) -> Path:
    """Row-normalized confusion table with the mean diagonal in the corner
    cell and mean+/-std rates across cycles in the body."""
    rates = np.stack([c.row_rates() for c in report.confusions])  # (cycles, 2, 2)
    mean = np.nanmean(rates, axis=0)
    if rates.shape[0] > 1:
        std = np.nanstd(rates, axis=0, ddof=1)
    else:
        std = np.zeros_like(mean)
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{title} ({report.mean_accuracy:.3f})\t{label_names[0]}\t{label_names[1]}\n")
        for i, name in enumerate(label_names):
            cells = "\t".join(f"{mean[i, j]:.3f}±{std[i, j]:.3f}" for j in range(2))
            fh.write(f"{name}\t{cells}\n")
    return path
