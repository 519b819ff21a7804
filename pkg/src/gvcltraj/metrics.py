"""Evaluation metrics over per-scene probability vectors.

All mode orderings sort by descending probability with ties broken by the
lower mode index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .trajset import TrajectorySet, drivable_labels, pairwise_distance

NLL_FLOOR = 1e-12

METRIC_NAMES = ("ACC", "NLL", "ECE", "RNK", "ADE_1", "ADE_5", "ADE_10", "ADE_15", "FDE_1", "HitRate_5_2", "DAC")
# direction of "better" for bold-best marking in reports
HIGHER_IS_BETTER = {"ACC": True, "HitRate_5_2": True, "DAC": True}


@dataclass
class PredictionRecord:
    probs: np.ndarray
    gt: np.ndarray
    mask: object
    pose: object
    best_mode: int
    _drivable: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if np.any(self.probs < 0) or abs(self.probs.sum() - 1.0) > 1e-6:
            raise ValueError("probabilities must be non-negative and sum to 1")

    def order(self) -> np.ndarray:
        # stable sort on -p keeps lower indices first among ties
        return np.argsort(-self.probs, kind="stable")

    def drivable(self, trajset: TrajectorySet) -> np.ndarray:
        if self._drivable is None:
            self._drivable = drivable_labels(trajset, self.mask, self.pose)
        return self._drivable


def _require(records):
    if len(records) == 0:
        raise ValueError("metrics need at least one record")


def _check_k(k, trajset):
    if not 1 <= k <= len(trajset):
        raise ValueError(f"k={k} outside 1..{len(trajset)}")


def ade_k(record: PredictionRecord, trajset: TrajectorySet, k: int) -> float:
    _check_k(k, trajset)
    top = trajset.elements[record.order()[:k]]
    err = np.linalg.norm(top - record.gt[None], axis=-1).mean(axis=-1)
    return float(err.min())


def fde_1(record: PredictionRecord, trajset: TrajectorySet) -> float:
    top = trajset.elements[record.order()[0]]
    return float(np.linalg.norm(top[-1] - record.gt[-1]))


def acc(records) -> float:
    _require(records)
    return float(np.mean([r.order()[0] == r.best_mode for r in records]))


def rank(records) -> float:
    _require(records)
    return float(np.mean([int(np.flatnonzero(r.order() == r.best_mode)[0]) + 1 for r in records]))


def nll(records) -> float:
    _require(records)
    p = np.array([r.probs[r.best_mode] for r in records])
    return float(np.mean(-np.log(np.maximum(p, NLL_FLOOR))))


def n_clamped(records) -> int:
    return int(sum(r.probs[r.best_mode] < NLL_FLOOR for r in records))


def ece(records, n_bins: int = 10) -> float:
    """Equal-width confidence bins on the top-1 probability; last bin closed."""
    _require(records)
    conf = np.array([r.probs.max() for r in records])
    correct = np.array([r.order()[0] == r.best_mode for r in records], dtype=float)
    return calibration_error(conf, correct, n_bins)


def calibration_error(conf, correct, n_bins: int = 10) -> float:
    conf, correct = np.asarray(conf, dtype=float), np.asarray(correct, dtype=float)
    # bins [b/n, (b+1)/n); the last one also takes conf == 1
    edges = np.arange(n_bins + 1) / n_bins
    bins = np.minimum(np.searchsorted(edges, conf, side="right") - 1, n_bins - 1)
    total = 0.0
    for b in range(n_bins):
        sel = bins == b
        if sel.any():
            total += sel.sum() / len(conf) * abs(correct[sel].mean() - conf[sel].mean())
    return float(total)


def dac(records, trajset: TrajectorySet, top_k: int = 5) -> float:
    _require(records)
    _check_k(top_k, trajset)
    return float(np.mean([r.drivable(trajset)[r.order()[:top_k]].mean() for r in records]))


def hit_rate(records, trajset: TrajectorySet, k: int = 5, d: float = 2.0) -> float:
    _require(records)
    _check_k(k, trajset)
    hits = []
    for r in records:
        top = trajset.elements[r.order()[:k]]
        hits.append(pairwise_distance(r.gt[None], top)[0].min() <= d)
    return float(np.mean(hits))


def evaluate(records, trajset: TrajectorySet) -> dict[str, float]:
    """All eleven metrics; ADE_k with k above the set size uses every mode."""
    _require(records)
    kk = lambda k: min(k, len(trajset))
    out = {
        "ACC": acc(records),
        "NLL": nll(records),
        "ECE": ece(records),
        "RNK": rank(records),
    }
    for k in (1, 5, 10, 15):
        out[f"ADE_{k}"] = float(np.mean([ade_k(r, trajset, kk(k)) for r in records]))
    out["FDE_1"] = float(np.mean([fde_1(r, trajset) for r in records]))
    out["HitRate_5_2"] = hit_rate(records, trajset, kk(5), 2.0)
    out["DAC"] = dac(records, trajset, kk(5))
    return out


def aggregate(per_seed: list[dict[str, float]]) -> tuple[dict[str, float], dict[str, float]]:
    """Mean and sample standard deviation (ddof=1; 0 for a single seed)."""
    mean, std = {}, {}
    for name in per_seed[0]:
        v = np.array([m[name] for m in per_seed], dtype=float)
        mean[name] = float(v.mean())
        std[name] = float(v.std(ddof=1)) if len(v) > 1 else 0.0
    return mean, std
