"""Fixed epsilon-coverage trajectory sets and the two label types built on them.

Trajectories are (T, 2) arrays of ego-frame positions (x forward, y left).
Distances between trajectories are the maximum pointwise Euclidean distance.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrajectorySet:
    epsilon: float
    elements: np.ndarray  # (K, T, 2)
    source_hash: str = ""

    def __len__(self) -> int:
        return len(self.elements)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "epsilon": self.epsilon,
            "source_hash": self.source_hash,
            "n_modes": len(self),
            "elements": self.elements.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrajectorySet":
        return cls(float(d["epsilon"]), np.asarray(d["elements"], dtype=np.float64), d.get("source_hash", ""))

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "TrajectorySet":
        return cls.from_dict(json.loads(Path(path).read_text()))


def corpus_digest(corpus) -> str:
    a = np.ascontiguousarray(np.asarray(corpus, dtype=np.float64))
    return hashlib.sha256(a.tobytes()).hexdigest()


def traj_distance(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"trajectory shapes differ: {a.shape} vs {b.shape}")
    return float(np.max(np.linalg.norm(a - b, axis=-1)))


def pairwise_distance(a: np.ndarray, b: np.ndarray, chunk: int = 256) -> np.ndarray:
    """(len(a), len(b)) matrix of max-pointwise distances."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape[1:] != b.shape[1:]:
        raise ValueError(f"trajectory shapes differ: {a.shape[1:]} vs {b.shape[1:]}")
    out = np.empty((len(a), len(b)))
    for i in range(0, len(a), chunk):
        diff = a[i:i + chunk, None] - b[None]
        out[i:i + chunk] = np.sqrt((diff ** 2).sum(-1)).max(-1)
    return out


def build_cover(corpus, epsilon: float) -> TrajectorySet:
    """Greedy set cover: take the trajectory covering most uncovered ones.

    Ties go to the lowest corpus index. Elements are returned in selection
    order.
    """
    corpus = np.asarray(corpus, dtype=np.float64)
    if corpus.ndim != 3 or len(corpus) == 0:
        raise ValueError("corpus must be a non-empty (N, T, 2) array")
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    covers = pairwise_distance(corpus, corpus) <= epsilon
    uncovered = np.ones(len(corpus), dtype=bool)
    gain = covers.sum(axis=1)
    chosen = []
    while uncovered.any():
        j = int(np.argmax(gain))  # argmax returns the first maximum
        chosen.append(j)
        newly = covers[j] & uncovered
        uncovered &= ~newly
        gain = gain - covers[:, newly].sum(axis=1)
    return TrajectorySet(float(epsilon), corpus[chosen].copy(), corpus_digest(corpus))


def tune_epsilon(corpus, min_modes: int, max_modes: int, lo: float = 0.5, hi: float = 32.0,
                 iters: int = 30) -> float:
    """Bisect for an epsilon whose cover size lands in [min_modes, max_modes]."""
    size = lambda e: len(build_cover(corpus, e))
    if size(hi) > max_modes or size(lo) < min_modes:
        raise ValueError("cover size range not reachable within the epsilon bracket")
    for _ in range(iters):
        mid = round(0.5 * (lo + hi), 3)
        n = size(mid)
        if n > max_modes:
            lo = mid
        elif n < min_modes:
            hi = mid
        else:
            return mid
    raise ValueError(f"no epsilon found for {min_modes}..{max_modes} modes")


def closest_mode(gt, trajset: TrajectorySet) -> int:
    if len(trajset) == 0:
        raise ValueError("empty trajectory set")
    d = pairwise_distance(np.asarray(gt)[None], trajset.elements)[0]
    return int(np.argmin(d))


def closest_modes(gts, trajset: TrajectorySet) -> np.ndarray:
    if len(trajset) == 0:
        raise ValueError("empty trajectory set")
    return np.argmin(pairwise_distance(gts, trajset.elements), axis=1)


def ego_to_map(points, position, heading) -> np.ndarray:
    c, s = np.cos(heading), np.sin(heading)
    p = np.asarray(points, dtype=float)
    x, y = p[..., 0], p[..., 1]
    return np.stack([position[0] + c * x - s * y, position[1] + s * x + c * y], axis=-1)


def map_to_ego(points, position, heading) -> np.ndarray:
    c, s = np.cos(heading), np.sin(heading)
    p = np.asarray(points, dtype=float)
    dx, dy = p[..., 0] - position[0], p[..., 1] - position[1]
    return np.stack([c * dx + s * dy, -s * dx + c * dy], axis=-1)


def drivable_labels(trajset: TrajectorySet, mask, pose) -> np.ndarray:
    """1 where every point of the element lies in a drivable cell, else 0."""
    pts = ego_to_map(trajset.elements, pose.position, pose.heading)
    return mask.contains(pts).all(axis=-1).astype(np.int8)
