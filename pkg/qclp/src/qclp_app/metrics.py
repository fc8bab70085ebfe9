"""Rank metrics and multi-seed aggregation."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


@dataclass(frozen=True)
class ScoredEdges:
    """Candidate pairs with model scores and binary labels."""

    edges: np.ndarray
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        scores = np.asarray(self.scores, dtype=np.float64).ravel()
        labels = np.asarray(self.labels).ravel().astype(np.int64)
        if not (edges.shape[0] == scores.shape[0] == labels.shape[0]):
            raise ValueError(f"length mismatch: {edges.shape[0]} edges, {scores.shape[0]} scores, {labels.shape[0]} labels")
        if not np.all(np.isfinite(scores)):
            raise ValueError("scores must be finite")
        if np.any((labels != 0) & (labels != 1)):
            raise ValueError("labels must be 0 or 1")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @classmethod
    def from_sets(cls, pos: np.ndarray, neg: np.ndarray, pos_scores: np.ndarray, neg_scores: np.ndarray) -> ScoredEdges:
        pos = np.asarray(pos, dtype=np.int64).reshape(-1, 2)
        neg = np.asarray(neg, dtype=np.int64).reshape(-1, 2)
        return cls(
            edges=np.concatenate([pos, neg]),
            scores=np.concatenate([np.ravel(pos_scores), np.ravel(neg_scores)]),
            labels=np.concatenate([np.ones(len(pos), dtype=np.int64), np.zeros(len(neg), dtype=np.int64)]),
        )

    def restrict(self, mask: np.ndarray) -> ScoredEdges:
        return ScoredEdges(self.edges[mask], self.scores[mask], self.labels[mask])


def auroc_scores(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney AUROC with midranks for ties."""

    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    m = int(labels.sum())
    n_neg = int(labels.shape[0] - m)
    if m == 0 or n_neg == 0:
        raise ValueError(f"AUROC needs both classes, got {m} positives and {n_neg} negatives")
    ranks = rankdata(scores, method="average")
    return float((ranks[labels].sum() - m * (m + 1) / 2.0) / (m * n_neg))


def auroc(scored: ScoredEdges) -> float:
    return auroc_scores(scored.scores, scored.labels)


def average_precision(scored: ScoredEdges) -> float:
    """Mean precision at each positive, ranking by score then (u, v) ascending."""

    m = int(scored.labels.sum())
    if m == 0:
        raise ValueError("average precision needs at least one positive")
    order = np.lexsort((scored.edges[:, 1], scored.edges[:, 0], -scored.scores))
    ranked = scored.labels[order]
    hits = np.cumsum(ranked)
    positions = np.flatnonzero(ranked) + 1
    return float(np.sum(hits[positions - 1] / positions) / m)


@dataclass(frozen=True)
class Aggregate:
    mean: float
    std: float
    n: int

    @property
    def std_defined(self) -> bool:
        return self.n > 1


def aggregate(values: Sequence[float]) -> Aggregate:
    """Mean and sample (n - 1) standard deviation; a single value reports std 0."""

    if not values:
        raise ValueError("cannot aggregate an empty list")
    arr = np.asarray(values, dtype=np.float64)
    # identical runs report exactly 0, not round-off around an inexact mean
    std = float(arr.std(ddof=1)) if arr.shape[0] > 1 and np.ptp(arr) > 0 else 0.0
    return Aggregate(float(arr.mean()), std, int(arr.shape[0]))


def format_cell(mean: float, std: float) -> str:
    """Percent with two decimals, e.g. ``89.63 ± 0.05``."""

    if math.isnan(mean):
        return "n/a"
    return f"{mean * 100:.2f} ± {std * 100:.2f}"
