"""Temporal co-occurrence graph, chronological splits and negative sampling."""

from __future__ import annotations

import json
import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .config import SplitSpec
from .corpus import CooccurrenceRecord
from .errors import InfeasibleError, InputError, MissingFileError

logger = logging.getLogger(__name__)

SPLIT_FILES: tuple[str, ...] = ("train", "val", "test", "val_neg", "test_neg")

# Below this many candidate pairs negatives are drawn from the full enumeration.
_ENUMERATE_LIMIT = 2_000_000


def as_edge_array(edges: Iterable[Sequence[int]] | np.ndarray) -> np.ndarray:
    """Canonical (m, 2) int64 array with u < v, rows sorted lexicographically."""

    arr = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
    if arr.size == 0:
        return np.empty((0, 2), dtype=np.int64)
    arr = arr.reshape(-1, 2)[:, :2]
    arr = np.sort(arr, axis=1)
    order = np.lexsort((arr[:, 1], arr[:, 0]))
    return np.ascontiguousarray(arr[order])


def edge_keys(edges: np.ndarray, n: int) -> np.ndarray:
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    lo = np.minimum(edges[:, 0], edges[:, 1])
    hi = np.maximum(edges[:, 0], edges[:, 1])
    return lo * n + hi


def keys_to_edges(keys: np.ndarray, n: int) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64)
    return as_edge_array(np.stack([keys // n, keys % n], axis=1))


def adjacency_matrix(edges: np.ndarray, n: int) -> sp.csr_matrix:
    """Binary symmetric CSR adjacency without self-loops."""

    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    data = np.ones(rows.shape[0], dtype=np.float64)
    adj = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
    adj.sum_duplicates()
    adj.data[:] = 1.0
    adj.sort_indices()
    return adj


@dataclass(frozen=True)
class TemporalGraph:
    """Undirected simple graph over concept ids with first-co-occurrence years."""

    n: int
    edges: np.ndarray
    first_year: np.ndarray
    yearly_counts: dict[int, sp.csr_matrix] = field(default_factory=dict)

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    @cached_property
    def csr(self) -> sp.csr_matrix:
        return adjacency_matrix(self.edges, self.n)

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.diff(self.csr.indptr).astype(np.int64)

    def neighbors(self, node: int) -> np.ndarray:
        adj = self.csr
        return adj.indices[adj.indptr[node] : adj.indptr[node + 1]]

    @cached_property
    def keys(self) -> np.ndarray:
        return np.sort(edge_keys(self.edges, self.n))

    def restrict(self, max_year: int) -> TemporalGraph:
        """View with only the edges and yearly counts up to ``max_year``."""

        keep = self.first_year <= max_year
        return TemporalGraph(
            n=self.n,
            edges=self.edges[keep],
            first_year=self.first_year[keep],
            yearly_counts={year: m for year, m in self.yearly_counts.items() if year <= max_year},
        )

    @classmethod
    def from_edges(cls, edges: Iterable[Sequence[int]] | np.ndarray, n: int, year: int = 0) -> TemporalGraph:
        """Static graph helper: every edge gets the same first year."""

        records = [CooccurrenceRecord(int(u), int(v), year, f"e{i}") for i, (u, v) in enumerate(as_edge_array(edges))]
        return build_graph(records, n)


def build_graph(records: Sequence[CooccurrenceRecord], n: int) -> TemporalGraph:
    if not records:
        return TemporalGraph(n=n, edges=np.empty((0, 2), dtype=np.int64), first_year=np.empty(0, dtype=np.int64))

    u = np.fromiter((r.u for r in records), dtype=np.int64, count=len(records))
    v = np.fromiter((r.v for r in records), dtype=np.int64, count=len(records))
    years = np.fromiter((r.year for r in records), dtype=np.int64, count=len(records))
    if u.min() < 0 or v.max() >= n:
        bad = int(v.max()) if v.max() >= n else int(u.min())
        raise InputError(f"node id {bad} out of range for a graph with {n} nodes")

    keys = u * n + v
    unique_keys, inverse = np.unique(keys, return_inverse=True)
    first = np.full(unique_keys.shape[0], np.iinfo(np.int64).max, dtype=np.int64)
    np.minimum.at(first, inverse, years)

    yearly: dict[int, sp.csr_matrix] = {}
    for year in np.unique(years):
        mask = years == year
        rows = np.concatenate([u[mask], v[mask]])
        cols = np.concatenate([v[mask], u[mask]])
        counts = sp.csr_matrix((np.ones(rows.shape[0]), (rows, cols)), shape=(n, n))
        counts.sum_duplicates()
        yearly[int(year)] = counts

    edges = keys_to_edges(unique_keys, n)
    graph = TemporalGraph(n=n, edges=edges, first_year=first, yearly_counts=yearly)
    logger.info("Built graph with %d nodes and %d edges over %d years", n, graph.num_edges, len(yearly))
    return graph


def chronological_split(g: TemporalGraph, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Assign each edge to train/val/test by its first year; later edges are dropped."""

    fy = g.first_year
    train = g.edges[fy <= spec.train_end]
    val = g.edges[(fy > spec.train_end) & (fy <= spec.val_end)]
    test = g.edges[(fy > spec.val_end) & (fy <= spec.test_end)]
    dropped = int((fy > spec.test_end).sum())
    if dropped:
        logger.info("Dropped %d edges first seen after %d", dropped, spec.test_end)
    return train, val, test


def _as_rng(seed: int | np.random.Generator) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _forbidden_keys(g: TemporalGraph, exclude: Sequence[np.ndarray]) -> np.ndarray:
    parts = [g.keys] + [edge_keys(e, g.n) for e in exclude if len(e)]
    return np.unique(np.concatenate(parts)) if parts else np.empty(0, dtype=np.int64)


def _draw(candidates: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    picked = rng.choice(candidates.shape[0], size=count, replace=False)
    return candidates[np.sort(picked)]


def sample_negatives(
    g: TemporalGraph,
    count: int,
    exclude: Sequence[np.ndarray] = (),
    seed: int | np.random.Generator = 0,
) -> np.ndarray:
    """Uniform draw without replacement over non-edges of every period.

    Pairs in ``exclude`` (e.g. negatives drawn earlier) are never returned.
    """

    n = g.n
    total_pairs = n * (n - 1) // 2
    forbidden = _forbidden_keys(g, exclude)
    available = total_pairs - forbidden.shape[0]
    if count > available:
        raise InfeasibleError(f"requested {count} negatives but only {available} non-edges are available")
    if count <= 0:
        return np.empty((0, 2), dtype=np.int64)

    rng = _as_rng(seed)
    if total_pairs <= _ENUMERATE_LIMIT or count * 4 > available:
        iu, iv = np.triu_indices(n, k=1)
        candidates = iu.astype(np.int64) * n + iv
        candidates = candidates[~np.isin(candidates, forbidden, assume_unique=True)]
        return keys_to_edges(_draw(candidates, count, rng), n)

    chosen: list[np.ndarray] = []
    seen = forbidden
    needed = count
    while needed > 0:
        batch = max(2 * needed, 1024)
        a = rng.integers(0, n, size=batch)
        b = rng.integers(0, n, size=batch)
        ok = a != b
        keys = np.minimum(a[ok], b[ok]) * n + np.maximum(a[ok], b[ok])
        _, first_idx = np.unique(keys, return_index=True)
        keys = keys[np.sort(first_idx)]
        keys = keys[~np.isin(keys, seen)][:needed]
        chosen.append(keys)
        seen = np.union1d(seen, keys)
        needed -= keys.shape[0]
    return keys_to_edges(np.concatenate(chosen), n)


def sample_slice_negatives(
    g: TemporalGraph,
    node_set: Iterable[int],
    count: int,
    exclude: Sequence[np.ndarray] = (),
    seed: int | np.random.Generator = 0,
) -> np.ndarray:
    """Non-edges with at least one endpoint in ``node_set``."""

    nodes = np.array(sorted(set(int(x) for x in node_set)), dtype=np.int64)
    n = g.n
    if count <= 0:
        return np.empty((0, 2), dtype=np.int64)
    others = np.arange(n, dtype=np.int64)
    a = np.repeat(nodes, n)
    b = np.tile(others, nodes.shape[0])
    ok = a != b
    candidates = np.unique(np.minimum(a[ok], b[ok]) * n + np.maximum(a[ok], b[ok]))
    candidates = candidates[~np.isin(candidates, _forbidden_keys(g, exclude))]
    if count > candidates.shape[0]:
        raise InfeasibleError(f"requested {count} slice negatives but only {candidates.shape[0]} are available")
    return keys_to_edges(_draw(candidates, count, _as_rng(seed)), n)


def isolated_nodes(train_pos: np.ndarray, n: int) -> set[int]:
    """Nodes with no training edge."""

    train_pos = np.asarray(train_pos, dtype=np.int64).reshape(-1, 2)
    degree = np.bincount(train_pos.ravel(), minlength=n)
    return set(np.flatnonzero(degree == 0).tolist())


def incident_mask(edges: np.ndarray, node_set: Iterable[int]) -> np.ndarray:
    nodes = np.fromiter(node_set, dtype=np.int64)
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    return np.isin(edges[:, 0], nodes) | np.isin(edges[:, 1], nodes)


@dataclass
class EdgeSplit:
    train_pos: np.ndarray
    val_pos: np.ndarray
    test_pos: np.ndarray
    val_neg: np.ndarray
    test_neg: np.ndarray
    seed: int
    n: int
    spec: SplitSpec | None = None
    isolated: set[int] = field(default_factory=set)
    slice_test_neg: np.ndarray = field(default_factory=lambda: np.empty((0, 2), dtype=np.int64))

    def counts(self) -> dict[str, int]:
        return {
            "train": len(self.train_pos),
            "val": len(self.val_pos),
            "test": len(self.test_pos),
            "val_neg": len(self.val_neg),
            "test_neg": len(self.test_neg),
            "isolated_nodes": len(self.isolated),
            "isolated_test_edges": int(incident_mask(self.test_pos, self.isolated).sum()) if self.isolated else 0,
            "slice_test_neg": len(self.slice_test_neg),
        }


def make_edge_split(g: TemporalGraph, spec: SplitSpec, seed: int) -> EdgeSplit:
    """Chronological positives plus 1:1 val/test negatives and isolated-node slice negatives."""

    train, val, test = chronological_split(g, spec)
    rng = np.random.default_rng(seed)
    val_neg = sample_negatives(g, len(val), exclude=(), seed=rng)
    test_neg = sample_negatives(g, len(test), exclude=(val_neg,), seed=rng)

    isolated = isolated_nodes(train, g.n)
    slice_neg = np.empty((0, 2), dtype=np.int64)
    if isolated and len(test):
        slice_pos_count = int(incident_mask(test, isolated).sum())
        if slice_pos_count:
            slice_neg = sample_slice_negatives(g, isolated, slice_pos_count, exclude=(val_neg, test_neg), seed=rng)

    split = EdgeSplit(
        train_pos=train,
        val_pos=val,
        test_pos=test,
        val_neg=val_neg,
        test_neg=test_neg,
        seed=seed,
        n=g.n,
        spec=spec,
        isolated=isolated,
        slice_test_neg=slice_neg,
    )
    logger.info("Split sizes: %s", split.counts())
    return split


def _write_edges(edges: np.ndarray, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u, v in np.asarray(edges, dtype=np.int64).reshape(-1, 2):
            fh.write(f"{u}\t{v}\n")


def _read_edges(path: Path) -> np.ndarray:
    if not path.exists():
        raise MissingFileError(f"split file not found: {path}", path=str(path))
    rows: list[tuple[int, int]] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split("\t")
            try:
                rows.append((int(parts[0]), int(parts[1])))
            except (IndexError, ValueError) as exc:
                raise InputError(f"malformed edge at line {line_no} of {path}", path=str(path), line=line_no) from exc
    return as_edge_array(rows)


def write_split(split: EdgeSplit, out_dir: Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    arrays = dict(zip(SPLIT_FILES, (split.train_pos, split.val_pos, split.test_pos, split.val_neg, split.test_neg)))
    for name, edges in arrays.items():
        _write_edges(edges, out_dir / f"{name}.tsv")
    _write_edges(split.slice_test_neg, out_dir / "slice_test_neg.tsv")
    meta = {
        "spec": split.spec.model_dump() if split.spec else None,
        "seed": split.seed,
        "n": split.n,
        "counts": split.counts(),
        "isolated": sorted(split.isolated),
        "slice_negatives": "restricted to non-edges incident to isolated nodes, 1:1 with slice positives",
    }
    with open(out_dir / "split_meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out_dir


def read_split(split_dir: Path) -> EdgeSplit:
    split_dir = Path(split_dir)
    meta_path = split_dir / "split_meta.json"
    if not meta_path.exists():
        raise MissingFileError(f"split metadata not found: {meta_path}", path=str(meta_path))
    with open(meta_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    edges = {name: _read_edges(split_dir / f"{name}.tsv") for name in SPLIT_FILES}
    slice_path = split_dir / "slice_test_neg.tsv"
    return EdgeSplit(
        train_pos=edges["train"],
        val_pos=edges["val"],
        test_pos=edges["test"],
        val_neg=edges["val_neg"],
        test_neg=edges["test_neg"],
        seed=int(meta["seed"]),
        n=int(meta["n"]),
        spec=SplitSpec(**meta["spec"]) if meta.get("spec") else None,
        isolated=set(meta.get("isolated", [])),
        slice_test_neg=_read_edges(slice_path) if slice_path.exists() else np.empty((0, 2), dtype=np.int64),
    )
