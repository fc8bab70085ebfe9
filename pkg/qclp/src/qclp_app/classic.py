"""Connectivity-based node embeddings: DeepWalk, node2vec and LINE."""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import kernels
from .config import SkipGramConfig, WalkConfig
from .embedding import EmbeddingMatrix
from .graph import TemporalGraph
from .seeding import derive_seed

logger = logging.getLogger(__name__)

NOISE_EXPONENT = 0.75

EpochCallback = Callable[[int, np.ndarray, np.ndarray], None]


def init_vectors(n: int, dim: int, seed: int) -> np.ndarray:
    """Small seeded uniform noise; nodes that never train keep exactly this."""

    rng = np.random.default_rng(seed)
    return rng.uniform(-0.5 / dim, 0.5 / dim, size=(n, dim))


def _walk_rng(seed: int, node: int, walk_index: int) -> np.random.Generator:
    return np.random.default_rng([seed, node, walk_index])


def transition_probs(g: TemporalGraph, prev: int, cur: int, p: float, q: float) -> tuple[np.ndarray, np.ndarray]:
    """Normalised second-order transition probabilities out of ``cur`` having come from ``prev``."""

    nbrs = g.neighbors(cur)
    prev_nbrs = g.neighbors(prev)
    weights = np.full(nbrs.shape[0], 1.0 / q)
    pos = np.searchsorted(prev_nbrs, nbrs)
    adjacent = (pos < prev_nbrs.shape[0]) & (prev_nbrs[np.minimum(pos, prev_nbrs.shape[0] - 1)] == nbrs)
    weights[adjacent] = 1.0
    weights[nbrs == prev] = 1.0 / p
    return nbrs, weights / weights.sum()


def _uniform_walk(g: TemporalGraph, start: int, length: int, rng: np.random.Generator) -> list[int]:
    walk = [start]
    if g.degrees[start] == 0:
        return walk
    cur = start
    while len(walk) < length:
        nbrs = g.neighbors(cur)
        cur = int(nbrs[rng.integers(nbrs.shape[0])])
        walk.append(cur)
    return walk


def _biased_walk(g: TemporalGraph, start: int, cfg: WalkConfig, rng: np.random.Generator) -> list[int]:
    walk = [start]
    if g.degrees[start] == 0:
        return walk
    nbrs = g.neighbors(start)
    walk.append(int(nbrs[rng.integers(nbrs.shape[0])]))
    while len(walk) < cfg.walk_len:
        nbrs, probs = transition_probs(g, walk[-2], walk[-1], cfg.p, cfg.q)
        idx = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
        walk.append(int(nbrs[min(idx, nbrs.shape[0] - 1)]))
    return walk


def _generate(g: TemporalGraph, cfg: WalkConfig, step: Callable[[int, np.random.Generator], list[int]], workers: int) -> list[list[int]]:
    def walks_from(node: int) -> list[list[int]]:
        return [step(node, _walk_rng(cfg.seed, node, w)) for w in range(cfg.num_walks)]

    nodes = range(g.n)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_node = list(pool.map(walks_from, nodes))
    else:
        per_node = [walks_from(node) for node in nodes]
    # walk-index major order, nodes ascending within each round
    walks = [per_node[node][w] for w in range(cfg.num_walks) for node in nodes]
    logger.debug("Generated %d walks over %d nodes", len(walks), g.n)
    return walks


def random_walks(g: TemporalGraph, cfg: WalkConfig, *, workers: int = 1) -> list[list[int]]:
    """Uniform first-order walks; each walk has its own seed so scheduling never matters."""

    return _generate(g, cfg, lambda node, rng: _uniform_walk(g, node, cfg.walk_len, rng), workers)


def biased_walks(g: TemporalGraph, cfg: WalkConfig, *, workers: int = 1) -> list[list[int]]:
    """Second-order node2vec walks with return parameter p and in-out parameter q."""

    return _generate(g, cfg, lambda node, rng: _biased_walk(g, node, cfg, rng), workers)


def walks_to_array(walks: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(w) for w in walks], dtype=np.int64)
    width = int(lengths.max()) if lengths.size else 0
    arr = np.full((len(walks), width), -1, dtype=np.int64)
    for row, walk in enumerate(walks):
        arr[row, : len(walk)] = walk
    return arr, lengths


def noise_probs(weights: np.ndarray) -> np.ndarray:
    powered = np.power(np.asarray(weights, dtype=np.float64), NOISE_EXPONENT)
    total = powered.sum()
    if total <= 0:
        return np.full(powered.shape[0], 1.0 / max(powered.shape[0], 1))
    return powered / total


def _pair_count(lengths: np.ndarray, window: int) -> int:
    total = 0
    for length in lengths:
        for i in range(int(length)):
            total += min(int(length), i + window + 1) - max(0, i - window) - 1
    return total


def skipgram_pairs(walks: Sequence[Sequence[int]], window: int) -> np.ndarray:
    pairs: list[tuple[int, int]] = []
    for walk in walks:
        for i, c in enumerate(walk):
            for j in range(max(0, i - window), min(len(walk), i + window + 1)):
                if j != i:
                    pairs.append((c, walk[j]))
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def _log_sigmoid(x: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -x)


def skipgram_objective(
    center: np.ndarray,
    context: np.ndarray,
    pairs: np.ndarray,
    neg_k: int,
    noise: np.ndarray,
) -> float:
    """Mean negative-sampling objective with the noise term taken in expectation."""

    if pairs.shape[0] == 0:
        return 0.0
    u = center[pairs[:, 0]]
    positive = _log_sigmoid(np.einsum("ij,ij->i", u, context[pairs[:, 1]]))
    negative = _log_sigmoid(-(u @ context.T)) @ noise
    return float(np.mean(positive + neg_k * negative))


def train_skipgram(
    walks: Sequence[Sequence[int]],
    cfg: SkipGramConfig,
    *,
    n: int | None = None,
    degrees: np.ndarray | None = None,
    source: str = "deepwalk",
    on_epoch: EpochCallback | None = None,
) -> EmbeddingMatrix:
    """Skip-gram with negative sampling over node sequences; returns the center vectors.

    The noise distribution is proportional to ``degrees ** 0.75``; without
    degrees, node frequency in the walks is used instead.
    """

    if not walks:
        raise ValueError("cannot train skip-gram on an empty walk list")
    if cfg.dim <= 0:
        raise ValueError(f"embedding dimension must be positive, got {cfg.dim}")

    arr, lengths = walks_to_array(walks)
    n = n if n is not None else int(arr.max()) + 1
    if degrees is None:
        degrees = np.bincount(arr[arr >= 0], minlength=n)
    noise = noise_probs(degrees)
    noise_cdf = np.cumsum(noise)

    center = init_vectors(n, cfg.dim, cfg.seed)
    context = np.zeros((n, cfg.dim))
    steps_per_epoch = int(lengths.sum())
    total_steps = max(1, steps_per_epoch * cfg.epochs)
    has_pairs = _pair_count(lengths, cfg.window) > 0

    step = 0
    for epoch in range(cfg.epochs):
        if has_pairs:
            step = kernels.sgns_epoch(
                arr, lengths, center, context, noise_cdf,
                cfg.window, cfg.neg_k, cfg.lr, step, total_steps,
                derive_seed(cfg.seed, "skipgram", epoch),
            )
        if on_epoch is not None:
            on_epoch(epoch, center, context)
    logger.info("Trained skip-gram: %d nodes, dim %d, %d epochs", n, cfg.dim, cfg.epochs)
    return EmbeddingMatrix(center, source)


def train_line(
    g: TemporalGraph,
    dim: int = 768,
    neg_k: int = 5,
    epochs: int = 5,
    lr: float = 0.025,
    seed: int = 0,
) -> EmbeddingMatrix:
    """LINE: first-order half concatenated with second-order half, dim/2 each."""

    if dim <= 0 or dim % 2:
        raise ValueError(f"LINE dimension must be a positive even number, got {dim}")
    half = dim // 2
    first = init_vectors(g.n, half, derive_seed(seed, "line", "first"))
    second = init_vectors(g.n, half, derive_seed(seed, "line", "second"))
    second_ctx = np.zeros((g.n, half))

    directed = np.concatenate([g.edges, g.edges[:, ::-1]]).astype(np.int64) if g.num_edges else np.empty((0, 2), dtype=np.int64)
    noise_cdf = np.cumsum(noise_probs(g.degrees))
    total_steps = max(1, directed.shape[0] * epochs)

    step_first = step_second = 0
    if directed.shape[0]:
        for epoch in range(epochs):
            step_first = kernels.line_epoch(
                directed, first, first, noise_cdf, neg_k, lr, step_first, total_steps,
                derive_seed(seed, "line", "first", epoch),
            )
            step_second = kernels.line_epoch(
                directed, second, second_ctx, noise_cdf, neg_k, lr, step_second, total_steps,
                derive_seed(seed, "line", "second", epoch),
            )
    logger.info("Trained LINE: %d nodes, %d edges, dim %d", g.n, g.num_edges, dim)
    return EmbeddingMatrix(np.hstack([first, second]), "line")


def deepwalk(g: TemporalGraph, walk_cfg: WalkConfig, sg_cfg: SkipGramConfig, *, workers: int = 1) -> EmbeddingMatrix:
    walks = random_walks(g, walk_cfg, workers=workers)
    return train_skipgram(walks, sg_cfg, n=g.n, degrees=g.degrees, source="deepwalk")


def node2vec(g: TemporalGraph, walk_cfg: WalkConfig, sg_cfg: SkipGramConfig, *, workers: int = 1) -> EmbeddingMatrix:
    walks = biased_walks(g, walk_cfg, workers=workers)
    return train_skipgram(walks, sg_cfg, n=g.n, degrees=g.degrees, source="node2vec")
