"""Time-decayed PPMI node embeddings.

Yearly co-occurrence counts are converted to PPMI, weighted by
``exp(-lambda * (ref_year - year))``, summed, and compressed with a truncated
SVD. The result is only meant to be concatenated onto another feature matrix.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import svds

from .config import TimeDecayConfig
from .embedding import EmbeddingMatrix
from .graph import TemporalGraph

logger = logging.getLogger(__name__)

# Dense SVD is exact and cheap below this size; above it ARPACK is used.
_DENSE_SVD_LIMIT = 4000


@dataclass(frozen=True)
class PpmiMatrix:
    matrix: sp.csr_matrix
    year: int


def yearly_cooccurrence(g: TemporalGraph, years: Iterable[int]) -> list[tuple[int, sp.csr_matrix]]:
    """One symmetric count matrix per requested year; years without documents are all-zero."""

    out: list[tuple[int, sp.csr_matrix]] = []
    for year in years:
        counts = g.yearly_counts.get(int(year))
        if counts is None:
            counts = sp.csr_matrix((g.n, g.n), dtype=np.float64)
        out.append((int(year), counts.tocsr().astype(np.float64)))
    return out


def ppmi(counts: sp.spmatrix | np.ndarray, year: int = 0, *, alpha: float | None = None) -> PpmiMatrix:
    """Positive PMI of a symmetric count matrix; zero counts stay zero.

    With ``alpha`` set, the context marginal is smoothed as
    ``P(j) ∝ (Σ_i counts[i, j]) ** alpha``.
    """

    counts = sp.csr_matrix(counts, dtype=np.float64)
    counts.eliminate_zeros()
    total = counts.sum()
    if total <= 0:
        return PpmiMatrix(sp.csr_matrix(counts.shape, dtype=np.float64), year)

    row_p = np.asarray(counts.sum(axis=1)).ravel() / total
    col_sums = np.asarray(counts.sum(axis=0)).ravel()
    if alpha is None:
        col_p = col_sums / total
    else:
        smoothed = np.power(col_sums, alpha)
        col_p = smoothed / smoothed.sum()

    coo = counts.tocoo()
    joint = coo.data / total
    pmi = np.log(joint / (row_p[coo.row] * col_p[coo.col]))
    keep = (pmi > 0) & (coo.row != coo.col)
    out = sp.csr_matrix((pmi[keep], (coo.row[keep], coo.col[keep])), shape=counts.shape)
    return PpmiMatrix(out, year)


def decay_weight(lam: float, elapsed: float) -> float:
    return float(np.exp(-lam * elapsed))


def decay_aggregate(ppmis: Sequence[PpmiMatrix], cfg: TimeDecayConfig) -> sp.csr_matrix:
    """Element-wise weighted sum of PPMI matrices by elapsed years to the reference year."""

    if not ppmis:
        raise ValueError("no PPMI matrices to aggregate")
    shape = ppmis[0].matrix.shape
    total = sp.csr_matrix(shape, dtype=np.float64)
    for item in ppmis:
        if item.matrix.shape != shape:
            raise ValueError(f"PPMI matrix for {item.year} has shape {item.matrix.shape}, expected {shape}")
        if item.year > cfg.ref_year:
            raise ValueError(f"PPMI matrix for {item.year} is after the reference year {cfg.ref_year}")
        total = total + decay_weight(cfg.lam, cfg.ref_year - item.year) * item.matrix
    return total.tocsr()


def _fix_signs(u: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive."""

    if u.size == 0:
        return u
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs


def truncated_svd(
    m: sp.spmatrix | np.ndarray,
    d_td: int,
    *,
    sv_exponent: float = 0.5,
    source: str = "timedecay",
) -> EmbeddingMatrix:
    """Top ``d_td`` left singular vectors scaled by singular values ** ``sv_exponent``.

    The default exponent 0.5 gives ``E @ E.T ≈ M`` for symmetric PSD ``M``.
    """

    n = m.shape[0]
    if d_td > n:
        raise ValueError(f"cannot keep {d_td} singular triples of a {n}x{n} matrix")
    if d_td < 1:
        raise ValueError(f"d_td must be at least 1, got {d_td}")

    if n <= _DENSE_SVD_LIMIT or d_td >= n - 1:
        dense = m.toarray() if sp.issparse(m) else np.asarray(m, dtype=np.float64)
        u, s, _ = np.linalg.svd(dense, full_matrices=False)
        u, s = u[:, :d_td], s[:d_td]
    else:
        v0 = np.full(n, 1.0 / np.sqrt(n))
        u, s, _ = svds(sp.csr_matrix(m, dtype=np.float64), k=d_td, v0=v0)
        order = np.argsort(s)[::-1]
        u, s = u[:, order], s[order]

    u = _fix_signs(u)
    return EmbeddingMatrix(u * np.power(s, sv_exponent), source)


def time_decay_embedding(g: TemporalGraph, cfg: TimeDecayConfig) -> tuple[EmbeddingMatrix, sp.csr_matrix]:
    """Full pipeline; returns the embedding and the aggregated matrix."""

    start, end = cfg.years
    yearly = yearly_cooccurrence(g, range(start, end + 1))
    ppmis = [ppmi(counts, year, alpha=cfg.alpha) for year, counts in yearly]
    aggregated = decay_aggregate(ppmis, cfg)
    d = min(cfg.d_td, g.n)
    if d < cfg.d_td:
        logger.warning("Requested %d time-decay dimensions but the graph has %d nodes; using %d", cfg.d_td, g.n, d)
    emb = truncated_svd(aggregated, d, sv_exponent=cfg.sv_exponent)
    logger.info("Built time-decay embedding over %d-%d (lambda=%s): %d x %d", start, end, cfg.lam, emb.n, emb.dim)
    return emb, aggregated


def dump_coordinates(m: sp.spmatrix, path: Path) -> Path:
    """Write the non-zeros of ``m`` as ``i<TAB>j<TAB>value`` lines."""

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    coo = sp.coo_matrix(m)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("i\tj\tvalue\n")
        for k in order:
            fh.write(f"{coo.row[k]}\t{coo.col[k]}\t{coo.data[k]!r}\n")
    return path
