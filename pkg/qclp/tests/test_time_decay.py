from __future__ import annotations

import math

import numpy as np
import pytest
import scipy.sparse as sp
from conftest import sbm_graph

from qclp_app.config import SplitSpec, TimeDecayConfig, TimeDecaySettings
from qclp_app.corpus import CooccurrenceRecord
from qclp_app.embedding import EmbeddingMatrix, concat_embeddings
from qclp_app.errors import ConfigError
from qclp_app.graph import build_graph
from qclp_app.time_decay import (
    PpmiMatrix,
    decay_aggregate,
    decay_weight,
    dump_coordinates,
    ppmi,
    time_decay_embedding,
    truncated_svd,
    yearly_cooccurrence,
)


def dense_ppmi(counts: np.ndarray) -> np.ndarray:
    total = counts.sum()
    out = np.zeros_like(counts, dtype=float)
    if total == 0:
        return out
    rows = counts.sum(axis=1)
    cols = counts.sum(axis=0)
    for i in range(counts.shape[0]):
        for j in range(counts.shape[1]):
            if i == j or counts[i, j] == 0:
                continue
            value = math.log((counts[i, j] / total) / ((rows[i] / total) * (cols[j] / total)))
            out[i, j] = max(0.0, value)
    return out


def td_config(**overrides) -> TimeDecayConfig:
    values = {"lambda": 0.5, "ref_year": 2020, "d_td": 2, "years": (2019, 2020)}
    values.update(overrides)
    return TimeDecayConfig(**values)


def test_yearly_cooccurrence_counts_documents():
    records = [CooccurrenceRecord(0, 1, 2020, "a"), CooccurrenceRecord(0, 1, 2020, "b"), CooccurrenceRecord(1, 2, 2018, "c")]
    g = build_graph(records, n=3)
    yearly = dict(yearly_cooccurrence(g, range(2018, 2021)))
    assert yearly[2019].nnz == 0
    assert yearly[2020][0, 1] == 2
    for m in yearly.values():
        dense = m.toarray()
        assert np.array_equal(dense, dense.T)
        assert not dense.diagonal().any()


def test_ppmi_worked_example():
    counts = np.array([[0, 2, 0], [2, 0, 1], [0, 1, 0]], dtype=float)
    m = ppmi(counts).matrix.toarray()
    assert m[0, 1] == pytest.approx(math.log(2))
    assert m[1, 2] == pytest.approx(math.log(2))
    assert m[0, 2] == 0


def test_ppmi_uniform_counts_are_positive():
    counts = np.ones((3, 3)) - np.eye(3)
    m = ppmi(counts).matrix.toarray()
    off = m[~np.eye(3, dtype=bool)]
    assert (off > 0).all()
    assert off == pytest.approx(np.full(6, math.log(1.5)))


def test_ppmi_matches_dense_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(2, 11))
        upper = np.triu(rng.poisson(1.0, size=(n, n)) * (rng.random((n, n)) < 0.6), k=1).astype(float)
        counts = upper + upper.T
        m = ppmi(counts).matrix.toarray()
        assert np.abs(m - dense_ppmi(counts)).max() <= 1e-12
        assert (m >= 0).all()
        assert np.array_equal(m, m.T) or np.abs(m - m.T).max() <= 1e-12
        assert not m.diagonal().any()


def test_ppmi_empty_matrix():
    assert ppmi(sp.csr_matrix((4, 4))).matrix.nnz == 0


def test_ppmi_context_smoothing_changes_marginal():
    counts = np.array([[0, 4, 1], [4, 0, 1], [1, 1, 0]], dtype=float)
    plain = ppmi(counts).matrix.toarray()
    smoothed = ppmi(counts, alpha=0.75).matrix.toarray()
    assert not np.allclose(plain, smoothed)


def one_entry(value: float, year: int) -> PpmiMatrix:
    return PpmiMatrix(sp.csr_matrix(([value], ([0], [1])), shape=(2, 2)), year)


def test_decay_aggregate_examples():
    cfg = td_config()
    single = decay_aggregate([one_entry(1.0, 2020)], cfg)
    assert single[0, 1] == pytest.approx(1.0)

    pair = decay_aggregate([one_entry(1.0, 2020), one_entry(1.0, 2019)], cfg)
    assert pair[0, 1] == pytest.approx(1 + math.exp(-0.5))
    assert pair[0, 1] == pytest.approx(1.6065, abs=1e-4)

    flat = decay_aggregate([one_entry(1.0, 2020), one_entry(2.0, 2019)], td_config(**{"lambda": 0.0}))
    assert flat[0, 1] == pytest.approx(3.0)


def test_decay_weights_strictly_decrease():
    weights = [decay_weight(0.3, elapsed) for elapsed in range(6)]
    assert all(a > b for a, b in zip(weights, weights[1:]))


def test_decay_aggregate_rejects_future_years():
    with pytest.raises(ValueError, match="after the reference year"):
        decay_aggregate([one_entry(1.0, 2021)], td_config())


def test_truncated_svd_identity():
    emb = truncated_svd(np.eye(3), 3)
    assert np.allclose(emb.vectors @ emb.vectors.T, np.eye(3))


def test_truncated_svd_rank_one():
    u = np.array([3.0, 4.0, 0.0]) / 5.0
    emb = truncated_svd(2.5 * np.outer(u, u), 1)
    assert np.allclose(np.abs(emb.vectors[:, 0]), np.sqrt(2.5) * np.abs(u))
    assert emb.vectors[np.argmax(np.abs(emb.vectors[:, 0])), 0] > 0


def test_truncated_svd_error_shrinks_with_dimension():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((8, 8))
    m = a @ a.T
    errors = [np.linalg.norm(m - (e := truncated_svd(m, d).vectors) @ e.T) for d in range(1, 9)]
    assert all(b <= a + 1e-9 for a, b in zip(errors, errors[1:]))
    assert errors[-1] < 1e-8 * max(1.0, np.abs(m).max())
    assert np.abs(m - truncated_svd(m, 8).vectors @ truncated_svd(m, 8).vectors.T).max() < 1e-8


def test_truncated_svd_rejects_bad_dimension():
    with pytest.raises(ValueError):
        truncated_svd(np.eye(3), 4)
    with pytest.raises(ValueError):
        truncated_svd(np.eye(3), 0)


def test_concat_embeddings_shapes():
    a = EmbeddingMatrix(np.arange(6, dtype=float).reshape(3, 2), "m")
    b = EmbeddingMatrix(np.ones((3, 4)), "timedecay")
    merged = concat_embeddings(a, b)
    assert merged.vectors.shape == (3, 6)
    assert merged.source == "merged"
    assert np.array_equal(merged.vectors[:, :2], a.vectors)
    assert np.array_equal(concat_embeddings(a, EmbeddingMatrix(np.empty((3, 0)), "x")).vectors, a.vectors)
    with pytest.raises(ValueError):
        concat_embeddings(a, EmbeddingMatrix(np.ones((2, 2)), "x"))


def test_time_decay_embedding_pipeline(tmp_path):
    g, _ = sbm_graph(n=30, seed=4)
    cfg = td_config(ref_year=2018, years=(2011, 2018), d_td=5)
    emb, aggregated = time_decay_embedding(g, cfg)
    assert emb.vectors.shape == (30, 5)
    assert emb.source == "timedecay"
    assert np.isfinite(emb.vectors).all()
    assert np.abs(aggregated - aggregated.T).max() <= 1e-12

    path = dump_coordinates(aggregated, tmp_path / "m.tsv")
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "i\tj\tvalue"
    assert len(lines) == aggregated.nnz + 1


def test_time_decay_settings_default_to_training_window():
    spec = SplitSpec(train_end=2021, val_end=2022, test_end=2024)
    cfg = TimeDecaySettings().resolve(spec, first_year=2007)
    assert cfg.years == (2007, 2021)
    assert cfg.ref_year == 2021
    assert cfg.lam == 0.3


def test_time_decay_settings_refuse_leakage():
    spec = SplitSpec(train_end=2021, val_end=2022, test_end=2024)
    with pytest.raises(ConfigError):
        TimeDecaySettings(years=(2007, 2022), ref_year=2022).resolve(spec, first_year=2007)
