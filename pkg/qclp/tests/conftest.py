from __future__ import annotations

import json
from pathlib import Path

import httpx
import numpy as np
import pytest

from qclp_app.config import SplitSpec
from qclp_app.corpus import CooccurrenceRecord
from qclp_app.graph import EdgeSplit, TemporalGraph, as_edge_array, build_graph, make_edge_split


def write_jsonl(path: Path, rows: list[dict]) -> Path:
    path.write_text("".join(json.dumps(row) + "\n" for row in rows), encoding="utf-8")
    return path


@pytest.fixture
def tiny_corpus(tmp_path: Path) -> tuple[Path, Path]:
    """Ten concepts, documents spread over 2015-2024."""

    concepts = [
        "transmon",
        "hilbert space",
        "qubit",
        "surface code",
        "entanglement",
        "decoherence",
        "quantum annealing",
        "ion trap",
        "photonic chip",
        "majorana",
    ]
    vocab = tmp_path / "vocab.txt"
    vocab.write_text("\n".join(concepts) + "\n", encoding="utf-8")

    rng = np.random.default_rng(7)
    rows = []
    for i in range(60):
        picked = rng.choice(len(concepts), size=int(rng.integers(1, 4)), replace=False)
        text = " and ".join(concepts[j] for j in picked)
        rows.append({"id": f"doc{i}", "year": 2015 + i % 10, "title": f"On {text}", "abstract": "We study it."})
    corpus = write_jsonl(tmp_path / "corpus.jsonl", rows)
    return corpus, vocab


def sbm_records(
    n: int = 120, seed: int = 0, p_in: float = 0.12, p_out: float = 0.005, late_nodes: int = 0
) -> tuple[list[CooccurrenceRecord], np.ndarray]:
    """Two-block stochastic block model with edges stamped over 2011-2020.

    Edges touching the first ``late_nodes`` nodes all appear in 2020, so those
    nodes have no edge before then.
    """

    rng = np.random.default_rng(seed)
    blocks = np.arange(n) % 2
    iu, iv = np.triu_indices(n, k=1)
    prob = np.where(blocks[iu] == blocks[iv], p_in, p_out)
    keep = rng.random(iu.shape[0]) < prob
    edges = as_edge_array(np.stack([iu[keep], iv[keep]], axis=1))
    years = rng.choice(np.arange(2011, 2021), size=len(edges), p=np.r_[np.full(8, 0.85 / 8), 0.05, 0.10])
    if late_nodes:
        years[(edges < late_nodes).any(axis=1)] = 2020
    records = [CooccurrenceRecord(int(u), int(v), int(y), f"d{i}") for i, ((u, v), y) in enumerate(zip(edges, years))]
    return records, blocks


def sbm_graph(n: int = 120, seed: int = 0, **kwargs) -> tuple[TemporalGraph, np.ndarray]:
    records, blocks = sbm_records(n, seed, **kwargs)
    return build_graph(records, n), blocks


def planted_records(
    n: int = 300,
    seed: int = 0,
    width: float = 0.6,
    p_near: float = 0.12,
    p_far: float = 0.002,
    p_out: float = 0.001,
    late_nodes: int = 0,
) -> tuple[list[CooccurrenceRecord], np.ndarray]:
    """Two blocks with every node placed on a circle; links follow the placement.

    Same-block pairs closer than ``width`` radians link with ``p_near``, other
    same-block pairs with ``p_far``, cross-block pairs with ``p_out``. The
    returned features are ``[block one-hot, cos angle, sin angle]``, so they
    carry what the link process used. Years and ``late_nodes`` behave as in
    ``sbm_records``.
    """

    rng = np.random.default_rng(seed)
    blocks = np.arange(n) % 2
    angles = rng.uniform(0.0, 2 * np.pi, size=n)
    iu, iv = np.triu_indices(n, k=1)
    gap = np.abs(angles[iu] - angles[iv])
    gap = np.minimum(gap, 2 * np.pi - gap)
    prob = np.where(blocks[iu] != blocks[iv], p_out, np.where(gap < width, p_near, p_far))
    keep = rng.random(iu.shape[0]) < prob
    edges = as_edge_array(np.stack([iu[keep], iv[keep]], axis=1))
    years = rng.choice(np.arange(2011, 2021), size=len(edges), p=np.r_[np.full(8, 0.85 / 8), 0.05, 0.10])
    if late_nodes:
        years[(edges < late_nodes).any(axis=1)] = 2020
    records = [CooccurrenceRecord(int(u), int(v), int(y), f"d{i}") for i, ((u, v), y) in enumerate(zip(edges, years))]
    features = np.hstack([np.eye(2)[blocks], np.cos(angles)[:, None], np.sin(angles)[:, None]])
    return records, features


def planted_graph(n: int = 300, seed: int = 0, **kwargs) -> tuple[TemporalGraph, np.ndarray]:
    records, features = planted_records(n, seed, **kwargs)
    return build_graph(records, n), features


@pytest.fixture
def sbm_split() -> tuple[EdgeSplit, np.ndarray]:
    graph, blocks = sbm_graph()
    return make_edge_split(graph, SplitSpec(train_end=2018, val_end=2019, test_end=2020), seed=3), blocks


def block_features(blocks: np.ndarray, noise: float = 0.05, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    onehot = np.eye(int(blocks.max()) + 1)[blocks]
    return onehot + noise * rng.standard_normal(onehot.shape)


class Recorder:
    """MockTransport handler that replays scripted responses and counts requests."""

    def __init__(self, *responses: httpx.Response | None, dim: int = 4):
        self.scripted = list(responses)
        self.requests: list[httpx.Request] = []
        self.dim = dim

    def __call__(self, request: httpx.Request) -> httpx.Response:
        self.requests.append(request)
        if self.scripted:
            scripted = self.scripted.pop(0)
            if scripted is not None:
                return scripted
        body = json.loads(request.content)
        if request.url.path.endswith("/embeddings"):
            seed = sum(body["input"].encode("utf-8"))
            vector = np.random.default_rng(seed).standard_normal(self.dim).tolist()
            return httpx.Response(200, json={"data": [{"embedding": vector}]})
        prompt = body["messages"][0]["content"]
        return httpx.Response(200, json={"choices": [{"message": {"content": f"{body['model']} says: {prompt}"}}]})
