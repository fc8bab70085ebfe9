from __future__ import annotations

import argparse
import json

import httpx
import numpy as np
import pytest
from conftest import Recorder, block_features, sbm_records

from qclp_app import cli
from qclp_app.corpus import write_cooccurrences
from qclp_app.embedding import EmbeddingMatrix, read_embedding, write_embedding
from qclp_app.graph import read_split, write_split

SPLIT_FLAGS = ["--train-end", "2018", "--val-end", "2019", "--test-end", "2020"]


def ingest(corpus, vocab, out, *extra: str) -> int:
    return cli.main(["ingest", "--corpus", str(corpus), "--vocab", str(vocab), "--out", str(out), "-q", *extra])


def mock_factory(recorder):
    return lambda: httpx.AsyncClient(transport=httpx.MockTransport(recorder))


def test_parse_seeds():
    assert cli.parse_seeds("0-2,7") == [0, 1, 2, 7]
    assert cli.parse_seeds("4") == [4]
    for bad in ("", "3-1", "a"):
        with pytest.raises(argparse.ArgumentTypeError):
            cli.parse_seeds(bad)


def test_usage_errors_exit_with_two(tmp_path, tiny_corpus):
    corpus, _ = tiny_corpus
    assert cli.main(["no-such-command"]) == 2
    assert ingest(corpus, tmp_path / "absent.txt", tmp_path / "out") == 2
    assert cli.main(["ingest", "--out", str(tmp_path / "out"), "-q"]) == 2
    assert cli.main(["split", "--out", str(tmp_path / "out"), "--num-nodes", "3", "-q"]) == 2


def test_time_decay_alone_is_refused(tmp_path):
    assert cli.main(["featurize", "--method", "timedecay", "--out", str(tmp_path), "-q", *SPLIT_FLAGS]) == 2
    assert not (tmp_path / "features").exists()


def test_ingest_is_deterministic(tmp_path, tiny_corpus):
    corpus, vocab = tiny_corpus
    assert ingest(corpus, vocab, tmp_path / "a") == 0
    assert ingest(corpus, vocab, tmp_path / "b", "--workers", "3") == 0
    first = (tmp_path / "a" / "cooccurrences.tsv").read_bytes()
    assert first == (tmp_path / "b" / "cooccurrences.tsv").read_bytes()
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text(encoding="utf-8"))
    assert "cooccurrences" in manifest["artifacts"]


def test_split_is_deterministic_and_featurized(tmp_path):
    records, _ = sbm_records(n=60, seed=4, p_in=0.2)
    out = tmp_path / "out"
    edges = out / "cooccurrences.tsv"
    write_cooccurrences(records, edges)
    for name in ("s1", "s2"):
        code = cli.main(
            ["split", "--num-nodes", "60", "--out", str(out), "--split-dir", str(tmp_path / name), "--seed", "5", "-q", *SPLIT_FLAGS]
        )
        assert code == 0
    for path in sorted((tmp_path / "s1").iterdir()):
        assert path.read_bytes() == (tmp_path / "s2" / path.name).read_bytes()
    split = read_split(tmp_path / "s1")
    assert split.n == 60
    assert split.spec.train_end == 2018

    walk_flags = ["--dim", "8", "--num-walks", "2", "--walk-len", "5", "--epochs", "1", "--window", "2"]
    code = cli.main(["featurize", "--method", "deepwalk", "--split", str(tmp_path / "s1"), "--out", str(out), "-q", *walk_flags])
    assert code == 0
    deepwalk = read_embedding(out / "features" / "deepwalk.tsv")
    assert (deepwalk.n, deepwalk.dim) == (60, 8)

    code = cli.main(
        [
            "featurize", "--method", "timedecay", "--split", str(tmp_path / "s1"),
            "--edges", str(edges), "--concat-with", str(out / "features" / "deepwalk.tsv"),
            "--dim", "4", "--out", str(out), "--dump-coordinates", str(out / "td.tsv"), "-q",
        ]
    )
    assert code == 0
    combined = read_embedding(out / "features" / "deepwalk+timedecay.tsv")
    assert (combined.n, combined.dim) == (60, 12)
    assert np.array_equal(combined.vectors[:, :8], deepwalk.vectors)
    assert (out / "td.tsv").read_text(encoding="utf-8").startswith("i\tj\tvalue")


def test_llm_features_replay_from_cache(tmp_path, tiny_corpus, monkeypatch):
    _, vocab = tiny_corpus
    cache, out = tmp_path / "cache", tmp_path / "out"
    flags = ["featurize", "--method", "llm", "--vocab", str(vocab), "--model", "chat-a", "--embedder", "embedder",
             "--cache", str(cache), "--out", str(out), "-q"]

    recorder = Recorder(dim=768)
    monkeypatch.setattr(cli, "http_client_factory", mock_factory(recorder))
    assert cli.main([*flags, "--endpoint", "http://llm.test/v1"]) == 0
    assert len(recorder.requests) == 20
    fetched = read_embedding(out / "features" / "chat-a.tsv")
    assert (fetched.n, fetched.dim) == (10, 768)

    def offline(request: httpx.Request) -> httpx.Response:
        raise AssertionError(f"unexpected request to {request.url}")

    monkeypatch.setattr(cli, "http_client_factory", mock_factory(offline))
    replay = tmp_path / "replay.tsv"
    assert cli.main([*flags, "--fixtures-only", "--output", str(replay)]) == 0
    assert np.array_equal(read_embedding(replay).vectors, fetched.vectors)

    other = [*flags[:6], "chat-b", *flags[7:], "--fixtures-only"]
    assert cli.main(other) == 1


def test_llm_features_with_custom_provider(tmp_path, tiny_corpus, monkeypatch):
    _, vocab = tiny_corpus
    providers = tmp_path / "providers.json"
    providers.write_text(
        json.dumps([{"name": "local-chat", "kind": "chat", "path": "/generate",
                     "request_template": {"prompt": "$text"}, "response_path": ["output"]}]),
        encoding="utf-8",
    )
    paths: list[str] = []

    def handler(request: httpx.Request) -> httpx.Response:
        paths.append(request.url.path)
        body = json.loads(request.content)
        if request.url.path.endswith("/generate"):
            return httpx.Response(200, json={"output": f"notes on {body['prompt']}"})
        return httpx.Response(200, json={"data": [{"embedding": [float(len(body["input"]))] * 8}]})

    monkeypatch.setattr(cli, "http_client_factory", mock_factory(handler))
    code = cli.main(
        ["featurize", "--method", "llm", "--vocab", str(vocab), "--model", "local", "--provider", "local-chat",
         "--providers", str(providers), "--embedder", "embedder", "--endpoint", "http://llm.test/v1", "--dim", "8",
         "--cache", str(tmp_path / "cache"), "--output", str(tmp_path / "local.tsv"), "--out", str(tmp_path), "-q"]
    )
    assert code == 0
    assert sum(path.endswith("/generate") for path in paths) == 10
    assert read_embedding(tmp_path / "local.tsv").dim == 8
    assert cli.main(["featurize", "--method", "llm", "--vocab", str(vocab), "--model", "local",
                     "--provider", "local-chat", "--embedder", "e", "--fixtures-only", "--out", str(tmp_path), "-q"]) == 2


def test_train_eval_grid_and_report(tmp_path, sbm_split):
    split, blocks = sbm_split
    split_dir = write_split(split, tmp_path / "split")
    write_embedding(EmbeddingMatrix(block_features(blocks), "blocks"), tmp_path / "blocks.tsv")
    noise = np.random.default_rng(1).standard_normal((split.n, 2))
    write_embedding(EmbeddingMatrix(noise, "noise"), tmp_path / "noise.tsv")
    out = tmp_path / "out"
    args = [
        "train-eval", "--split", str(split_dir), "--out", str(out), "-q",
        "--features", f"blocks={tmp_path / 'blocks.tsv'}", "--features", f"noise={tmp_path / 'noise.tsv'}",
        "--model", "mlp", "--model", "gcn", "--seeds", "0-2", "--epochs", "5", "--hidden", "8",
    ]

    assert cli.main(args) == 0
    metrics = sorted((out / "runs").rglob("metrics.json"))
    assert len(metrics) == 12
    stamps = {path: path.stat().st_mtime_ns for path in metrics}
    report = (out / "report.md").read_text(encoding="utf-8")
    assert "| Features | MLP AUROC | MLP AP | GCN AUROC | GCN AP |" in report
    assert len(json.loads((out / "eval_summary.json").read_text(encoding="utf-8"))) == 4

    assert cli.main(args) == 0
    assert {path: path.stat().st_mtime_ns for path in metrics} == stamps

    (out / "report.md").unlink()
    assert cli.main(["report", "--out", str(out), "-q"]) == 0
    assert (out / "report.md").read_text(encoding="utf-8") == report
    assert cli.main(["report", "--out", str(tmp_path / "empty"), "-q"]) == 2


def test_train_eval_rejects_wrong_feature_rows(tmp_path, sbm_split):
    split, _ = sbm_split
    split_dir = write_split(split, tmp_path / "split")
    write_embedding(EmbeddingMatrix(np.zeros((3, 2)), "small"), tmp_path / "small.tsv")
    args = ["train-eval", "--split", str(split_dir), "--features", f"small={tmp_path / 'small.tsv'}", "--out", str(tmp_path), "-q"]
    assert cli.main(args) == 2


def test_config_file_values_yield_to_flags(tmp_path):
    config = tmp_path / "experiment.toml"
    config.write_text(
        "[run]\nmaster_seed = 3\nseeds = [0, 1]\n\n[split]\ntrain_end = 2018\nval_end = 2019\ntest_end = 2020\n\n"
        "[model]\narch = \"sage\"\nhidden = 32\n",
        encoding="utf-8",
    )
    parser = cli.build_parser()
    cfg = cli.experiment_config(parser.parse_args(["train-eval", "--config", str(config), "--seed", "9", "--hidden", "4"]))
    assert cfg.master_seed == 9
    assert cfg.seeds == [0, 1]
    assert cfg.split.train_end == 2018
    assert [(m.arch, m.hidden) for m in cfg.models] == [("sage", 4)]

    bad = tmp_path / "bad.toml"
    bad.write_text("[split]\ntrain_end = 2020\nval_end = 2019\ntest_end = 2021\n", encoding="utf-8")
    assert cli.main(["train-eval", "--config", str(bad), "-q"]) == 2


def recorded(out, name: str) -> tuple[str, str]:
    artifact = json.loads((out / "manifest.json").read_text(encoding="utf-8"))["artifacts"][name]
    return artifact["created_at"], artifact["params_hash"]


def test_flags_without_config_keep_defaults(tmp_path):
    parser = cli.build_parser()
    cfg = cli.experiment_config(parser.parse_args(["featurize", "--method", "node2vec", "--p", "2", "--out", str(tmp_path)]))
    assert (cfg.walk.num_walks, cfg.walk.walk_len, cfg.walk.p, cfg.walk.q) == (10, 80, 2.0, 1.0)
    assert cfg.skipgram.dim == 768
    assert cfg.llm.models == []

    cfg = cli.experiment_config(parser.parse_args(["train-eval", "--out", str(tmp_path)]))
    assert cfg.master_seed == 0
    assert cfg.paths.out == tmp_path


def test_unchanged_steps_are_reused(tmp_path, tiny_corpus):
    corpus, vocab = tiny_corpus
    out = tmp_path / "out"
    assert ingest(corpus, vocab, out) == 0
    first = recorded(out, "cooccurrences")
    assert ingest(corpus, vocab, out) == 0
    assert recorded(out, "cooccurrences") == first
    assert ingest(corpus, vocab, out, "--max-year", "2019") == 0
    assert recorded(out, "cooccurrences")[1] != first[1]

    records, _ = sbm_records(n=60, seed=4, p_in=0.2)
    edges = tmp_path / "sbm.tsv"
    write_cooccurrences(records, edges)
    split = ["split", "--edges", str(edges), "--num-nodes", "60", "--out", str(out), "-q", *SPLIT_FLAGS]
    assert cli.main(split) == 0
    first = recorded(out, "split")
    assert cli.main(split) == 0
    assert recorded(out, "split") == first
    assert cli.main([*split, "--seed", "3"]) == 0
    assert recorded(out, "split")[1] != first[1]

    walk_flags = ["--num-walks", "2", "--walk-len", "5", "--epochs", "1", "--window", "2", "--seed", "3"]
    featurize = ["featurize", "--method", "deepwalk", "--split", str(out / "split"), "--out", str(out), "-q", *walk_flags]
    assert cli.main([*featurize, "--dim", "8"]) == 0
    features = out / "features" / "deepwalk.tsv"
    first, body = recorded(out, "features/deepwalk"), features.read_bytes()
    assert cli.main([*featurize, "--dim", "8"]) == 0
    assert recorded(out, "features/deepwalk") == first
    assert features.read_bytes() == body
    assert cli.main([*featurize, "--dim", "4"]) == 0
    assert read_embedding(features).dim == 4


def test_changing_master_seed_reruns_cells(tmp_path, sbm_split):
    split, blocks = sbm_split
    split_dir = write_split(split, tmp_path / "split")
    write_embedding(EmbeddingMatrix(block_features(blocks), "blocks"), tmp_path / "blocks.tsv")
    out = tmp_path / "out"
    args = [
        "train-eval", "--split", str(split_dir), "--out", str(out), "-q", "--features", f"blocks={tmp_path / 'blocks.tsv'}",
        "--model", "mlp", "--seeds", "0", "--epochs", "3", "--hidden", "4",
    ]

    assert cli.main([*args, "--seed", "0"]) == 0
    first = recorded(out, "mlp/blocks/seed0")
    assert cli.main([*args, "--seed", "0"]) == 0
    assert recorded(out, "mlp/blocks/seed0") == first
    assert cli.main([*args, "--seed", "7"]) == 0
    created, params = recorded(out, "mlp/blocks/seed0")
    assert created != first[0]
    assert params != first[1]
