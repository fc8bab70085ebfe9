"""Command-line entry point: ``qclp <subcommand> [options]``.

Logs and progress go to stderr, data goes to files under ``--out``.
Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import re
import sys
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Any

import httpx
from dotenv import load_dotenv
from pydantic import ValidationError

from . import __version__
from .classic import deepwalk, node2vec, train_line
from .config import ExperimentConfig, FeatureRecipe, default_cache_dir, load_experiment_config
from .corpus import corpus_statistics, extract_cooccurrences, filter_years, load_corpus, load_vocab, read_cooccurrences, write_cooccurrences
from .embedding import EmbeddingMatrix, concat_embeddings, read_embedding, write_embedding
from .errors import ConfigError, MissingFileError, QclpError
from .graph import TemporalGraph, build_graph, make_edge_split, read_split, write_split
from .llm import FeatureCache, LlmClient, featurize_vocab, pool_embeddings, read_selection, replay_selection, summarize_vocab
from .manifest import ManifestStore, sha256_file, sha256_tree
from .registry import ProviderRegistry
from .report import collect_runs, group_reports, write_report
from .seeding import derive_seed
from .time_decay import dump_coordinates, time_decay_embedding
from .workers import GridRunner, build_feature_set, grid_cells

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
FEATURE_METHODS = ("deepwalk", "line", "node2vec", "llm", "timedecay")
MERGE_METHODS = ("mean_pool", "max_pool", "summarize", "select")

# Tests swap this for a client over an instrumented transport.
http_client_factory: Callable[[], httpx.AsyncClient] = httpx.AsyncClient


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def parse_seeds(text: str) -> list[int]:
    """``"0-9"`` or ``"0,3,5"`` or a mix such as ``"0-2,7"``."""

    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        match = re.fullmatch(r"(\d+)-(\d+)", part)
        if match:
            lo, hi = int(match.group(1)), int(match.group(2))
            if hi < lo:
                raise argparse.ArgumentTypeError(f"empty seed range {part}")
            seeds.extend(range(lo, hi + 1))
        elif part.isdigit():
            seeds.append(int(part))
        else:
            raise argparse.ArgumentTypeError(f"invalid seed list entry {part!r}")
    if not seeds:
        raise argparse.ArgumentTypeError("seed list is empty")
    return seeds


def _named_path(text: str) -> tuple[str | None, Path]:
    name, sep, path = text.partition("=")
    return (name, Path(path)) if sep else (None, Path(text))


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", text).strip("_") or "features"


def _progress(args: argparse.Namespace) -> bool:
    return not args.quiet and sys.stderr.isatty()


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML experiment file; flags override its values.")
    common.add_argument("--seed", type=int, dest="master_seed", help="Master seed; component seeds are derived from it.")
    common.add_argument("--out", type=Path, help="Output directory (default: runs).")
    common.add_argument("--workers", type=int, help="Parallel workers.")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Debug logging.")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Warnings and errors only.")

    parser = argparse.ArgumentParser(
        prog="qclp",
        description="Forecast links in a temporal concept co-occurrence network.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str, handler: Callable[..., int]) -> argparse.ArgumentParser:
        p = sub.add_parser(name, parents=[common], help=help_text, formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        p.set_defaults(handler=handler)
        return p

    p = add("ingest", "Extract concept co-occurrences from a corpus.", cmd_ingest)
    p.add_argument("--corpus", type=Path, help="JSON-lines corpus.")
    p.add_argument("--vocab", type=Path, help="One concept per line.")
    p.add_argument("--min-year", type=int)
    p.add_argument("--max-year", type=int)
    p.add_argument("--output", type=Path, help="Co-occurrence TSV (default: <out>/cooccurrences.tsv).")

    p = add("stats", "Corpus statistics: contributing documents per year and top pairs.", cmd_stats)
    p.add_argument("--corpus", type=Path)
    p.add_argument("--vocab", type=Path)
    p.add_argument("--top-k", type=int, default=20)

    p = add("split", "Chronological train/val/test split with sampled negatives.", cmd_split)
    p.add_argument("--edges", type=Path, help="Co-occurrence TSV (default: <out>/cooccurrences.tsv).")
    p.add_argument("--vocab", type=Path, help="Vocabulary; its size fixes the node count.")
    p.add_argument("--num-nodes", type=int, help="Node count when no vocabulary is given.")
    _add_split_flags(p)
    p.add_argument("--split-dir", type=Path, help="Output directory (default: <out>/split).")

    p = add("featurize", "Compute node features.", cmd_featurize)
    p.add_argument("--method", choices=FEATURE_METHODS, required=True)
    p.add_argument("--split", type=Path, dest="split_dir", help="Split directory; graph methods use its train edges.")
    p.add_argument("--edges", type=Path, help="Co-occurrence TSV (time-decay needs yearly counts).")
    p.add_argument("--vocab", type=Path)
    p.add_argument("--dim", type=int, help="Embedding dimension (default 768).")
    p.add_argument("--output", type=Path, help="Output file; a .emb suffix selects the binary format.")
    p.add_argument("--l2-normalize", action="store_true", help="Scale each row to unit length.")
    p.add_argument("--num-walks", type=int)
    p.add_argument("--walk-len", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--neg-k", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--p", type=float, dest="walk_p", help="node2vec return parameter.")
    p.add_argument("--q", type=float, dest="walk_q", help="node2vec in-out parameter.")
    p.add_argument("--lambda", type=float, dest="lam", help="Time-decay rate (default 0.3).")
    p.add_argument("--concat-with", type=Path, help="Feature file the time-decay block is appended to.")
    p.add_argument("--dump-coordinates", type=Path, help="Write the aggregated time-decay matrix as i/j/value TSV.")
    _add_split_flags(p)
    _add_llm_flags(p)

    p = add("merge", "Combine several LLM feature matrices.", cmd_merge)
    p.add_argument("--method", choices=MERGE_METHODS, required=True)
    p.add_argument("--inputs", nargs="*", default=[], help="Feature files, or MODEL=PATH for select.")
    p.add_argument("--selection", type=Path, help="Per-concept model ids, one per line (select).")
    p.add_argument("--vocab", type=Path)
    p.add_argument("--dim", type=int)
    p.add_argument("--output", type=Path)
    _add_llm_flags(p)
    p.add_argument("--summarizer", help="Model that writes the summaries.")

    p = add("train-eval", "Train and evaluate every (model, features, seed) cell.", cmd_train_eval)
    p.add_argument("--split", type=Path, dest="split_dir")
    p.add_argument("--features", action="append", default=[], help="NAME=PATH feature file; repeatable.")
    p.add_argument("--concat-with", type=Path, help="Append this matrix to every --features entry.")
    p.add_argument("--model", action="append", choices=("mlp", "gcn", "sage", "gae", "ncn"), help="Architecture; repeatable.")
    p.add_argument("--seeds", type=parse_seeds, help="Seed list such as 0-9 or 0,1,2.")
    p.add_argument("--layers", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--batch-size", type=int)

    add("report", "Re-render report.md/report.csv from metrics files under --out.", cmd_report)
    return parser


def _add_split_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--train-end", type=int)
    p.add_argument("--val-end", type=int)
    p.add_argument("--test-end", type=int)


def _add_llm_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--endpoint", help="Chat endpoint base URL.")
    p.add_argument("--model", action="append", dest="llm_models", help="LLM model id; repeatable for merging.")
    p.add_argument("--provider", help="Chat provider adapter.")
    p.add_argument("--max-tokens", type=int, help="Generation cap (default 512).")
    p.add_argument("--embedder", help="Text-embedding model id.")
    p.add_argument("--embed-endpoint", help="Embedding endpoint base URL (default: --endpoint).")
    p.add_argument("--embed-provider", help="Embedding provider adapter.")
    p.add_argument("--cache", type=Path, help="Cache directory (default: $QCLP_CACHE_DIR or ~/.cache/qclp).")
    p.add_argument("--fixtures-only", action="store_true", help="Serve everything from the cache; never call the network.")
    p.add_argument("--providers", type=Path, dest="providers_file", help="JSON file with extra provider adapters.")


# ---------------------------------------------------------------------------
# configuration


def _opt(args: argparse.Namespace, name: str) -> Any:
    return getattr(args, name, None)


def experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    """File values first, then every flag that was given."""

    split = {key: _opt(args, key) for key in ("train_end", "val_end", "test_end")}
    overrides: dict[str, Any] = {
        "paths": {
            "corpus": _opt(args, "corpus"),
            "vocab": _opt(args, "vocab"),
            "cache": _opt(args, "cache"),
            "split_dir": _opt(args, "split_dir"),
            "out": _opt(args, "out"),
        },
        "split": split if any(v is not None for v in split.values()) else None,
        "master_seed": _opt(args, "master_seed"),
        "workers": _opt(args, "workers"),
        "seeds": _opt(args, "seeds"),
        "walk": {
            "num_walks": _opt(args, "num_walks"),
            "walk_len": _opt(args, "walk_len"),
            "p": _opt(args, "walk_p"),
            "q": _opt(args, "walk_q"),
        },
        "skipgram": {
            "dim": _opt(args, "dim"),
            "window": _opt(args, "window"),
            "neg_k": _opt(args, "neg_k"),
            "epochs": _opt(args, "epochs") if args.command == "featurize" else None,
            "lr": _opt(args, "lr") if args.command == "featurize" else None,
        },
        "time_decay": {"lambda": _opt(args, "lam"), "d_td": _opt(args, "dim")},
        "llm": {
            "endpoint": _opt(args, "endpoint"),
            "models": _opt(args, "llm_models"),
            "provider": _opt(args, "provider"),
            "max_tokens": _opt(args, "max_tokens"),
            "embedder": _opt(args, "embedder"),
            "embed_endpoint": _opt(args, "embed_endpoint"),
            "embed_provider": _opt(args, "embed_provider"),
            "summarizer": _opt(args, "summarizer"),
            "fixtures_only": True if _opt(args, "fixtures_only") else None,
            "providers_file": _opt(args, "providers_file"),
        },
    }
    if args.command == "train-eval" and _opt(args, "model"):
        overrides["models"] = [{"arch": arch} for arch in args.model]
    cfg = load_experiment_config(args.config, overrides)

    if args.command == "train-eval":
        hyper = {
            key: _opt(args, key)
            for key in ("layers", "hidden", "dropout", "lr", "epochs", "patience", "batch_size")
            if _opt(args, key) is not None
        }
        if hyper:
            try:
                models = [type(m).model_validate({**m.model_dump(), **hyper}) for m in cfg.models]
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
            cfg = cfg.model_copy(update={"models": models})
    return cfg


def _require(value: Any, flag: str) -> Any:
    if value is None:
        raise ConfigError(f"{flag} is required (flag or config file)")
    return value


def _cache_dir(cfg: ExperimentConfig) -> Path:
    return cfg.paths.cache or default_cache_dir()


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(args: argparse.Namespace, cfg: ExperimentConfig) -> int:
    corpus_path = _require(cfg.paths.corpus, "--corpus")
    vocab_path = _require(cfg.paths.vocab, "--vocab")
    vocab = load_vocab(vocab_path)
    output = args.output or cfg.paths.out / "cooccurrences.tsv"
    store = ManifestStore(cfg.paths.out, cfg.config_hash())
    inputs = {"corpus": sha256_file(corpus_path), "vocab": sha256_file(vocab_path)}
    params = {"min_year": args.min_year, "max_year": args.max_year, "output": str(output)}
    if store.is_fresh("cooccurrences", inputs, params):
        logger.info("Reusing %s", output)
        return 0

    docs = filter_years(load_corpus(corpus_path), args.min_year, args.max_year)
    records = extract_cooccurrences(docs, vocab, workers=cfg.workers)
    count = write_cooccurrences(records, output)
    logger.info("Wrote %d co-occurrence records to %s", count, output)
    store.record("cooccurrences", "cooccurrences", output, inputs, params)
    return 0


def cmd_stats(args: argparse.Namespace, cfg: ExperimentConfig) -> int:
    vocab = load_vocab(_require(cfg.paths.vocab, "--vocab"))
    docs = load_corpus(_require(cfg.paths.corpus, "--corpus"))
    stats = corpus_statistics(docs, vocab, top_k=args.top_k)
    out = cfg.paths.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "corpus_stats.md").write_text(stats.to_markdown(), encoding="utf-8")
    (out / "corpus_stats.json").write_text(json.dumps(stats.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("%d of %d documents contribute co-occurrences", stats.contributing, stats.documents)
    return 0


def _node_count(args: argparse.Namespace, cfg: ExperimentConfig) -> int:
    if cfg.paths.vocab is not None:
        return len(load_vocab(cfg.paths.vocab))
    return _require(_opt(args, "num_nodes"), "--vocab or --num-nodes")


def cmd_split(args: argparse.Namespace, cfg: ExperimentConfig) -> int:
    spec = _require(cfg.split, "--train-end/--val-end/--test-end")
    edges_path = args.edges or cfg.paths.out / "cooccurrences.tsv"
    if not Path(edges_path).exists():
        raise MissingFileError(f"co-occurrence file not found: {edges_path}", path=str(edges_path))
    n = _node_count(args, cfg)
    seed = derive_seed(cfg.master_seed, "split")
    split_dir = Path(args.split_dir or cfg.paths.split_dir or cfg.paths.out / "split")
    store = ManifestStore(cfg.paths.out, cfg.config_hash())
    inputs = {"edges": sha256_file(edges_path)}
    params = {"spec": spec.model_dump(), "seed": seed, "n": n, "split_dir": str(split_dir)}
    if store.is_fresh("split", inputs, params):
        logger.info("Reusing split in %s", split_dir)
        return 0

    graph = build_graph(read_cooccurrences(edges_path), n)
    write_split(make_edge_split(graph, spec, seed), split_dir)
    logger.info("Wrote split to %s", split_dir)
    store.record("split", "split", split_dir / "split_meta.json", inputs, params)
    return 0


def _split_files(split_dir: Path) -> list[Path]:
    return sorted(p for p in Path(split_dir).iterdir() if p.suffix in {".tsv", ".json"})


def _featurize_graph(args: argparse.Namespace, cfg: ExperimentConfig, method: str) -> EmbeddingMatrix:
    split = read_split(_require(cfg.paths.split_dir, "--split"))
    graph = TemporalGraph.from_edges(split.train_pos, split.n)
    walk_cfg = cfg.walk.model_copy(update={"seed": derive_seed(cfg.master_seed, method, "walks")})
    sg_cfg = cfg.skipgram.model_copy(update={"seed": derive_seed(cfg.master_seed, method, "skipgram")})
    if method == "deepwalk":
        return deepwalk(graph, walk_cfg.model_copy(update={"p": 1.0, "q": 1.0}), sg_cfg, workers=cfg.workers)
    if method == "node2vec":
        return node2vec(graph, walk_cfg, sg_cfg, workers=cfg.workers)
    return train_line(
        graph, dim=sg_cfg.dim, neg_k=sg_cfg.neg_k, epochs=sg_cfg.epochs, lr=sg_cfg.lr,
        seed=derive_seed(cfg.master_seed, "line"),
    )


def _featurize_time_decay(args: argparse.Namespace, cfg: ExperimentConfig) -> EmbeddingMatrix:
    base = read_embedding(args.concat_with)
    split_dir = cfg.paths.split_dir
    spec = cfg.split
    if spec is None and split_dir is not None:
        spec = read_split(split_dir).spec
    spec = _require(spec, "--train-end/--val-end/--test-end or --split")
    records = read_cooccurrences(_require(args.edges, "--edges"))
    if not records:
        raise ConfigError(f"no co-occurrence records in {args.edges}")
    graph = build_graph(records, base.n).restrict(spec.train_end)
    td_cfg = cfg.time_decay.resolve(spec, min(r.year for r in records))
    td, aggregated = time_decay_embedding(graph, td_cfg)
    if args.dump_coordinates is not None:
        dump_coordinates(aggregated, args.dump_coordinates)
    return concat_embeddings(base, td)


def _llm_clients(
    cfg: ExperimentConfig, model_ids: Sequence[str], http: httpx.AsyncClient, dim: int
) -> tuple[list[LlmClient], LlmClient]:
    cache = FeatureCache(_cache_dir(cfg))
    fixtures = cfg.llm.fixtures_only
    registry = ProviderRegistry()
    if cfg.llm.providers_file is not None:
        registry.load_file(cfg.llm.providers_file)
    options = {"http_client": http, "fixtures_only": fixtures, "registry": registry}
    generators = [LlmClient(cfg.llm.generator(m), cache, **options) for m in model_ids]
    embedder = LlmClient(cfg.llm.embedder_config(dim), cache, **options)
    return generators, embedder


def _featurize_llm(args: argparse.Namespace, cfg: ExperimentConfig) -> EmbeddingMatrix:
    vocab = load_vocab(_require(cfg.paths.vocab, "--vocab"))
    models = cfg.llm.models

    async def run() -> EmbeddingMatrix:
        async with http_client_factory() as http:
            (generator,), embedder = _llm_clients(cfg, models, http, cfg.skipgram.dim)
            return await featurize_vocab(
                generator, embedder, vocab.concepts, l2_normalize=args.l2_normalize, progress=_progress(args)
            )

    return asyncio.run(run())


def _feature_name(args: argparse.Namespace, cfg: ExperimentConfig) -> str:
    if args.method == "timedecay":
        if args.concat_with is None:
            raise ConfigError(
                "time-decay embeddings are auxiliary-only and cannot be used as standalone node features; "
                "pass --concat-with FEATURES"
            )
        return f"{Path(args.concat_with).stem}+timedecay"
    if args.method == "llm":
        if len(cfg.llm.models) != 1:
            raise ConfigError(f"featurize --method llm takes exactly one --model, got {len(cfg.llm.models)}")
        return _slug(cfg.llm.models[0])
    return args.method


def cmd_featurize(args: argparse.Namespace, cfg: ExperimentConfig) -> int:
    method = args.method
    name = _feature_name(args, cfg)
    output = args.output or cfg.paths.out / "features" / f"{name}.tsv"

    inputs: dict[str, str] = {}
    if cfg.paths.split_dir is not None and Path(cfg.paths.split_dir).exists():
        inputs["split"] = sha256_tree(_split_files(cfg.paths.split_dir))
    sources = {"vocab": cfg.paths.vocab, "edges": _opt(args, "edges"), "concat_with": _opt(args, "concat_with")}
    for key, path in sources.items():
        if path is not None and Path(path).exists():
            inputs[key] = sha256_file(path)
    params = {
        "method": method,
        "master_seed": cfg.master_seed,
        "walk": cfg.walk.model_dump(),
        "skipgram": cfg.skipgram.model_dump(),
        "time_decay": cfg.time_decay.model_dump(by_alias=True),
        "llm": cfg.llm.model_dump(exclude={"fixtures_only"}),
        "split": cfg.split.model_dump() if cfg.split else None,
        "l2_normalize": args.l2_normalize,
        "output": str(output),
    }
    store = ManifestStore(cfg.paths.out, cfg.config_hash())
    dump = _opt(args, "dump_coordinates")
    if store.is_fresh(f"features/{name}", inputs, params) and (dump is None or Path(dump).exists()):
        logger.info("Reusing %s features in %s", method, output)
        return 0

    if method == "timedecay":
        emb = _featurize_time_decay(args, cfg)
    elif method == "llm":
        emb = _featurize_llm(args, cfg)
    else:
        emb = _featurize_graph(args, cfg, method)
    if args.l2_normalize and method != "llm":
        emb = emb.l2_normalized()

    write_embedding(emb, output)
    logger.info("Wrote %d x %d %s features to %s", emb.n, emb.dim, method, output)
    store.record(f"features/{name}", "embedding", output, inputs, params)
    return 0


def cmd_merge(args: argparse.Namespace, cfg: ExperimentConfig) -> int:
    method = args.method
    if method == "summarize":
        vocab = load_vocab(_require(cfg.paths.vocab, "--vocab"))
        models = sorted(cfg.llm.models)
        if len(models) < 2:
            raise ConfigError("summarize needs at least two --model entries")
        summarizer_id = _require(cfg.llm.summarizer, "--summarizer")

        async def run() -> EmbeddingMatrix:
            async with http_client_factory() as http:
                generators, embedder = _llm_clients(cfg, models, http, cfg.skipgram.dim)
                (summarizer,), _ = _llm_clients(cfg, [summarizer_id], http, cfg.skipgram.dim)
                return await summarize_vocab(summarizer, generators, embedder, vocab.concepts, progress=_progress(args))

        merged = asyncio.run(run())
    elif method == "select":
        per_model: dict[str, EmbeddingMatrix] = {}
        for entry in args.inputs:
            name, path = _named_path(entry)
            if name is None:
                raise ConfigError(f"select inputs must be MODEL=PATH, got {entry!r}")
            per_model[name] = read_embedding(path, source=name)
        selection = read_selection(_require(args.selection, "--selection"))
        try:
            merged = replay_selection(selection, per_model)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    else:
        if len(args.inputs) < 2:
            raise ConfigError(f"{method} needs at least two --inputs")
        sources = [read_embedding(_named_path(entry)[1]) for entry in args.inputs]
        try:
            merged = pool_embeddings(sources, method)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    output = args.output or cfg.paths.out / "features" / f"{method}.tsv"
    write_embedding(merged, output)
    logger.info("Wrote %d x %d %s features to %s", merged.n, merged.dim, method, output)
    inputs = {entry: sha256_file(_named_path(entry)[1]) for entry in args.inputs}
    ManifestStore(cfg.paths.out, cfg.config_hash()).record(
        f"features/{output.stem}", "embedding", output, inputs, {"method": method, "models": cfg.llm.models}
    )
    return 0


def _recipes(args: argparse.Namespace, cfg: ExperimentConfig) -> list[FeatureRecipe]:
    recipes = list(cfg.features)
    for entry in args.features:
        name, path = _named_path(entry)
        try:
            recipes.append(FeatureRecipe(name=name or path.stem, sources=[path], concat_with=args.concat_with))
        except ValidationError as exc:
            raise ConfigError(str(exc)) from exc
    if not recipes:
        raise ConfigError("no feature sets given (use --features NAME=PATH or [[features]] in the config)")
    names = [r.name for r in recipes]
    if len(set(names)) != len(names):
        raise ConfigError(f"feature set names must be unique, got {names}")
    return recipes


def cmd_train_eval(args: argparse.Namespace, cfg: ExperimentConfig) -> int:
    split_dir = _require(cfg.paths.split_dir, "--split")
    recipes = _recipes(args, cfg)
    cfg = cfg.model_copy(update={"features": recipes})
    cfg.check_paths()

    split = read_split(split_dir)
    feature_sets = [build_feature_set(recipe) for recipe in recipes]
    for feature in feature_sets:
        if feature.matrix.n != split.n:
            raise ConfigError(f"feature set {feature.name} has {feature.matrix.n} rows, the split has {split.n} nodes")

    out = cfg.paths.out
    store = ManifestStore(out, cfg.config_hash())
    runner = GridRunner(
        split, sha256_tree(_split_files(split_dir)), feature_sets, out, store,
        workers=cfg.workers, master_seed=cfg.master_seed,
    )
    runs = runner.run(grid_cells(cfg.models, [f.name for f in feature_sets], cfg.seeds))
    reports = group_reports(runs)
    write_report(reports, out)
    (out / "eval_summary.json").write_text(
        json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    store.save()
    failed = sum(1 for run in runs if run.status != "completed")
    if failed:
        logger.warning("%d of %d cells failed; see report.md", failed, len(runs))
    logger.info("Wrote %s", out / "report.md")
    return 0


def cmd_report(args: argparse.Namespace, cfg: ExperimentConfig) -> int:
    runs = collect_runs(cfg.paths.out)
    if not runs:
        raise MissingFileError(f"no metrics.json files under {cfg.paths.out}", path=str(cfg.paths.out))
    md_path, _ = write_report(group_reports(runs), cfg.paths.out)
    logger.info("Wrote %s", md_path)
    return 0


# ---------------------------------------------------------------------------


def main(argv: Sequence[str] | None = None) -> int:
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    configure_logging(args.verbose, args.quiet)

    try:
        cfg = experiment_config(args)
        return args.handler(args, cfg)
    except (ConfigError, MissingFileError) as exc:
        logger.error("%s", exc)
        return 2
    except QclpError as exc:
        logger.error("%s", exc)
        return 1
    except Exception:
        logger.exception("Unexpected failure in %s", args.command)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
