"""LLM-generated concept features.

A chat model answers one question per concept, a text-embedding model turns
the answer into a vector, and both steps are cached on disk under the
SHA-256 of ``model_id`` and the request text. In fixture-only mode the cache
is the only source and a miss is an error; no request ever leaves the process.
"""

from __future__ import annotations

import asyncio
import hashlib
import json
import logging
import os
import tempfile
import threading
from collections.abc import Mapping, Sequence
from datetime import UTC, datetime
from pathlib import Path
from typing import Any, Literal

import httpx
import numpy as np
from pydantic import BaseModel, ConfigDict
from tqdm.asyncio import tqdm_asyncio

from .config import LlmClientConfig
from .embedding import EmbeddingMatrix
from .errors import FixtureMissingError, TransportError
from .provider_comm import parse_text, parse_vector, post_with_retries
from .registry import AdapterKind, ProviderRegistry

logger = logging.getLogger(__name__)

FEATURE_PROMPT = "What are the features of {concept} in quantum computing?"
SUMMARY_PROMPT = "Summarize this text about the features of {concept}. Text: {text}"

PoolMethod = Literal["mean_pool", "max_pool"]


class FeatureText(BaseModel):
    model_config = ConfigDict(frozen=True)

    concept: str
    model_id: str
    prompt: str
    text: str
    fetched_at: datetime


def build_prompt(concept: str) -> str:
    if not concept or not concept.strip():
        raise ValueError("concept must be a non-empty string")
    return FEATURE_PROMPT.format(concept=concept)


def build_summary_prompt(concept: str, texts: Sequence[str]) -> str:
    if not concept or not concept.strip():
        raise ValueError("concept must be a non-empty string")
    if len(texts) < 2:
        raise ValueError(f"summarizing needs at least two texts, got {len(texts)}")
    return SUMMARY_PROMPT.format(concept=concept, text="\n\n".join(texts))


def cache_key(model_id: str, payload: str) -> str:
    return hashlib.sha256(f"{model_id}\x00{payload}".encode("utf-8")).hexdigest()


class FeatureCache:
    """One JSON file per request under ``root``; writes are atomic and serialised per key."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    def path(self, key: str) -> Path:
        return self.root / f"{key}.json"

    def _lock(self, key: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(key, threading.Lock())

    def read(self, key: str) -> dict[str, Any] | None:
        path = self.path(key)
        if not path.exists():
            return None
        with self._lock(key):
            try:
                return json.loads(path.read_text(encoding="utf-8"))
            except json.JSONDecodeError:
                logger.warning("Ignoring unreadable cache entry %s", path)
                return None

    def write(self, key: str, record: Mapping[str, Any]) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.path(key)
        body = json.dumps(record, sort_keys=True, ensure_ascii=False)
        with self._lock(key):
            fd, tmp = tempfile.mkstemp(dir=self.root, prefix=f".{key}.", suffix=".tmp")
            try:
                with os.fdopen(fd, "w", encoding="utf-8") as fh:
                    fh.write(body)
                os.replace(tmp, path)
            except BaseException:
                Path(tmp).unlink(missing_ok=True)
                raise
        return path


class LlmClient:
    """Cached access to one chat or embedding model behind a provider adapter."""

    def __init__(
        self,
        config: LlmClientConfig,
        cache: FeatureCache,
        *,
        http_client: httpx.AsyncClient | None = None,
        fixtures_only: bool = False,
        registry: ProviderRegistry | None = None,
    ):
        self.config = config
        self.cache = cache
        self.fixtures_only = fixtures_only
        self.adapter = (registry or ProviderRegistry()).get(config.provider)
        self._http_client = http_client
        self._owns_client = http_client is None
        self._semaphore: asyncio.Semaphore | None = None
        self._loop: asyncio.AbstractEventLoop | None = None
        self.hits = 0
        self.misses = 0

    @property
    def model_id(self) -> str:
        return self.config.model_id

    async def __aenter__(self) -> LlmClient:
        return self

    async def __aexit__(self, *exc: object) -> None:
        await self.aclose()

    async def aclose(self) -> None:
        if self._owns_client and self._http_client is not None:
            await self._http_client.aclose()
            self._http_client = None

    def _require(self, kind: AdapterKind) -> None:
        if self.adapter.kind != kind:
            raise ValueError(f"model {self.model_id} uses {self.adapter.kind} adapter '{self.adapter.name}', not {kind}")

    async def _fetch(self, text: str, key: str, what: str) -> Any:
        if self.fixtures_only:
            raise FixtureMissingError(key, what)
        if self._http_client is None:
            self._http_client = httpx.AsyncClient()
        loop = asyncio.get_running_loop()
        if self._semaphore is None or self._loop is not loop:
            self._semaphore, self._loop = asyncio.Semaphore(self.config.rate_limit), loop
        async with self._semaphore:
            logger.debug("Requesting %s from %s", what, self.model_id)
            return await post_with_retries(
                adapter=self.adapter, config=self.config, text=text, http_client=self._http_client
            )

    async def complete(self, prompt: str, *, concept: str) -> FeatureText:
        """Answer ``prompt`` with the chat model, consulting the cache first."""

        self._require("chat")
        key = cache_key(self.model_id, prompt)
        cached = self.cache.read(key)
        if cached is not None:
            self.hits += 1
            return FeatureText.model_validate(cached)

        self.misses += 1
        payload = await self._fetch(prompt, key, f"{self.model_id} answer to {prompt!r}")
        try:
            text = parse_text(self.adapter, payload)
        except ValueError as exc:
            raise TransportError(f"unusable response from {self.model_id}: {exc}") from exc
        feature = FeatureText(
            concept=concept, model_id=self.model_id, prompt=prompt, text=text, fetched_at=datetime.now(UTC)
        )
        self.cache.write(key, feature.model_dump(mode="json"))
        return feature

    async def generate_feature_text(self, concept: str) -> FeatureText:
        return await self.complete(build_prompt(concept), concept=concept)

    async def summarize_merge(self, concept: str, texts: Sequence[FeatureText]) -> FeatureText:
        """Summarize several models' answers; inputs are joined in ascending model id order."""

        ordered = sorted(texts, key=lambda item: item.model_id)
        prompt = build_summary_prompt(concept, [item.text for item in ordered])
        return await self.complete(prompt, concept=concept)

    async def embed_text(self, text: str) -> np.ndarray:
        self._require("embedding")
        if not text:
            raise ValueError("cannot embed empty text")
        key = cache_key(self.model_id, text)
        cached = self.cache.read(key)
        if cached is not None and len(cached.get("vector", ())) == self.config.embed_dim:
            self.hits += 1
            return np.asarray(cached["vector"], dtype=np.float64)
        if cached is not None:
            logger.warning(
                "Cached %s vector has %d dimensions, expected %d; fetching again",
                self.model_id, len(cached.get("vector", ())), self.config.embed_dim,
            )

        self.misses += 1
        payload = await self._fetch(text, key, f"{self.model_id} embedding of {text[:40]!r}")
        try:
            vector = parse_vector(self.adapter, payload)
        except ValueError as exc:
            raise TransportError(f"unusable response from {self.model_id}: {exc}") from exc
        if len(vector) != self.config.embed_dim:
            raise TransportError(f"{self.model_id} returned {len(vector)} dimensions, expected {self.config.embed_dim}")
        self.cache.write(
            key,
            {
                "model_id": self.model_id,
                "text": text,
                "vector": vector,
                "fetched_at": datetime.now(UTC).isoformat(),
            },
        )
        return np.asarray(vector, dtype=np.float64)


async def _gather(coros: Sequence[Any], *, desc: str, progress: bool) -> list[Any]:
    return await tqdm_asyncio.gather(*coros, desc=desc, disable=not progress, leave=False)


async def generate_all(client: LlmClient, concepts: Sequence[str], *, progress: bool = False) -> list[FeatureText]:
    texts = await _gather(
        [client.generate_feature_text(c) for c in concepts], desc=f"texts {client.model_id}", progress=progress
    )
    logger.info("Feature texts from %s: %d cached, %d fetched", client.model_id, client.hits, client.misses)
    return texts


async def embed_all(embedder: LlmClient, texts: Sequence[FeatureText], *, progress: bool = False) -> np.ndarray:
    vectors = await _gather(
        [embedder.embed_text(t.text) for t in texts], desc=f"embed {embedder.model_id}", progress=progress
    )
    return np.vstack(vectors) if vectors else np.empty((0, embedder.config.embed_dim))


async def featurize_vocab(
    generator: LlmClient,
    embedder: LlmClient,
    concepts: Sequence[str],
    *,
    l2_normalize: bool = False,
    progress: bool = False,
) -> EmbeddingMatrix:
    """Generate and embed feature text for every concept; rows follow ``concepts`` order."""

    texts = await generate_all(generator, concepts, progress=progress)
    emb = EmbeddingMatrix(await embed_all(embedder, texts, progress=progress), generator.model_id)
    return emb.l2_normalized() if l2_normalize else emb


async def summarize_vocab(
    summarizer: LlmClient,
    generators: Sequence[LlmClient],
    embedder: LlmClient,
    concepts: Sequence[str],
    *,
    progress: bool = False,
) -> EmbeddingMatrix:
    """Embed one summary per concept of the answers every generator gave."""

    per_model = [await generate_all(g, concepts, progress=progress) for g in generators]
    summaries = await _gather(
        [summarizer.summarize_merge(c, [texts[i] for texts in per_model]) for i, c in enumerate(concepts)],
        desc="summaries",
        progress=progress,
    )
    return EmbeddingMatrix(await embed_all(embedder, summaries, progress=progress), "merged")


def _stack(vectors: Sequence[np.ndarray]) -> np.ndarray:
    if not vectors:
        raise ValueError("cannot pool an empty list")
    arrays = [np.asarray(v, dtype=np.float64) for v in vectors]
    shape = arrays[0].shape
    for arr in arrays[1:]:
        if arr.shape != shape:
            raise ValueError(f"cannot pool shapes {shape} and {arr.shape}")
    return np.stack(arrays)


def mean_pool(vectors: Sequence[np.ndarray]) -> np.ndarray:
    return _stack(vectors).mean(axis=0)


def max_pool(vectors: Sequence[np.ndarray]) -> np.ndarray:
    return _stack(vectors).max(axis=0)


def pool_embeddings(embeddings: Sequence[EmbeddingMatrix], method: PoolMethod) -> EmbeddingMatrix:
    """Row-wise pooling of several models' matrices."""

    pool = mean_pool if method == "mean_pool" else max_pool
    return EmbeddingMatrix(pool([e.vectors for e in embeddings]), "merged")


def replay_selection(selection: Sequence[str], per_model: Mapping[str, EmbeddingMatrix]) -> EmbeddingMatrix:
    """Row i comes from the model chosen for concept i by an external selector."""

    if not per_model:
        raise ValueError("no per-model embeddings to select from")
    sizes = {e.n for e in per_model.values()}
    dims = {e.dim for e in per_model.values()}
    if len(sizes) != 1 or len(dims) != 1:
        raise ValueError("per-model embeddings disagree in shape")
    (n,) = sizes
    if len(selection) != n:
        raise ValueError(f"selection has {len(selection)} entries for {n} concepts")
    unknown = sorted(set(selection) - set(per_model))
    if unknown:
        raise ValueError(f"selection names unknown model(s): {', '.join(unknown)}")
    rows = [per_model[model_id].vectors[i] for i, model_id in enumerate(selection)]
    return EmbeddingMatrix(np.vstack(rows), "merged")


def read_selection(path: Path) -> list[str]:
    """One model id per line, in concept id order."""

    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [line.strip() for line in lines if line.strip()]
