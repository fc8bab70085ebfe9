"""Provider adapter registry.

An adapter describes one HTTP API shape as data: the URL suffix, a JSON
request template with ``$model`` / ``$text`` / ``$max_tokens`` placeholders,
the path to the answer inside the response, and how credentials are sent.
Supporting another provider means registering another adapter, not writing
another code path.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal

from .errors import ConfigError

logger = logging.getLogger(__name__)

AdapterKind = Literal["chat", "embedding"]
PathElement = str | int


@dataclass(frozen=True)
class ProviderAdapter:
    name: str
    kind: AdapterKind
    path: str
    request_template: dict[str, Any]
    response_path: tuple[PathElement, ...]
    auth_header: str = "Authorization"
    auth_prefix: str = "Bearer "
    extra_headers: dict[str, str] = field(default_factory=dict)

    def url(self, endpoint: str, model_id: str) -> str:
        return endpoint.rstrip("/") + self.path.replace("$model", model_id)

    def build_request(self, *, model_id: str, text: str, max_tokens: int) -> dict[str, Any]:
        values: dict[str, Any] = {"$model": model_id, "$text": text, "$max_tokens": max_tokens}

        def fill(node: Any) -> Any:
            if isinstance(node, dict):
                return {key: fill(value) for key, value in node.items()}
            if isinstance(node, list):
                return [fill(value) for value in node]
            if isinstance(node, str) and node in values:
                return values[node]
            return node

        return fill(self.request_template)

    def headers(self, api_key: str | None) -> dict[str, str]:
        headers = {"Content-Type": "application/json", **self.extra_headers}
        if api_key:
            headers[self.auth_header] = f"{self.auth_prefix}{api_key}"
        return headers

    def extract(self, payload: Any) -> Any:
        """Follow ``response_path`` into a decoded JSON response."""

        node = payload
        for step in self.response_path:
            try:
                node = node[step]
            except (KeyError, IndexError, TypeError) as exc:
                raise ValueError(f"response has no element {step!r} on path {self.response_path}") from exc
        return node


DEFAULT_ADAPTERS: tuple[ProviderAdapter, ...] = (
    ProviderAdapter(
        name="openai-chat",
        kind="chat",
        path="/chat/completions",
        request_template={
            "model": "$model",
            "messages": [{"role": "user", "content": "$text"}],
            "max_tokens": "$max_tokens",
        },
        response_path=("choices", 0, "message", "content"),
    ),
    ProviderAdapter(
        name="openai-embeddings",
        kind="embedding",
        path="/embeddings",
        request_template={"model": "$model", "input": "$text"},
        response_path=("data", 0, "embedding"),
    ),
    ProviderAdapter(
        name="ollama-chat",
        kind="chat",
        path="/api/chat",
        request_template={
            "model": "$model",
            "messages": [{"role": "user", "content": "$text"}],
            "stream": False,
            "options": {"num_predict": "$max_tokens"},
        },
        response_path=("message", "content"),
    ),
    ProviderAdapter(
        name="gemini-chat",
        kind="chat",
        path="/models/$model:generateContent",
        request_template={
            "contents": [{"parts": [{"text": "$text"}]}],
            "generationConfig": {"maxOutputTokens": "$max_tokens"},
        },
        response_path=("candidates", 0, "content", "parts", 0, "text"),
        auth_header="x-goog-api-key",
        auth_prefix="",
    ),
    ProviderAdapter(
        name="gemini-embedding",
        kind="embedding",
        path="/models/$model:embedContent",
        request_template={"content": {"parts": [{"text": "$text"}]}},
        response_path=("embedding", "values"),
        auth_header="x-goog-api-key",
        auth_prefix="",
    ),
)


class ProviderRegistry:
    """Keeps track of known provider adapters."""

    def __init__(self, adapters: tuple[ProviderAdapter, ...] = DEFAULT_ADAPTERS):
        self.adapters: dict[str, ProviderAdapter] = {adapter.name: adapter for adapter in adapters}

    def get(self, name: str, kind: AdapterKind | None = None) -> ProviderAdapter:
        adapter = self.adapters.get(name)
        if adapter is None:
            raise ConfigError(f"unknown provider '{name}'; known: {', '.join(sorted(self.adapters))}")
        if kind is not None and adapter.kind != kind:
            raise ConfigError(f"provider '{name}' is a {adapter.kind} adapter, expected {kind}")
        return adapter

    def register(self, adapter: ProviderAdapter) -> None:
        if adapter.name in self.adapters:
            logger.warning("Replacing provider adapter '%s'", adapter.name)
        self.adapters[adapter.name] = adapter

    def load_file(self, path: Path) -> None:
        """Register adapters from a JSON list of adapter objects."""

        try:
            entries = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read provider file {path}: {exc}") from exc
        for entry in entries:
            entry["response_path"] = tuple(entry["response_path"])
            self.register(ProviderAdapter(**entry))
