"""Sending requests to LLM and embedding providers and normalising their answers."""

from __future__ import annotations

import logging
from typing import Any

import httpx
from tenacity import AsyncRetrying, retry_if_exception, stop_after_attempt, wait_exponential

from .config import LlmClientConfig
from .errors import TransportError
from .registry import ProviderAdapter

logger = logging.getLogger(__name__)

RETRYABLE_STATUS: frozenset[int] = frozenset({408, 409, 425, 429, 500, 502, 503, 504})


def is_retryable(exc: BaseException) -> bool:
    if isinstance(exc, httpx.HTTPStatusError):
        return exc.response.status_code in RETRYABLE_STATUS
    return isinstance(exc, httpx.TransportError)


def parse_text(adapter: ProviderAdapter, payload: Any) -> str:
    """Pull the generated answer out of a chat response."""

    value = adapter.extract(payload)
    if isinstance(value, list):
        value = "\n".join(str(part) for part in value)
    if not isinstance(value, str):
        raise ValueError(f"expected text at {adapter.response_path}, got {type(value).__name__}")
    if not value.strip():
        raise ValueError("provider returned an empty answer")
    return value


def parse_vector(adapter: ProviderAdapter, payload: Any) -> list[float]:
    value = adapter.extract(payload)
    if not isinstance(value, list) or not all(isinstance(x, (int, float)) for x in value):
        raise ValueError(f"expected a list of numbers at {adapter.response_path}")
    return [float(x) for x in value]


async def post_with_retries(
    *,
    adapter: ProviderAdapter,
    config: LlmClientConfig,
    text: str,
    http_client: httpx.AsyncClient,
) -> Any:
    """POST one request, retrying 429/5xx and connection failures with exponential backoff."""

    url = adapter.url(config.endpoint, config.model_id)
    payload = adapter.build_request(model_id=config.model_id, text=text, max_tokens=config.max_tokens)
    headers = adapter.headers(config.api_key())

    retrying = AsyncRetrying(
        stop=stop_after_attempt(config.max_retries + 1),
        wait=wait_exponential(multiplier=config.backoff_base, max=config.backoff_max),
        retry=retry_if_exception(is_retryable),
        reraise=True,
    )
    try:
        async for attempt in retrying:
            with attempt:
                number = attempt.retry_state.attempt_number
                if number > 1:
                    logger.info("Retrying %s (attempt %d of %d)", url, number, config.max_retries + 1)
                response = await http_client.post(url, json=payload, headers=headers, timeout=config.timeout)
                response.raise_for_status()
                return response.json()
    except httpx.HTTPStatusError as exc:
        raise TransportError(
            f"{adapter.name} returned HTTP {exc.response.status_code} for model {config.model_id}"
        ) from exc
    except httpx.HTTPError as exc:
        raise TransportError(f"could not reach {url}: {exc}") from exc
    raise TransportError(f"no response from {url}")  # pragma: no cover
