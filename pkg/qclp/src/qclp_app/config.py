"""Typed configuration models and TOML/env loading."""

from __future__ import annotations

import hashlib
import json
import os
import tomllib
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError

DEFAULT_API_KEY_ENV = "QCLP_LLM_API_KEY"
CACHE_DIR_ENV = "QCLP_CACHE_DIR"

Arch = Literal["mlp", "gcn", "sage", "gae", "ncn"]
MergeMethod = Literal["none", "mean_pool", "max_pool", "summarize"]


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)


class SplitSpec(_Frozen):
    train_end: int
    val_end: int
    test_end: int

    @model_validator(mode="after")
    def _ordered(self) -> SplitSpec:
        if not self.train_end < self.val_end <= self.test_end:
            raise ValueError(
                f"split years must satisfy train_end < val_end <= test_end, got "
                f"{self.train_end}, {self.val_end}, {self.test_end}"
            )
        return self


class WalkConfig(_Frozen):
    num_walks: int = Field(10, ge=1)
    walk_len: int = Field(80, ge=2)
    p: float = Field(1.0, gt=0)
    q: float = Field(1.0, gt=0)
    seed: int = 0


class SkipGramConfig(_Frozen):
    dim: int = Field(768, ge=1)
    window: int = Field(10, ge=1)
    neg_k: int = Field(5, ge=1)
    epochs: int = Field(5, ge=0)
    lr: float = Field(0.025, gt=0)
    seed: int = 0


class LlmClientConfig(_Frozen):
    endpoint: str
    model_id: str
    provider: str = "openai-chat"
    max_tokens: int = Field(512, ge=1)
    timeout: float = Field(60.0, gt=0)
    max_retries: int = Field(3, ge=0)
    rate_limit: int = Field(4, ge=1)
    api_key_env: str = DEFAULT_API_KEY_ENV
    embed_dim: int = Field(768, ge=1)
    backoff_base: float = Field(1.0, ge=0)
    backoff_max: float = Field(30.0, ge=0)

    def api_key(self) -> str | None:
        return os.getenv(self.api_key_env)


class TimeDecayConfig(_Frozen):
    lam: float = Field(0.3, ge=0, alias="lambda")
    ref_year: int
    d_td: int = Field(768, ge=1)
    years: tuple[int, int]
    sv_exponent: float = Field(0.5, ge=0)
    alpha: float | None = Field(None, gt=0)

    @model_validator(mode="after")
    def _years(self) -> TimeDecayConfig:
        start, end = self.years
        if start > end:
            raise ValueError(f"year range is empty: {start}..{end}")
        if end > self.ref_year:
            raise ValueError(f"year {end} is after the reference year {self.ref_year}")
        return self

    def check_no_leakage(self, spec: SplitSpec) -> None:
        if self.years[1] > spec.train_end or self.ref_year > spec.train_end:
            raise ConfigError(
                f"time-decay years {self.years} / ref_year {self.ref_year} reach past train_end {spec.train_end}"
            )


class TimeDecaySettings(_Frozen):
    """The ``[time_decay]`` table; years default to the training window."""

    lam: float = Field(0.3, ge=0, alias="lambda")
    d_td: int = Field(768, ge=1)
    sv_exponent: float = Field(0.5, ge=0)
    alpha: float | None = Field(None, gt=0)
    ref_year: int | None = None
    years: tuple[int, int] | None = None

    def resolve(self, spec: SplitSpec, first_year: int) -> TimeDecayConfig:
        ref_year = self.ref_year if self.ref_year is not None else spec.train_end
        years = self.years if self.years is not None else (min(first_year, spec.train_end), spec.train_end)
        try:
            cfg = TimeDecayConfig(
                lam=self.lam, ref_year=ref_year, d_td=self.d_td, years=years,
                sv_exponent=self.sv_exponent, alpha=self.alpha,
            )
        except ValidationError as exc:
            raise ConfigError(str(exc)) from exc
        cfg.check_no_leakage(spec)
        return cfg


FIXTURE_ENDPOINT = "http://fixtures.invalid"


class LlmSettings(_Frozen):
    """The ``[llm]`` table: one chat endpoint, one embedding endpoint."""

    endpoint: str | None = None
    models: list[str] = Field(default_factory=list)
    provider: str = "openai-chat"
    max_tokens: int = Field(512, ge=1)
    timeout: float = Field(60.0, gt=0)
    max_retries: int = Field(3, ge=0)
    rate_limit: int = Field(4, ge=1)
    api_key_env: str = DEFAULT_API_KEY_ENV
    embed_endpoint: str | None = None
    embedder: str | None = None
    embed_provider: str = "openai-embeddings"
    summarizer: str | None = None
    fixtures_only: bool = False
    providers_file: Path | None = None

    def _endpoint(self, value: str | None, what: str) -> str:
        if value:
            return value
        if self.fixtures_only:
            return FIXTURE_ENDPOINT
        raise ConfigError(f"no {what} endpoint configured (use --endpoint or [llm] endpoint)")

    def generator(self, model_id: str) -> LlmClientConfig:
        return LlmClientConfig(
            endpoint=self._endpoint(self.endpoint, "LLM"),
            model_id=model_id,
            provider=self.provider,
            max_tokens=self.max_tokens,
            timeout=self.timeout,
            max_retries=self.max_retries,
            rate_limit=self.rate_limit,
            api_key_env=self.api_key_env,
        )

    def embedder_config(self, dim: int) -> LlmClientConfig:
        if not self.embedder:
            raise ConfigError("no embedding model configured (use --embedder or [llm] embedder)")
        return LlmClientConfig(
            endpoint=self._endpoint(self.embed_endpoint or self.endpoint, "embedding"),
            model_id=self.embedder,
            provider=self.embed_provider,
            timeout=self.timeout,
            max_retries=self.max_retries,
            rate_limit=self.rate_limit,
            api_key_env=self.api_key_env,
            embed_dim=dim,
        )


class ModelConfig(_Frozen):
    arch: Arch = "gcn"
    layers: int = Field(2, ge=1)
    hidden: int = Field(256, ge=1)
    dropout: float = Field(0.5, ge=0, lt=1)
    lr: float = Field(1e-3, gt=0)
    epochs: int = Field(500, ge=0)
    patience: int = Field(20, ge=1)
    seed: int = 0
    activation: Literal["relu", "linear"] = "relu"
    batch_size: int = Field(4096, ge=1)


class PathsConfig(_Frozen):
    corpus: Path | None = None
    vocab: Path | None = None
    cache: Path | None = None
    split_dir: Path | None = None
    out: Path = Path("runs")


class FeatureRecipe(_Frozen):
    name: str
    sources: list[Path] = Field(min_length=1)
    merge: MergeMethod = "none"
    concat_with: Path | None = None

    @model_validator(mode="after")
    def _merge_needs_sources(self) -> FeatureRecipe:
        if self.merge == "none" and len(self.sources) != 1:
            raise ValueError(f"feature '{self.name}' lists {len(self.sources)} sources but no merge method")
        if self.merge == "summarize":
            raise ValueError("summarize merging happens at featurize time; point the recipe at its embedding file")
        return self


class ExperimentConfig(_Frozen):
    paths: PathsConfig = PathsConfig()
    split: SplitSpec | None = None
    features: list[FeatureRecipe] = Field(default_factory=list)
    walk: WalkConfig = WalkConfig()
    skipgram: SkipGramConfig = SkipGramConfig()
    llm: LlmSettings = LlmSettings()
    time_decay: TimeDecaySettings = TimeDecaySettings()
    models: list[ModelConfig] = Field(default_factory=lambda: [ModelConfig()])
    seeds: list[int] = Field(default_factory=lambda: list(range(10)), min_length=1)
    master_seed: int = 0
    workers: int = Field(1, ge=1)

    def check_paths(self) -> None:
        """Raise ConfigError naming every referenced file that does not exist."""

        referenced: list[Path] = []
        for value in (self.paths.corpus, self.paths.vocab, self.paths.split_dir):
            if value is not None:
                referenced.append(value)
        for recipe in self.features:
            referenced.extend(recipe.sources)
            if recipe.concat_with is not None:
                referenced.append(recipe.concat_with)
        missing = [str(p) for p in referenced if not p.exists()]
        if missing:
            raise ConfigError(f"missing input path(s): {', '.join(missing)}")

    def config_hash(self) -> str:
        payload = json.dumps(self.model_dump(mode="json", by_alias=True), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def default_cache_dir() -> Path:
    configured = os.getenv(CACHE_DIR_ENV)
    if configured:
        return Path(configured)
    return Path.home() / ".cache" / "qclp"


def _deep_merge(base: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    """Overlay ``overrides`` on ``base``; ``None`` means "not given" at any depth."""

    merged = dict(base)
    for key, value in overrides.items():
        if value is None:
            continue
        if isinstance(value, dict):
            current = merged.get(key)
            merged[key] = _deep_merge(current if isinstance(current, dict) else {}, value)
        else:
            merged[key] = value
    return merged


def load_experiment_config(path: Path | None, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    """Read a TOML experiment file and apply CLI overrides on top (flags win)."""

    raw: dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from exc

    # [run] is a flat convenience section for scalars.
    run = raw.pop("run", {})
    raw.update({key: value for key, value in run.items()})
    # [model] holds one table; [[models]] holds several.
    if "model" in raw:
        raw.setdefault("models", [raw.pop("model")])

    merged = _deep_merge(raw, overrides or {})
    try:
        return ExperimentConfig.model_validate(merged)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
