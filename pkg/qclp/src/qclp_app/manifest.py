"""Run manifest: artifact checksums, provenance and reuse of unchanged work."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
from collections.abc import Mapping
from datetime import UTC, datetime
from pathlib import Path
from typing import Any

from pydantic import BaseModel, Field

from . import __version__

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def sha256_tree(paths: list[Path]) -> str:
    """Checksum of several files, order-independent by name."""

    digest = hashlib.sha256()
    for path in sorted(paths, key=str):
        digest.update(path.name.encode("utf-8") + b"\x00" + sha256_file(path).encode("ascii"))
    return digest.hexdigest()


def params_hash(params: Mapping[str, Any]) -> str:
    return hashlib.sha256(json.dumps(params, sort_keys=True, default=str).encode("utf-8")).hexdigest()


def _now() -> str:
    return datetime.now(UTC).isoformat()


class ArtifactRecord(BaseModel):
    kind: str
    path: str
    sha256: str
    inputs: dict[str, str] = Field(default_factory=dict)
    params_hash: str = ""
    created_at: str = Field(default_factory=_now)


class RunManifest(BaseModel):
    tool_version: str = __version__
    config_hash: str = ""
    created_at: str = Field(default_factory=_now)
    updated_at: str = Field(default_factory=_now)
    artifacts: dict[str, ArtifactRecord] = Field(default_factory=dict)


class ManifestStore:
    """Loads, updates and atomically saves ``manifest.json`` in one output directory."""

    def __init__(self, out_dir: Path, config_hash: str = ""):
        self.out_dir = Path(out_dir)
        self.path = self.out_dir / MANIFEST_NAME
        self._lock = threading.Lock()
        self.manifest = self._load()
        if config_hash:
            self.manifest.config_hash = config_hash

    def _load(self) -> RunManifest:
        if not self.path.exists():
            return RunManifest()
        try:
            return RunManifest.model_validate_json(self.path.read_text(encoding="utf-8"))
        except ValueError:
            logger.warning("Ignoring unreadable manifest %s", self.path)
            return RunManifest()

    def _relative(self, path: Path) -> str:
        path = Path(path)
        try:
            return str(path.resolve().relative_to(self.out_dir.resolve()))
        except ValueError:
            return str(path)

    def _resolve(self, stored: str) -> Path:
        path = Path(stored)
        return path if path.is_absolute() else self.out_dir / path

    def is_fresh(self, name: str, inputs: Mapping[str, str], params: Mapping[str, Any]) -> bool:
        """True when ``name`` was recorded with the same inputs and parameters and is unchanged on disk."""

        with self._lock:
            record = self.manifest.artifacts.get(name)
        if record is None or record.inputs != dict(inputs) or record.params_hash != params_hash(params):
            return False
        path = self._resolve(record.path)
        return path.exists() and sha256_file(path) == record.sha256

    def artifact_path(self, name: str) -> Path | None:
        with self._lock:
            record = self.manifest.artifacts.get(name)
        return self._resolve(record.path) if record else None

    def record(self, name: str, kind: str, path: Path, inputs: Mapping[str, str], params: Mapping[str, Any]) -> ArtifactRecord:
        entry = ArtifactRecord(
            kind=kind,
            path=self._relative(path),
            sha256=sha256_file(path),
            inputs=dict(inputs),
            params_hash=params_hash(params),
        )
        with self._lock:
            self.manifest.artifacts[name] = entry
            self._save()
        return entry

    def _save(self) -> None:
        self.manifest.updated_at = _now()
        self.out_dir.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=self.out_dir, prefix=".manifest.", suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(self.manifest.model_dump_json(indent=2) + "\n")
        os.replace(tmp, self.path)

    def save(self) -> Path:
        with self._lock:
            self._save()
        return self.path
