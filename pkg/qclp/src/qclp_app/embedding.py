"""Node feature matrices and their on-disk formats (TSV and EMB1 binary)."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError, MissingFileError

BINARY_MAGIC = b"EMB1"
_BINARY_HEADER = struct.Struct("<4sII")

KNOWN_SOURCES = ("deepwalk", "line", "node2vec", "timedecay", "merged")


@dataclass(frozen=True)
class EmbeddingMatrix:
    """n x d float matrix of node features tagged with where it came from.

    ``source`` is an LLM model id or one of ``KNOWN_SOURCES``.
    """

    vectors: np.ndarray
    source: str

    def __post_init__(self) -> None:
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise ValueError(f"embedding matrix must be 2-D, got shape {vectors.shape}")
        object.__setattr__(self, "vectors", vectors)

    @property
    def n(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def l2_normalized(self) -> EmbeddingMatrix:
        norms = np.linalg.norm(self.vectors, axis=1, keepdims=True)
        return EmbeddingMatrix(self.vectors / np.where(norms > 0, norms, 1.0), self.source)


def concat_embeddings(a: EmbeddingMatrix, b: EmbeddingMatrix) -> EmbeddingMatrix:
    """Row-wise concatenation in node-id order; the result is tagged ``merged``."""

    if a.n != b.n:
        raise ValueError(f"cannot concatenate embeddings with {a.n} and {b.n} rows")
    return EmbeddingMatrix(np.hstack([a.vectors, b.vectors]), "merged")


def write_embedding_tsv(emb: EmbeddingMatrix, path: Path) -> Path:
    """Header ``node_id<TAB>d`` then one row per node; floats use repr so values round-trip."""

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"node_id\t{emb.dim}\n")
        for node_id, row in enumerate(emb.vectors):
            fh.write(str(node_id))
            for value in row:
                fh.write("\t" + repr(float(value)))
            fh.write("\n")
    return path


def read_embedding_tsv(path: Path, source: str | None = None) -> EmbeddingMatrix:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"embedding file not found: {path}", path=str(path))
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if len(header) != 2 or header[0] != "node_id" or not header[1].isdigit():
            raise InputError(f"bad embedding header in {path}: {header}", path=str(path), line=1)
        dim = int(header[1])
        rows: list[list[float]] = []
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            try:
                node_id = int(parts[0])
                row = [float(x) for x in parts[1:]]
            except ValueError as exc:
                raise InputError(
                    f"non-numeric value at line {line_no} of {path}", path=str(path), line=line_no
                ) from exc
            if node_id != len(rows) or len(row) != dim:
                raise InputError(f"malformed embedding row at line {line_no} of {path}", path=str(path), line=line_no)
            rows.append(row)
    vectors = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    return EmbeddingMatrix(vectors, source or path.stem)


def write_embedding_binary(emb: EmbeddingMatrix, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_BINARY_HEADER.pack(BINARY_MAGIC, emb.n, emb.dim))
        fh.write(emb.vectors.astype("<f4").tobytes())
    return path


def read_embedding_binary(path: Path, source: str | None = None) -> EmbeddingMatrix:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"embedding file not found: {path}", path=str(path))
    raw = path.read_bytes()
    if len(raw) < _BINARY_HEADER.size:
        raise InputError(f"truncated embedding file: {path}", path=str(path))
    magic, n, d = _BINARY_HEADER.unpack_from(raw)
    if magic != BINARY_MAGIC:
        raise InputError(f"bad magic {magic!r} in {path}", path=str(path))
    body = np.frombuffer(raw, dtype="<f4", offset=_BINARY_HEADER.size)
    if body.size != n * d:
        raise InputError(f"expected {n * d} floats in {path}, found {body.size}", path=str(path))
    return EmbeddingMatrix(body.reshape(n, d).astype(np.float64), source or path.stem)


def write_embedding(emb: EmbeddingMatrix, path: Path) -> Path:
    if Path(path).suffix == ".emb":
        return write_embedding_binary(emb, path)
    return write_embedding_tsv(emb, path)


def read_embedding(path: Path, source: str | None = None) -> EmbeddingMatrix:
    if Path(path).suffix == ".emb":
        return read_embedding_binary(path, source)
    return read_embedding_tsv(path, source)
