from __future__ import annotations

import numpy as np
import pytest

from qclp_app.embedding import (
    BINARY_MAGIC,
    EmbeddingMatrix,
    read_embedding,
    read_embedding_tsv,
    write_embedding,
)
from qclp_app.errors import InputError, MissingFileError


@pytest.fixture
def matrix() -> EmbeddingMatrix:
    rng = np.random.default_rng(0)
    return EmbeddingMatrix(rng.standard_normal((5, 3)), "deepwalk")


def test_tsv_keeps_values_exactly(tmp_path, matrix):
    path = write_embedding(matrix, tmp_path / "deepwalk.tsv")
    header = path.read_text(encoding="utf-8").splitlines()[0]
    assert header == "node_id\t3"
    loaded = read_embedding(path)
    assert np.array_equal(loaded.vectors, matrix.vectors)
    assert loaded.source == "deepwalk"


def test_binary_format_is_float32(tmp_path, matrix):
    path = write_embedding(matrix, tmp_path / "x.emb")
    raw = path.read_bytes()
    assert raw[:4] == BINARY_MAGIC
    assert len(raw) == 12 + 5 * 3 * 4
    loaded = read_embedding(path, source="deepwalk")
    assert np.allclose(loaded.vectors, matrix.vectors, atol=1e-6)


def test_bad_files(tmp_path):
    with pytest.raises(MissingFileError):
        read_embedding(tmp_path / "absent.tsv")

    bad = tmp_path / "bad.tsv"
    bad.write_text("node_id\t2\n0\t1.0\t2.0\n2\t1.0\t2.0\n", encoding="utf-8")
    with pytest.raises(InputError, match="line 3"):
        read_embedding_tsv(bad)


@pytest.mark.parametrize(
    "body, line",
    [
        ("node_id\tsix\n", 1),
        ("node_id\t2\nzero\t1.0\t2.0\n", 2),
        ("node_id\t2\n0\t1.0\t2.0\n1\t1.0\tnope\n", 3),
    ],
)
def test_non_numeric_tsv_fields_name_the_line(tmp_path, body, line):
    path = tmp_path / "bad.tsv"
    path.write_text(body, encoding="utf-8")
    with pytest.raises(InputError) as info:
        read_embedding_tsv(path)
    assert info.value.line == line
    assert info.value.path == str(path)


def test_bad_binary_magic(tmp_path):
    wrong_magic = tmp_path / "bad.emb"
    wrong_magic.write_bytes(b"XXXX" + bytes(8))
    with pytest.raises(InputError, match="magic"):
        read_embedding(wrong_magic)


def test_l2_normalisation_leaves_zero_rows():
    emb = EmbeddingMatrix(np.array([[3.0, 4.0], [0.0, 0.0]]), "m").l2_normalized()
    assert emb.vectors.tolist() == [[0.6, 0.8], [0.0, 0.0]]


def test_matrix_must_be_two_dimensional():
    with pytest.raises(ValueError):
        EmbeddingMatrix(np.zeros(3), "m")
