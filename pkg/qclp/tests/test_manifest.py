from __future__ import annotations

from qclp_app.manifest import ManifestStore, sha256_file, sha256_tree


def test_recorded_artifact_is_fresh_until_something_changes(tmp_path):
    artifact = tmp_path / "features.tsv"
    artifact.write_text("0\t1.0\n", encoding="utf-8")
    store = ManifestStore(tmp_path, "cfg")
    store.record("features/x", "embedding", artifact, {"split": "abc"}, {"dim": 8})

    reloaded = ManifestStore(tmp_path)
    assert reloaded.manifest.config_hash == "cfg"
    assert reloaded.artifact_path("features/x") == tmp_path / "features.tsv"
    assert reloaded.is_fresh("features/x", {"split": "abc"}, {"dim": 8})
    assert not reloaded.is_fresh("features/x", {"split": "other"}, {"dim": 8})
    assert not reloaded.is_fresh("features/x", {"split": "abc"}, {"dim": 16})
    assert not reloaded.is_fresh("features/y", {}, {})

    artifact.write_text("0\t2.0\n", encoding="utf-8")
    assert not reloaded.is_fresh("features/x", {"split": "abc"}, {"dim": 8})


def test_unreadable_manifest_starts_over(tmp_path):
    (tmp_path / "manifest.json").write_text("{not json", encoding="utf-8")
    store = ManifestStore(tmp_path)
    assert store.manifest.artifacts == {}
    assert store.save().exists()


def test_tree_checksum_ignores_argument_order(tmp_path):
    a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
    a.write_text("1\n", encoding="utf-8")
    b.write_text("2\n", encoding="utf-8")
    assert sha256_tree([a, b]) == sha256_tree([b, a])
    assert sha256_tree([a]) != sha256_file(a)
