from __future__ import annotations

import numpy as np
import pytest

from qclp_app.config import ModelConfig
from qclp_app.errors import InputError, MissingFileError
from qclp_app.predictors import (
    GradientInstance,
    GraphContext,
    ModelParams,
    encode,
    gradient_check,
    gradient_check_report,
    init_params,
    load_checkpoint,
    loss_and_grad,
    normalized_adjacency,
    predict,
    save_checkpoint,
    score,
    score_pairs,
)

ARCHS = ("mlp", "gcn", "sage", "gae", "ncn")


def small_config(arch: str, **overrides) -> ModelConfig:
    values = {"arch": arch, "layers": 2, "hidden": 4, "dropout": 0.0}
    values.update(overrides)
    return ModelConfig(**values)


def random_graph(n: int = 10, seed: int = 0) -> tuple[np.ndarray, GraphContext]:
    rng = np.random.default_rng(seed)
    iu, iv = np.triu_indices(n, k=1)
    keep = rng.random(iu.shape[0]) < 0.35
    edges = np.stack([iu[keep], iv[keep]], axis=1)
    return edges, GraphContext.from_edges(edges, n)


def test_normalized_adjacency_small_cases():
    assert normalized_adjacency(np.array([[0, 1]]), 2).toarray() == pytest.approx(np.full((2, 2), 0.5))
    assert normalized_adjacency(np.empty((0, 2), dtype=np.int64), 1).toarray().tolist() == [[1.0]]
    edges, _ = random_graph()
    a = normalized_adjacency(edges, 10).toarray()
    assert np.allclose(a, a.T)


def test_mlp_identity_layer_is_relu():
    x = np.array([[1.0, -2.0], [-0.5, 3.0]])
    params = init_params(small_config("mlp", layers=1, hidden=2), 2)
    params["enc.W0"] = np.eye(2)
    params["enc.b0"] = np.zeros(2)
    assert np.array_equal(encode("mlp", params, x, None), np.maximum(x, 0))


def test_gcn_without_edges_reduces_to_mlp():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((5, 3))
    params = init_params(small_config("gcn"), 3)
    ctx = GraphContext.from_edges(np.empty((0, 2), dtype=np.int64), 5)
    assert np.allclose(encode("gcn", params, x, ctx), encode("mlp", params, x, None))


def test_sage_isolated_node_sees_zero_neighbourhood():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((4, 3))
    params = init_params(small_config("sage", layers=1), 3)
    ctx = GraphContext.from_edges(np.array([[0, 1], [1, 2]]), 4)
    h = encode("sage", params, x, ctx)
    expected = np.maximum(np.concatenate([x[3], np.zeros(3)]) @ params["enc.W0"] + params["enc.b0"], 0)
    assert np.allclose(h[3], expected)


def test_gae_zero_representations_score_half():
    params = init_params(small_config("gae"), 3)
    ctx = GraphContext.from_edges(np.array([[0, 1]]), 3)
    assert score("gae", params, np.zeros((3, 4)), 0, 1, ctx) == 0.0
    assert predict("gae", params, np.zeros((3, 3)), ctx, np.array([[0, 2]])) == pytest.approx([0.5])


@pytest.mark.parametrize("arch", ARCHS)
def test_scores_are_symmetric(arch):
    edges, ctx = random_graph(seed=3)
    x = np.random.default_rng(3).standard_normal((10, 5))
    params = init_params(small_config(arch), 5)
    h = encode(arch, params, x, ctx)
    pairs = np.array([[0, 7], [2, 9], [4, 5]])
    assert np.allclose(score_pairs(arch, params, h, pairs, ctx), score_pairs(arch, params, h, pairs[:, ::-1], ctx))


def test_ncn_without_common_neighbours_pads_with_zeros():
    ctx = GraphContext.from_edges(np.array([[0, 1], [2, 3]]), 4)
    x = np.random.default_rng(4).standard_normal((4, 3))
    params = init_params(small_config("ncn"), 3)
    h = encode("ncn", params, x, ctx)
    z = np.concatenate([h[0] * h[2], np.zeros(4)])
    expected = np.maximum(z @ params["dec.W0"] + params["dec.b0"], 0) @ params["dec.w"] + params["dec.c"][0]
    assert score("ncn", params, h, 0, 2, ctx) == pytest.approx(expected)


@pytest.mark.parametrize("arch", ("gcn", "sage", "gae", "ncn"))
def test_encoders_are_permutation_equivariant(arch):
    n = 9
    edges, ctx = random_graph(n, seed=5)
    x = np.random.default_rng(5).standard_normal((n, 4))
    params = init_params(small_config(arch), 4)

    perm = np.random.default_rng(6).permutation(n)
    inverse = np.argsort(perm)
    permuted_ctx = GraphContext.from_edges(inverse[edges], n)
    h = encode(arch, params, x, ctx)
    h_perm = encode(arch, params, x[perm], permuted_ctx)
    assert np.allclose(h_perm, h[perm])


@pytest.mark.parametrize("arch", ARCHS)
def test_gradients_match_finite_differences(arch):
    for seed in range(10):
        instance = GradientInstance.random(n=10, dim=4, num_pairs=12, seed=seed)
        config = small_config(arch, seed=seed)
        report = gradient_check_report(arch, config, instance)
        assert report.checked > 0
        assert report.max_rel_error < 1e-4, f"{arch} seed {seed}: {report}"


def test_gradient_check_squared_loss_and_linear_activation():
    instance = GradientInstance.random(seed=11)
    config = small_config("gcn", activation="linear", hidden=5)
    report = gradient_check_report("gcn", config, instance, loss="squared")
    assert report.skipped == 0
    assert report.max_rel_error < 1e-4
    assert gradient_check("mlp", config, instance) < 1e-4


def test_gradient_instance_size_limits():
    with pytest.raises(ValueError):
        GradientInstance.random(n=21)
    with pytest.raises(ValueError):
        GradientInstance.random(dim=9)


def test_linear_mlp_squared_loss_matches_closed_form():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((6, 3))
    pairs = np.array([[0, 1], [2, 3], [4, 5], [1, 4]])
    labels = np.array([1.0, 0.0, 1.0, 0.0])
    config = small_config("mlp", layers=1, hidden=3, activation="linear")
    params = init_params(config, 3)

    _, grads = loss_and_grad("mlp", params, x, None, pairs, labels, activation="linear", loss="squared")

    h = x @ params["enc.W0"] + params["enc.b0"]
    z = h[pairs[:, 0]] * h[pairs[:, 1]]
    hidden = z @ params["dec.W0"] + params["dec.b0"]
    residual = (hidden @ params["dec.w"] + params["dec.c"][0] - labels) / len(labels)
    assert np.allclose(grads["dec.w"], hidden.T @ residual)
    assert np.allclose(grads["dec.c"], [residual.sum()])
    assert np.allclose(grads["dec.W0"], z.T @ np.outer(residual, params["dec.w"]))
    assert np.allclose(grads["dec.b0"], np.outer(residual, params["dec.w"]).sum(axis=0))


def test_init_params_shapes_and_determinism():
    sage = init_params(small_config("sage", hidden=6), 5)
    assert sage["enc.W0"].shape == (10, 6)
    assert sage["enc.W1"].shape == (12, 6)
    assert "dec.W0" not in init_params(small_config("gae"), 5)
    assert init_params(small_config("ncn", hidden=6), 5)["dec.W0"].shape == (12, 6)
    a, b = init_params(small_config("gcn"), 5), init_params(small_config("gcn"), 5)
    assert all(np.array_equal(a[key], b[key]) for key in a)
    assert not a["enc.b0"].any()


def test_encode_rejects_mismatched_inputs():
    params = init_params(small_config("gcn"), 3)
    with pytest.raises(ValueError, match="dimension"):
        encode("gcn", params, np.zeros((4, 5)), GraphContext.from_edges(np.array([[0, 1]]), 4))
    with pytest.raises(ValueError, match="graph context"):
        encode("gcn", params, np.zeros((4, 3)), None)
    with pytest.raises(ValueError, match="out of range"):
        score_pairs("mlp", init_params(small_config("mlp"), 3), np.zeros((4, 4)), np.array([[0, 4]]), None)


def test_checkpoint_round_trip(tmp_path):
    config = small_config("ncn", seed=3)
    model = ModelParams(config=config, tensors=init_params(config, 4), best_epoch=7, best_val_auroc=0.91)
    path = save_checkpoint(model, tmp_path / "model.json")
    loaded = load_checkpoint(path)
    assert loaded.config == config
    assert loaded.best_epoch == 7
    assert loaded.best_val_auroc == 0.91
    assert all(np.array_equal(loaded.tensors[key], model.tensors[key]) for key in model.tensors)

    edges, ctx = random_graph(seed=8)
    x = np.random.default_rng(8).standard_normal((10, 4))
    pairs = np.array([[0, 1], [3, 8]])
    assert np.array_equal(loaded.predict(x, ctx, pairs), model.predict(x, ctx, pairs))


def test_checkpoint_errors(tmp_path):
    with pytest.raises(MissingFileError):
        load_checkpoint(tmp_path / "absent.json")
    bad = tmp_path / "bad.json"
    bad.write_text('{"format": "other", "version": 1}', encoding="utf-8")
    with pytest.raises(InputError, match="unsupported"):
        load_checkpoint(bad)
