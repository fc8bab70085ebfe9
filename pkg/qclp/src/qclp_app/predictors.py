"""Link predictors with hand-written forward and backward passes.

Every architecture is an encoder that maps node features to node
representations followed by a pair decoder:

* ``mlp``:  H' = act(H W + b), no graph.
* ``gcn``:  H' = act(Â H W + b) with Â the self-looped, symmetrically
  normalised train adjacency.
* ``sage``: H' = act([H ‖ P H] W + b) with P the neighbour-mean operator
  (zero rows for isolated nodes).
* ``gae``:  gcn encoder whose last layer is linear, inner-product decoder.
* ``ncn``:  gcn encoder, decoder also sees the sum of common-neighbour
  representations. This is only the common-neighbour aggregation idea, not a
  full neural common-neighbour model.

The mlp/gcn/sage/ncn decoder is a one-hidden-layer scorer over
``h_u * h_v`` (plus the common-neighbour sum for ncn).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal

import numpy as np
import scipy.sparse as sp

from .config import Arch, ModelConfig
from .embedding import EmbeddingMatrix
from .errors import InputError, MissingFileError
from .graph import adjacency_matrix
from .seeding import make_rng

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "qclp-checkpoint"
CHECKPOINT_VERSION = 1

Params = dict[str, np.ndarray]
Activation = Literal["relu", "linear"]
LossKind = Literal["bce", "squared"]


def normalized_adjacency(train_pos: np.ndarray, n: int) -> sp.csr_matrix:
    """D̃^{-1/2} (A + I) D̃^{-1/2} over the training edges."""

    a = adjacency_matrix(train_pos, n) + sp.identity(n, format="csr")
    deg = np.asarray(a.sum(axis=1)).ravel()
    scale = sp.diags(1.0 / np.sqrt(deg))
    return (scale @ a @ scale).tocsr()


def mean_adjacency(train_pos: np.ndarray, n: int) -> sp.csr_matrix:
    a = adjacency_matrix(train_pos, n)
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    return (sp.diags(inv) @ a).tocsr()


@dataclass(frozen=True)
class GraphContext:
    """Train-edge operators used for message passing at train and test time."""

    n: int
    adj: sp.csr_matrix
    norm_adj: sp.csr_matrix
    mean_adj: sp.csr_matrix

    @classmethod
    def from_edges(cls, train_pos: np.ndarray, n: int) -> GraphContext:
        return cls(
            n=n,
            adj=adjacency_matrix(train_pos, n),
            norm_adj=normalized_adjacency(train_pos, n),
            mean_adj=mean_adjacency(train_pos, n),
        )


def common_neighbors(adj: sp.csr_matrix, pairs: np.ndarray) -> sp.csr_matrix:
    """Row k is the indicator of N(u_k) ∩ N(v_k)."""

    return adj[pairs[:, 0]].multiply(adj[pairs[:, 1]]).tocsr()


def _act(z: np.ndarray, activation: Activation) -> np.ndarray:
    return np.maximum(z, 0.0) if activation == "relu" else z


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int, shape: tuple[int, ...]) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def num_layers(params: Params) -> int:
    return sum(1 for key in params if key.startswith("enc.W"))


def init_params(config: ModelConfig, in_dim: int) -> Params:
    """Xavier-uniform weights and zero biases, seeded by ``config.seed``."""

    rng = make_rng(config.seed, "init", config.arch)
    params: Params = {}
    d_in = in_dim
    for layer in range(config.layers):
        fan_in = 2 * d_in if config.arch == "sage" else d_in
        params[f"enc.W{layer}"] = _xavier(rng, fan_in, config.hidden, (fan_in, config.hidden))
        params[f"enc.b{layer}"] = np.zeros(config.hidden)
        d_in = config.hidden
    if config.arch != "gae":
        z_dim = 2 * config.hidden if config.arch == "ncn" else config.hidden
        params["dec.W0"] = _xavier(rng, z_dim, config.hidden, (z_dim, config.hidden))
        params["dec.b0"] = np.zeros(config.hidden)
        params["dec.w"] = _xavier(rng, config.hidden, 1, (config.hidden,))
        params["dec.c"] = np.zeros(1)
    return params


@dataclass
class _LayerCache:
    mask: np.ndarray | None
    agg: np.ndarray
    z: np.ndarray
    activated: bool


@dataclass
class _Forward:
    h: np.ndarray
    layers: list[_LayerCache]
    logits: np.ndarray
    z_pair: np.ndarray | None = None
    cn: sp.csr_matrix | None = None
    dec_pre: np.ndarray | None = None
    dec_hidden: np.ndarray | None = None

    def relu_pattern(self) -> np.ndarray:
        parts = [(layer.z > 0).ravel() for layer in self.layers if layer.activated]
        if self.dec_pre is not None:
            parts.append((self.dec_pre > 0).ravel())
        return np.concatenate(parts) if parts else np.empty(0, dtype=bool)


def _features(features: EmbeddingMatrix | np.ndarray) -> np.ndarray:
    if isinstance(features, EmbeddingMatrix):
        return features.vectors
    return np.asarray(features, dtype=np.float64)


def _encode(
    arch: Arch,
    params: Params,
    x: np.ndarray,
    ctx: GraphContext | None,
    *,
    activation: Activation,
    dropout: float,
    rng: np.random.Generator | None,
) -> tuple[np.ndarray, list[_LayerCache]]:
    layers = num_layers(params)
    if x.shape[1] * (2 if arch == "sage" else 1) != params["enc.W0"].shape[0]:
        raise ValueError(f"features have dimension {x.shape[1]}, parameters expect {params['enc.W0'].shape[0]}")
    if arch != "mlp" and (ctx is None or ctx.n != x.shape[0]):
        raise ValueError(f"{arch} needs a graph context over {x.shape[0]} nodes")

    caches: list[_LayerCache] = []
    h = x
    for layer in range(layers):
        mask = None
        if rng is not None and dropout > 0:
            mask = (rng.random(h.shape) >= dropout) / (1.0 - dropout)
            h = h * mask
        if arch == "mlp":
            agg = h
        elif arch == "sage":
            agg = np.hstack([h, ctx.mean_adj @ h])
        else:
            agg = ctx.norm_adj @ h
        z = agg @ params[f"enc.W{layer}"] + params[f"enc.b{layer}"]
        activated = activation == "relu" and not (arch == "gae" and layer == layers - 1)
        h = np.maximum(z, 0.0) if activated else z
        caches.append(_LayerCache(mask, agg, z, activated))
    return h, caches


def encode(
    arch: Arch,
    params: Params,
    features: EmbeddingMatrix | np.ndarray,
    adj: GraphContext | None,
    *,
    activation: Activation = "relu",
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Node representations; pass ``rng`` to enable dropout (training mode)."""

    h, _ = _encode(arch, params, _features(features), adj, activation=activation, dropout=dropout, rng=rng)
    return h


def _decode(
    arch: Arch, params: Params, h: np.ndarray, pairs: np.ndarray, ctx: GraphContext | None, activation: Activation
) -> _Forward:
    u, v = pairs[:, 0], pairs[:, 1]
    if arch == "gae":
        return _Forward(h=h, layers=[], logits=np.einsum("ij,ij->i", h[u], h[v]))
    z = h[u] * h[v]
    cn = None
    if arch == "ncn":
        cn = common_neighbors(ctx.adj, pairs)
        z = np.hstack([z, np.asarray(cn @ h)])
    pre = z @ params["dec.W0"] + params["dec.b0"]
    hidden = _act(pre, activation)
    logits = hidden @ params["dec.w"] + params["dec.c"][0]
    return _Forward(h=h, layers=[], logits=logits, z_pair=z, cn=cn, dec_pre=pre if activation == "relu" else None, dec_hidden=hidden)


def _as_pairs(pairs: np.ndarray) -> np.ndarray:
    return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)


def score_pairs(
    arch: Arch,
    params: Params,
    h: np.ndarray,
    pairs: np.ndarray,
    adj: GraphContext | None,
    *,
    activation: Activation = "relu",
) -> np.ndarray:
    pairs = _as_pairs(pairs)
    if pairs.size and (pairs.min() < 0 or pairs.max() >= h.shape[0]):
        raise ValueError(f"pair index out of range for {h.shape[0]} nodes")
    return _decode(arch, params, h, pairs, adj, activation).logits


def score(
    arch: Arch,
    params: Params,
    h: np.ndarray,
    u: int,
    v: int,
    adj: GraphContext | None,
    *,
    activation: Activation = "relu",
) -> float:
    return float(score_pairs(arch, params, h, np.array([[u, v]]), adj, activation=activation)[0])


def forward(
    arch: Arch,
    params: Params,
    features: EmbeddingMatrix | np.ndarray,
    adj: GraphContext | None,
    pairs: np.ndarray,
    *,
    activation: Activation = "relu",
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
) -> _Forward:
    h, caches = _encode(arch, params, _features(features), adj, activation=activation, dropout=dropout, rng=rng)
    out = _decode(arch, params, h, _as_pairs(pairs), adj, activation)
    out.layers = caches
    return out


def _loss(logits: np.ndarray, labels: np.ndarray, kind: LossKind) -> tuple[float, np.ndarray]:
    """Mean loss and its derivative with respect to each logit."""

    m = logits.shape[0]
    if kind == "bce":
        loss = float(np.mean(np.logaddexp(0.0, logits) - labels * logits))
        sig = np.exp(-np.logaddexp(0.0, -logits))
        return loss, (sig - labels) / m
    residual = logits - labels
    return float(0.5 * np.mean(residual**2)), residual / m


def loss_and_grad(
    arch: Arch,
    params: Params,
    features: EmbeddingMatrix | np.ndarray,
    adj: GraphContext | None,
    pairs: np.ndarray,
    labels: np.ndarray,
    *,
    activation: Activation = "relu",
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
    loss: LossKind = "bce",
) -> tuple[float, Params]:
    """Loss over labelled pairs and the analytic gradient of every parameter."""

    pairs = _as_pairs(pairs)
    labels = np.asarray(labels, dtype=np.float64)
    fwd = forward(arch, params, features, adj, pairs, activation=activation, dropout=dropout, rng=rng)
    value, dlogit = _loss(fwd.logits, labels, loss)

    grads: Params = {key: np.zeros_like(arr) for key, arr in params.items()}
    h = fwd.h
    u, v = pairs[:, 0], pairs[:, 1]
    dh = np.zeros_like(h)

    if arch == "gae":
        np.add.at(dh, u, dlogit[:, None] * h[v])
        np.add.at(dh, v, dlogit[:, None] * h[u])
    else:
        grads["dec.c"] = np.array([dlogit.sum()])
        grads["dec.w"] = fwd.dec_hidden.T @ dlogit
        dpre = np.outer(dlogit, params["dec.w"])
        if activation == "relu":
            dpre = dpre * (fwd.dec_pre > 0)
        grads["dec.W0"] = fwd.z_pair.T @ dpre
        grads["dec.b0"] = dpre.sum(axis=0)
        dz = dpre @ params["dec.W0"].T
        d = h.shape[1]
        dprod = dz[:, :d]
        np.add.at(dh, u, dprod * h[v])
        np.add.at(dh, v, dprod * h[u])
        if arch == "ncn":
            dh += np.asarray(fwd.cn.T @ dz[:, d:])

    for layer in reversed(range(len(fwd.layers))):
        cache = fwd.layers[layer]
        dz_layer = dh * (cache.z > 0) if cache.activated else dh
        w = params[f"enc.W{layer}"]
        grads[f"enc.W{layer}"] = cache.agg.T @ dz_layer
        grads[f"enc.b{layer}"] = dz_layer.sum(axis=0)
        if layer == 0:
            break
        dagg = dz_layer @ w.T
        if arch == "mlp":
            dh = dagg
        elif arch == "sage":
            half = dagg.shape[1] // 2
            dh = dagg[:, :half] + adj.mean_adj.T @ dagg[:, half:]
        else:
            dh = adj.norm_adj.T @ dagg
        if cache.mask is not None:
            dh = dh * cache.mask
    return value, grads


def predict(
    arch: Arch,
    params: Params,
    features: EmbeddingMatrix | np.ndarray,
    adj: GraphContext | None,
    pairs: np.ndarray,
    *,
    activation: Activation = "relu",
) -> np.ndarray:
    """Link probabilities for candidate pairs in evaluation mode."""

    logits = forward(arch, params, features, adj, pairs, activation=activation).logits
    return np.exp(-np.logaddexp(0.0, -logits))


@dataclass(frozen=True)
class GradientCheck:
    max_rel_error: float
    checked: int
    skipped: int


@dataclass(frozen=True)
class GradientInstance:
    features: np.ndarray
    adj: GraphContext
    pairs: np.ndarray
    labels: np.ndarray

    @classmethod
    def random(cls, n: int = 12, dim: int = 6, num_pairs: int = 16, edge_prob: float = 0.3, seed: int = 0) -> GradientInstance:
        if n > 20 or dim > 8:
            raise ValueError("gradient checks are meant for n <= 20 and dim <= 8")
        rng = np.random.default_rng(seed)
        iu, iv = np.triu_indices(n, k=1)
        keep = rng.random(iu.shape[0]) < edge_prob
        edges = np.stack([iu[keep], iv[keep]], axis=1)
        pick = rng.choice(iu.shape[0], size=num_pairs, replace=False)
        return cls(
            features=rng.normal(size=(n, dim)),
            adj=GraphContext.from_edges(edges, n),
            pairs=np.stack([iu[pick], iv[pick]], axis=1),
            labels=rng.integers(0, 2, size=num_pairs).astype(np.float64),
        )


def gradient_check_report(
    arch: Arch, config: ModelConfig, instance: GradientInstance, *, h: float = 1e-5, loss: LossKind = "bce"
) -> GradientCheck:
    """Central finite differences against the analytic gradient, dropout off.

    Coordinates whose ±h step changes a ReLU on/off pattern are skipped since
    the loss is not differentiable across that step.
    """

    params = init_params(config.model_copy(update={"arch": arch}), instance.features.shape[1])

    def run(p: Params) -> _Forward:
        return forward(arch, p, instance.features, instance.adj, instance.pairs, activation=config.activation)

    def loss_of(fwd: _Forward) -> float:
        return _loss(fwd.logits, instance.labels, loss)[0]

    _, analytic = loss_and_grad(
        arch, params, instance.features, instance.adj, instance.pairs, instance.labels,
        activation=config.activation, loss=loss,
    )
    base_pattern = run(params).relu_pattern()

    worst, checked, skipped = 0.0, 0, 0
    for key, arr in params.items():
        for idx in np.ndindex(arr.shape):
            original = arr[idx]
            arr[idx] = original + h
            plus = run(params)
            arr[idx] = original - h
            minus = run(params)
            arr[idx] = original
            if not (np.array_equal(plus.relu_pattern(), base_pattern) and np.array_equal(minus.relu_pattern(), base_pattern)):
                skipped += 1
                continue
            numeric = (loss_of(plus) - loss_of(minus)) / (2 * h)
            exact = analytic[key][idx]
            denom = max(abs(exact), abs(numeric), 1e-8)
            worst = max(worst, abs(exact - numeric) / denom)
            checked += 1
    logger.debug("Gradient check %s: %d coordinates checked, %d skipped at kinks", arch, checked, skipped)
    return GradientCheck(worst, checked, skipped)


def gradient_check(arch: Arch, config: ModelConfig, instance: GradientInstance) -> float:
    return gradient_check_report(arch, config, instance).max_rel_error


@dataclass
class ModelParams:
    """Trained parameters together with the config that produced them."""

    config: ModelConfig
    tensors: Params
    best_epoch: int = 0
    best_val_auroc: float | None = None
    history: list[dict[str, float]] = field(default_factory=list)

    @property
    def arch(self) -> Arch:
        return self.config.arch

    def predict(self, features: EmbeddingMatrix | np.ndarray, adj: GraphContext | None, pairs: np.ndarray) -> np.ndarray:
        return predict(self.arch, self.tensors, features, adj, pairs, activation=self.config.activation)

    def encode(self, features: EmbeddingMatrix | np.ndarray, adj: GraphContext | None) -> np.ndarray:
        return encode(self.arch, self.tensors, features, adj, activation=self.config.activation)


def copy_params(params: Params) -> Params:
    return {key: arr.copy() for key, arr in params.items()}


def save_checkpoint(model: ModelParams, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc: dict[str, Any] = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": model.config.model_dump(mode="json"),
        "best_epoch": model.best_epoch,
        "best_val_auroc": model.best_val_auroc,
        "params": {
            key: {"shape": list(arr.shape), "data": [float(x) for x in arr.ravel()]}
            for key, arr in sorted(model.tensors.items())
        },
    }
    path.write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_checkpoint(path: Path) -> ModelParams:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise MissingFileError(f"checkpoint not found: {path}", path=str(path)) from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"checkpoint is not valid JSON: {path}", path=str(path)) from exc
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise InputError(f"unsupported checkpoint {doc.get('format')} v{doc.get('version')}", path=str(path))
    tensors = {
        key: np.array(entry["data"], dtype=np.float64).reshape(entry["shape"]) for key, entry in doc["params"].items()
    }
    return ModelParams(
        config=ModelConfig.model_validate(doc["config"]),
        tensors=tensors,
        best_epoch=int(doc.get("best_epoch", 0)),
        best_val_auroc=doc.get("best_val_auroc"),
    )
