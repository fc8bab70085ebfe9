"""Shared training loop: Adam, resampled negatives, early stopping on validation AUROC."""

from __future__ import annotations

import logging
from collections.abc import Callable

import numpy as np
from tqdm import tqdm

from .config import ModelConfig
from .embedding import EmbeddingMatrix
from .errors import DivergenceError
from .graph import EdgeSplit, TemporalGraph, as_edge_array, sample_negatives
from .metrics import auroc_scores
from .predictors import GraphContext, ModelParams, Params, copy_params, init_params, loss_and_grad, predict
from .seeding import make_rng

logger = logging.getLogger(__name__)

EpochHook = Callable[[int, float, float | None], None]


class Adam:
    def __init__(self, params: Params, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {key: np.zeros_like(arr) for key, arr in params.items()}
        self.v = {key: np.zeros_like(arr) for key, arr in params.items()}

    def step(self, params: Params, grads: Params) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for key, grad in grads.items():
            self.m[key] = self.beta1 * self.m[key] + (1.0 - self.beta1) * grad
            self.v[key] = self.beta2 * self.v[key] + (1.0 - self.beta2) * grad * grad
            params[key] = params[key] - self.lr * (self.m[key] / c1) / (np.sqrt(self.v[key] / c2) + self.eps)


def labelled_pairs(pos: np.ndarray, neg: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pos = np.asarray(pos, dtype=np.int64).reshape(-1, 2)
    neg = np.asarray(neg, dtype=np.int64).reshape(-1, 2)
    labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    return np.concatenate([pos, neg]), labels


def validation_auroc(model: ModelParams, features: EmbeddingMatrix, split: EdgeSplit, adj: GraphContext) -> float:
    pairs, labels = labelled_pairs(split.val_pos, split.val_neg)
    return auroc_scores(model.predict(features, adj, pairs), labels)


def train(
    config: ModelConfig,
    features: EmbeddingMatrix,
    split: EdgeSplit,
    adj: GraphContext | None = None,
    *,
    on_epoch: EpochHook | None = None,
    progress: bool = False,
) -> ModelParams:
    """Fit one model and return the parameters with the best validation AUROC.

    Every epoch draws fresh 1:1 negatives among pairs that are not train
    positives. Without a usable validation set the final parameters are kept.
    """

    if features.n != split.n:
        raise ValueError(f"features cover {features.n} nodes but the split has {split.n}")
    if len(split.train_pos) == 0:
        raise ValueError("cannot train without training edges")
    adj = adj or GraphContext.from_edges(split.train_pos, split.n)

    params = init_params(config, features.dim)
    if config.epochs == 0:
        return ModelParams(config=config, tensors=params)

    rng = make_rng(config.seed, "train", config.arch)
    train_pos = as_edge_array(split.train_pos)
    train_graph = TemporalGraph(n=split.n, edges=train_pos, first_year=np.zeros(len(train_pos), dtype=np.int64))
    val_pairs, val_labels = labelled_pairs(split.val_pos, split.val_neg)
    can_validate = len(split.val_pos) > 0 and len(split.val_neg) > 0

    optimizer = Adam(params, config.lr)
    best = copy_params(params)
    best_auc = -np.inf
    best_epoch = 0
    stale = 0
    history: list[dict[str, float]] = []

    epochs = tqdm(range(1, config.epochs + 1), desc=f"train {config.arch}", disable=not progress, leave=False)
    for epoch in epochs:
        neg = sample_negatives(train_graph, len(train_pos), seed=rng)
        pairs, labels = labelled_pairs(train_pos, neg)
        order = rng.permutation(len(pairs))

        total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            loss, grads = loss_and_grad(
                config.arch, params, features, adj, pairs[batch], labels[batch],
                activation=config.activation, dropout=config.dropout, rng=rng,
            )
            if not np.isfinite(loss):
                raise DivergenceError(epoch, loss)
            optimizer.step(params, grads)
            total += loss * len(batch)
        epoch_loss = total / len(order)
        if not all(np.all(np.isfinite(arr)) for arr in params.values()):
            raise DivergenceError(epoch, epoch_loss)

        val_auc = None
        if can_validate:
            probs = predict(config.arch, params, features, adj, val_pairs, activation=config.activation)
            val_auc = auroc_scores(probs, val_labels)
        history.append({"epoch": epoch, "loss": epoch_loss, "val_auroc": val_auc if val_auc is not None else float("nan")})
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss, val_auc)

        if val_auc is None:
            continue
        if val_auc > best_auc:
            best, best_auc, best_epoch, stale = copy_params(params), val_auc, epoch, 0
        else:
            stale += 1
            if stale >= config.patience:
                logger.debug("Early stop at epoch %d (best %d, val AUROC %.4f)", epoch, best_epoch, best_auc)
                break

    if not can_validate:
        logger.warning("No validation pairs; keeping final-epoch parameters")
        return ModelParams(config=config, tensors=params, best_epoch=len(history), history=history)
    logger.info(
        "Trained %s seed %d: best epoch %d, val AUROC %.4f, final loss %.4f",
        config.arch, config.seed, best_epoch, best_auc, history[-1]["loss"],
    )
    return ModelParams(config=config, tensors=best, best_epoch=best_epoch, best_val_auroc=float(best_auc), history=history)
