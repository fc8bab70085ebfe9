"""Per-seed test metrics, isolated-node slices and multi-seed reports."""

from __future__ import annotations

import json
import logging
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .config import ModelConfig
from .embedding import EmbeddingMatrix
from .graph import EdgeSplit, incident_mask
from .metrics import Aggregate, ScoredEdges, aggregate, auroc, average_precision, format_cell
from .predictors import GraphContext, ModelParams
from .training import train

logger = logging.getLogger(__name__)

METRICS = ("auroc", "ap")
ISOLATED_SLICE = "isolated"
SLICE_NEGATIVES_NOTE = "slice negatives are non-edges incident to the slice nodes, drawn 1:1 with slice positives"


def slice_eval(scored: ScoredEdges, node_set: Iterable[int]) -> dict[str, float]:
    """AUROC and AP over the pairs with at least one endpoint in ``node_set``."""

    mask = incident_mask(scored.edges, node_set)
    if not mask.any():
        raise ValueError("slice is empty: no scored pair touches the node set")
    part = scored.restrict(mask)
    return {
        "auroc": auroc(part),
        "ap": average_precision(part),
        "n_pos": int(part.labels.sum()),
        "n_neg": int(len(part) - part.labels.sum()),
    }


@dataclass
class RunMetrics:
    arch: str
    feature_source: str
    seed: int
    auroc: float = float("nan")
    ap: float = float("nan")
    slices: dict[str, dict[str, float]] = field(default_factory=dict)
    best_epoch: int = 0
    status: str = "completed"
    error: str | None = None

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        for key in METRICS:
            if np.isnan(data[key]):
                data[key] = None
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RunMetrics:
        values = dict(data)
        for key in METRICS:
            if values.get(key) is None:
                values[key] = float("nan")
        return cls(**values)


def score_test(model: ModelParams, features: EmbeddingMatrix, split: EdgeSplit, adj: GraphContext) -> ScoredEdges:
    return ScoredEdges.from_sets(
        split.test_pos,
        split.test_neg,
        model.predict(features, adj, split.test_pos),
        model.predict(features, adj, split.test_neg),
    )


def score_isolated_slice(model: ModelParams, features: EmbeddingMatrix, split: EdgeSplit, adj: GraphContext) -> ScoredEdges:
    """Test positives scored against the slice-restricted negatives."""

    return ScoredEdges.from_sets(
        split.test_pos,
        split.slice_test_neg,
        model.predict(features, adj, split.test_pos),
        model.predict(features, adj, split.slice_test_neg),
    )


def evaluate_model(
    model: ModelParams, features: EmbeddingMatrix, split: EdgeSplit, adj: GraphContext | None = None
) -> RunMetrics:
    adj = adj or GraphContext.from_edges(split.train_pos, split.n)
    scored = score_test(model, features, split, adj)
    run = RunMetrics(
        arch=model.arch,
        feature_source=features.source,
        seed=model.config.seed,
        auroc=auroc(scored),
        ap=average_precision(scored),
        best_epoch=model.best_epoch,
    )
    if split.isolated and len(split.slice_test_neg) and incident_mask(split.test_pos, split.isolated).any():
        run.slices[ISOLATED_SLICE] = slice_eval(score_isolated_slice(model, features, split, adj), split.isolated)
    return run


def run_seed(
    config: ModelConfig,
    features: EmbeddingMatrix,
    split: EdgeSplit,
    seed: int,
    adj: GraphContext | None = None,
) -> tuple[ModelParams, RunMetrics]:
    adj = adj or GraphContext.from_edges(split.train_pos, split.n)
    model = train(config.model_copy(update={"seed": seed}), features, split, adj)
    return model, evaluate_model(model, features, split, adj)


@dataclass
class EvalReport:
    arch: str
    feature_source: str
    runs: list[RunMetrics]
    summary: dict[str, Aggregate] = field(default_factory=dict)
    slices: dict[str, dict[str, Aggregate]] = field(default_factory=dict)

    @property
    def seeds(self) -> list[int]:
        return [run.seed for run in self.runs]

    def cell(self, metric: str, slice_name: str | None = None) -> str:
        agg = self.summary.get(metric) if slice_name is None else self.slices.get(slice_name, {}).get(metric)
        if agg is None:
            return "n/a"
        text = format_cell(agg.mean, agg.std)
        return text if agg.std_defined else f"{text} (n=1)"

    @classmethod
    def from_runs(cls, runs: Sequence[RunMetrics]) -> EvalReport:
        if not runs:
            raise ValueError("no runs to report")
        ok = [run for run in runs if run.status == "completed"]
        report = cls(arch=runs[0].arch, feature_source=runs[0].feature_source, runs=list(runs))
        if not ok:
            return report
        report.summary = {metric: aggregate([getattr(run, metric) for run in ok]) for metric in METRICS}
        names = sorted({name for run in ok for name in run.slices})
        for name in names:
            with_slice = [run.slices[name] for run in ok if name in run.slices]
            report.slices[name] = {metric: aggregate([s[metric] for s in with_slice]) for metric in METRICS}
        return report

    def to_dict(self) -> dict[str, Any]:
        def agg_dict(agg: Aggregate) -> dict[str, Any]:
            return {"mean": agg.mean, "std": agg.std, "n": agg.n, "std_defined": agg.std_defined}

        return {
            "arch": self.arch,
            "feature_source": self.feature_source,
            "seeds": self.seeds,
            "std": "sample (n-1)",
            "summary": {key: agg_dict(value) for key, value in self.summary.items()},
            "slices": {name: {key: agg_dict(v) for key, v in metrics.items()} for name, metrics in self.slices.items()},
            "slice_negatives": SLICE_NEGATIVES_NOTE,
            "failed": [run.seed for run in self.runs if run.status != "completed"],
        }


def evaluate(
    model: ModelConfig,
    features: EmbeddingMatrix,
    split: EdgeSplit,
    seeds: Sequence[int],
    adj: GraphContext | None = None,
) -> EvalReport:
    """Train and test one configuration once per seed."""

    if not seeds:
        raise ValueError("seed list must not be empty")
    adj = adj or GraphContext.from_edges(split.train_pos, split.n)
    runs = [run_seed(model, features, split, seed, adj)[1] for seed in seeds]
    report = EvalReport.from_runs(runs)
    logger.info(
        "%s on %s over %d seeds: AUROC %s, AP %s",
        model.arch, features.source, len(seeds), report.cell("auroc"), report.cell("ap"),
    )
    return report


def write_metrics_json(run: RunMetrics, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(run.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_metrics_json(path: Path) -> RunMetrics:
    return RunMetrics.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
