"""Grid execution: one isolated task per (architecture, feature set, seed) cell."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .config import FeatureRecipe, ModelConfig
from .embedding import EmbeddingMatrix, concat_embeddings, read_embedding
from .evaluation import RunMetrics, read_metrics_json, run_seed, write_metrics_json
from .graph import EdgeSplit
from .llm import pool_embeddings
from .manifest import ManifestStore, sha256_file
from .predictors import GraphContext, save_checkpoint
from .seeding import derive_seed

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FeatureSet:
    name: str
    matrix: EmbeddingMatrix
    sha256: str


def build_feature_set(recipe: FeatureRecipe) -> FeatureSet:
    """Load a recipe's sources, merge them, and append the optional concat matrix."""

    sources = [read_embedding(path) for path in recipe.sources]
    matrix = sources[0] if recipe.merge == "none" else pool_embeddings(sources, recipe.merge)
    checksum_inputs = list(recipe.sources)
    if recipe.concat_with is not None:
        matrix = concat_embeddings(matrix, read_embedding(recipe.concat_with))
        checksum_inputs.append(recipe.concat_with)
    digest = "+".join(sha256_file(path) for path in checksum_inputs)
    return FeatureSet(recipe.name, EmbeddingMatrix(matrix.vectors, recipe.name), digest)


@dataclass(frozen=True)
class GridCell:
    config: ModelConfig
    feature: str
    seed: int

    @property
    def key(self) -> str:
        return f"{self.config.arch}/{self.feature}/seed{self.seed}"


def grid_cells(models: Sequence[ModelConfig], features: Sequence[str], seeds: Sequence[int]) -> list[GridCell]:
    return [GridCell(model, feature, seed) for model in models for feature in features for seed in seeds]


class GridRunner:
    """Runs grid cells in a thread pool, reusing cells whose inputs are unchanged."""

    def __init__(
        self,
        split: EdgeSplit,
        split_sha: str,
        features: Sequence[FeatureSet],
        out_dir: Path,
        manifest: ManifestStore,
        *,
        workers: int = 1,
        master_seed: int = 0,
    ):
        self.split = split
        self.split_sha = split_sha
        self.features = {feature.name: feature for feature in features}
        self.out_dir = Path(out_dir)
        self.manifest = manifest
        self.workers = workers
        self.master_seed = master_seed
        self.adj = GraphContext.from_edges(split.train_pos, split.n)

    def cell_dir(self, cell: GridCell) -> Path:
        return self.out_dir / "runs" / cell.config.arch / cell.feature / f"seed{cell.seed}"

    def _inputs(self, cell: GridCell) -> dict[str, str]:
        return {"split": self.split_sha, "features": self.features[cell.feature].sha256}

    def model_seed(self, cell: GridCell) -> int:
        return derive_seed(self.master_seed, "model", cell.seed)

    def _params(self, cell: GridCell) -> dict[str, object]:
        return {
            "model": cell.config.model_dump(mode="json"),
            "seed": cell.seed,
            "master_seed": self.master_seed,
            "model_seed": self.model_seed(cell),
        }

    def run_cell(self, cell: GridCell) -> RunMetrics:
        metrics_path = self.cell_dir(cell) / "metrics.json"
        inputs, params = self._inputs(cell), self._params(cell)
        if self.manifest.is_fresh(cell.key, inputs, params):
            logger.info("Reusing %s", cell.key)
            return read_metrics_json(metrics_path)

        feature = self.features[cell.feature]
        try:
            model, run = run_seed(cell.config, feature.matrix, self.split, self.model_seed(cell), self.adj)
        except Exception as exc:
            logger.error("Cell %s failed: %s", cell.key, exc)
            run = RunMetrics(
                arch=cell.config.arch, feature_source=cell.feature, seed=cell.seed, status="failed", error=str(exc)
            )
            write_metrics_json(run, metrics_path)
            return run

        run.feature_source = cell.feature
        run.seed = cell.seed
        write_metrics_json(run, metrics_path)
        save_checkpoint(model, self.cell_dir(cell) / "model.json")
        self.manifest.record(cell.key, "metrics", metrics_path, inputs, params)
        self.manifest.record(f"{cell.key}/checkpoint", "checkpoint", self.cell_dir(cell) / "model.json", inputs, params)
        logger.info("%s: AUROC %.4f AP %.4f", cell.key, run.auroc, run.ap)
        return run

    def run(self, cells: Sequence[GridCell]) -> list[RunMetrics]:
        logger.info("Running %d grid cells with %d worker(s)", len(cells), self.workers)
        if self.workers > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                return list(pool.map(self.run_cell, cells))
        return [self.run_cell(cell) for cell in cells]
