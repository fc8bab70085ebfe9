"""Markdown and CSV result tables: rows are feature sources, column pairs are models."""

from __future__ import annotations

import csv
import io
import logging
from collections.abc import Sequence
from pathlib import Path

from .evaluation import METRICS, SLICE_NEGATIVES_NOTE, EvalReport, RunMetrics, read_metrics_json

logger = logging.getLogger(__name__)

METRIC_LABELS = {"auroc": "AUROC", "ap": "AP"}
ARCH_LABELS = {"mlp": "MLP", "gcn": "GCN", "sage": "SAGE", "gae": "GAE", "ncn": "NCN"}


def collect_runs(run_dir: Path) -> list[RunMetrics]:
    paths = sorted(Path(run_dir).rglob("metrics.json"))
    runs = [read_metrics_json(path) for path in paths]
    logger.info("Read %d metrics files under %s", len(runs), run_dir)
    return runs


def group_reports(runs: Sequence[RunMetrics]) -> list[EvalReport]:
    groups: dict[tuple[str, str], list[RunMetrics]] = {}
    for run in runs:
        groups.setdefault((run.arch, run.feature_source), []).append(run)
    return [EvalReport.from_runs(sorted(groups[key], key=lambda r: r.seed)) for key in sorted(groups)]


def _axes(reports: Sequence[EvalReport]) -> tuple[list[str], list[str]]:
    archs = sorted({r.arch for r in reports}, key=lambda a: list(ARCH_LABELS).index(a) if a in ARCH_LABELS else 99)
    features = sorted({r.feature_source for r in reports})
    return archs, features


def _table(reports: Sequence[EvalReport], slice_name: str | None) -> list[str]:
    archs, features = _axes(reports)
    index = {(r.arch, r.feature_source): r for r in reports}
    header = ["Features"] + [f"{ARCH_LABELS.get(a, a)} {METRIC_LABELS[m]}" for a in archs for m in METRICS]
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for feature in features:
        cells = [feature]
        for arch in archs:
            report = index.get((arch, feature))
            for metric in METRICS:
                cells.append(report.cell(metric, slice_name) if report else "n/a")
        lines.append("| " + " | ".join(cells) + " |")
    return lines


def render_markdown(reports: Sequence[EvalReport]) -> str:
    lines = ["# Link prediction results", "", "Test metrics in percent, mean ± sample standard deviation over seeds.", ""]
    lines += _table(reports, None)

    slice_names = sorted({name for r in reports for name in r.slices})
    for name in slice_names:
        lines += ["", f"## Slice: {name}", "", SLICE_NEGATIVES_NOTE + ".", ""]
        lines += _table([r for r in reports if name in r.slices], name)

    failed = [(r.arch, r.feature_source, run.seed, run.error) for r in reports for run in r.runs if run.status != "completed"]
    if failed:
        lines += ["", "## Failed runs", ""]
        lines += [f"- {arch} / {feature} / seed {seed}: {error}" for arch, feature, seed, error in failed]
    if any(agg.n == 1 for r in reports for agg in r.summary.values()):
        lines += ["", "Cells marked (n=1) come from a single seed; their standard deviation is undefined and shown as 0.00."]
    return "\n".join(lines) + "\n"


def render_csv(reports: Sequence[EvalReport]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["table", "feature_source", "arch", "metric", "mean", "std", "n", "cell"])
    for report in reports:
        tables = [("global", report.summary)] + [(f"slice:{name}", metrics) for name, metrics in sorted(report.slices.items())]
        for table, metrics in tables:
            slice_name = None if table == "global" else table.split(":", 1)[1]
            for metric in METRICS:
                agg = metrics.get(metric)
                if agg is None:
                    continue
                writer.writerow(
                    [table, report.feature_source, report.arch, metric, repr(agg.mean), repr(agg.std), agg.n,
                     report.cell(metric, slice_name)]
                )
    return buffer.getvalue()


def write_report(reports: Sequence[EvalReport], out_dir: Path) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    md_path = out_dir / "report.md"
    csv_path = out_dir / "report.csv"
    md_path.write_text(render_markdown(reports), encoding="utf-8")
    csv_path.write_text(render_csv(reports), encoding="utf-8")
    return md_path, csv_path
