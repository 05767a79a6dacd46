"""Experiment matrix runner: trains every requested cell and tabulates AUROC.

Deep cells (anything trained by gradient descent end to end) are repeated
over several seeds and reported as mean with standard deviation; tree and
linear cells on static features are deterministic and run once unless seeds
are forced. Failed cells are recorded and the run continues.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingError, UsageError
from .pipeline import CellRun, CellSpec, PipelineContext, train_cell

CSV_HEADER = "content,user_mode,classifier,similarity,history_len,aggregation,seed_count,mean_auroc,stddev,seconds"


@dataclass
class CellResult:
    cell: CellSpec
    seed_count: int
    mean_auroc: float
    stddev: float
    seconds: float
    status: str = "ok"
    error: str = ""
    runs: list[CellRun] = field(default_factory=list)

    def csv_row(self) -> str:
        agg = self.cell.aggregation or "default"
        return ",".join(
            [
                self.cell.content,
                self.cell.user_mode,
                self.cell.classifier,
                "on" if self.cell.similarity else "off",
                str(self.cell.history_len),
                agg,
                str(self.seed_count),
                f"{self.mean_auroc:.6f}" if np.isfinite(self.mean_auroc) else "nan",
                f"{self.stddev:.6f}" if np.isfinite(self.stddev) else "nan",
                f"{self.seconds:.3f}",
            ]
        )

    def to_json(self) -> dict:
        return {
            "content": self.cell.content,
            "user_mode": self.cell.user_mode,
            "classifier": self.cell.classifier,
            "similarity": self.cell.similarity,
            "history_len": self.cell.history_len,
            "aggregation": self.cell.aggregation or "default",
            "seed_count": self.seed_count,
            "mean_auroc": None if not np.isfinite(self.mean_auroc) else self.mean_auroc,
            "stddev": None if not np.isfinite(self.stddev) else self.stddev,
            "seconds": self.seconds,
            "status": self.status,
            "error": self.error,
        }


@dataclass
class ExperimentReport:
    results: list[CellResult]

    def to_csv(self) -> str:
        return "\n".join([CSV_HEADER] + [r.csv_row() for r in self.results]) + "\n"

    def to_json(self) -> str:
        return json.dumps([r.to_json() for r in self.results], sort_keys=True, indent=2)

    def save(self, csv_path: str, json_path: str | None = None) -> None:
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write(self.to_csv())
        if json_path:
            with open(json_path, "w", encoding="utf-8") as fh:
                fh.write(self.to_json())


def is_deep(cell: CellSpec) -> bool:
    """Cells whose training is seed-sensitive (gradient descent involved)."""
    return cell.content == "cnn" or cell.classifier in ("mlp", "lr")


def run_cell(ctx: PipelineContext, cell: CellSpec, seeds: int, overrides: dict | None = None) -> CellResult:
    """Train one cell over the requested seeds; averages the test AUROC."""
    n_seeds = seeds if is_deep(cell) else 1
    aurocs, runs = [], []
    t0 = time.perf_counter()
    try:
        for s in range(n_seeds):
            seeded = CellSpec(
                content=cell.content,
                user_mode=cell.user_mode,
                classifier=cell.classifier,
                similarity=cell.similarity,
                history_len=cell.history_len,
                aggregation=cell.aggregation,
                seed=cell.seed + s,
            )
            run = train_cell(ctx, seeded, overrides)
            runs.append(run)
            aurocs.append(run.test_auroc)
    except TrainingError as exc:
        return CellResult(
            cell, len(aurocs), float("nan"), float("nan"),
            time.perf_counter() - t0, status="failed", error=str(exc), runs=runs,
        )
    arr = np.array(aurocs)
    return CellResult(
        cell,
        n_seeds,
        float(arr.mean()),
        float(arr.std(ddof=0)) if arr.size > 1 else 0.0,
        time.perf_counter() - t0,
        runs=runs,
    )


def run_matrix(
    ctx: PipelineContext,
    cells: list[CellSpec],
    seeds: int | None = None,
    overrides: dict | None = None,
    threads: int = 1,
) -> ExperimentReport:
    """Train every cell; cells are independent and may run on worker threads.

    Results keep the input cell order regardless of completion order. In
    deterministic mode callers pass threads=1.
    """
    seeds = seeds if seeds is not None else int(ctx.cfg["evaluation"]["seeds"])
    if threads > 1:
        # warm shared lazy artifacts once to avoid racing their construction
        if any(c.content == "tfidf" for c in cells):
            _ = ctx.vocab
        if any(c.content in ("embed", "cnn") for c in cells):
            _ = ctx.embeddings
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(run_cell, ctx, c, seeds, overrides) for c in cells]
            results = [f.result() for f in futures]
    else:
        results = [run_cell(ctx, c, seeds, overrides) for c in cells]
    return ExperimentReport(results)


def ablation_cells(base: CellSpec, axis: str, cfg: dict) -> list[CellSpec]:
    """Cells for one ablation axis relative to a base cell."""

    def variant(**kw) -> CellSpec:
        fields = dict(
            content=base.content,
            user_mode=base.user_mode,
            classifier=base.classifier,
            similarity=base.similarity,
            history_len=base.history_len,
            aggregation=base.aggregation,
            seed=base.seed,
        )
        fields.update(kw)
        return CellSpec(**fields)

    if axis == "similarity":
        return [variant(similarity=True), variant(similarity=False)]
    if axis == "user_mode":
        return [variant(user_mode=m) for m in ("received", "pos", "posneg")]
    if axis == "history":
        return [variant(history_len=h) for h in (3, 5, 10, 20)]
    if axis == "aggregation":
        kinds = ("uniform", "learned_global", "dot", "concat")
        return [variant(aggregation=k) for k in kinds]
    if axis == "content":
        return [variant(content=c) for c in ("tfidf", "embed", "cnn")]
    raise UsageError(f"unknown ablation axis {axis!r}")
