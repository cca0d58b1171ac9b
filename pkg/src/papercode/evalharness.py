"""Baseline-vs-pipeline experiments and their aggregate report."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

from .tsed import ComparisonResult, EditWeights, SourceSyntaxError, compare_sources, parse_to_tree

logger = logging.getLogger(__name__)


class NoUsableRecords(ValueError):
    pass


@dataclass(frozen=True)
class IterationRecord:
    paper_id: str
    iteration: int
    baseline_tsed: Optional[float]  # x100
    refined_tsed: Optional[float]  # x100
    baseline_failed: bool = False
    refined_failed: bool = False
    error: Optional[str] = None

    @property
    def usable(self) -> bool:
        return (
            not self.baseline_failed
            and not self.refined_failed
            and self.baseline_tsed is not None
            and self.refined_tsed is not None
        )

    def to_dict(self) -> dict:
        return {
            "paper_id": self.paper_id,
            "iteration": self.iteration,
            "baseline_tsed": self.baseline_tsed,
            "refined_tsed": self.refined_tsed,
            "baseline_failed": self.baseline_failed,
            "refined_failed": self.refined_failed,
            "error": self.error,
        }


@dataclass(frozen=True)
class ExperimentReport:
    paper_id: str
    weights: EditWeights
    avg_baseline: float
    avg_refined: float
    increment: float
    stability: float
    n_iterations: int
    records: tuple[IterationRecord, ...] = ()
    excluded: tuple[int, ...] = field(default=())


def population_std(values: Sequence[float]) -> float:
    if len(values) < 2:
        return 0.0
    return statistics.pstdev(values)


def aggregate(
    records: Sequence[IterationRecord], weights: EditWeights, paper_id: Optional[str] = None
) -> ExperimentReport:
    """Means of both columns, their difference, and the spread of the baseline column."""
    ordered = sorted(records, key=lambda r: r.iteration)
    usable = [r for r in ordered if r.usable]
    excluded = tuple(r.iteration for r in ordered if not r.usable)
    if not usable:
        raise NoUsableRecords("no iteration produced scores for both baseline and refined code")
    if excluded:
        logger.warning("iterations %s excluded from averages", list(excluded))
    baseline = [r.baseline_tsed for r in usable]
    refined = [r.refined_tsed for r in usable]
    avg_baseline = math.fsum(baseline) / len(baseline)
    avg_refined = math.fsum(refined) / len(refined)
    return ExperimentReport(
        paper_id=paper_id if paper_id is not None else usable[0].paper_id,
        weights=weights,
        avg_baseline=avg_baseline,
        avg_refined=avg_refined,
        increment=avg_refined - avg_baseline,
        stability=population_std(baseline),
        n_iterations=len(usable),
        records=tuple(ordered),
        excluded=excluded,
    )


def _fmt(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.2f}"


def _columns(reports: Sequence[ExperimentReport]) -> int:
    return max((max((r.iteration for r in rep.records), default=0) for rep in reports), default=0)


def report_rows(reports: Sequence[ExperimentReport]) -> tuple[list[str], list[list[str]]]:
    width = _columns(reports)
    header = ["id"]
    for n in range(1, width + 1):
        header += [f"iter{n}_baseline", f"iter{n}_refined"]
    header += ["avg_baseline", "avg_refined", "increment", "stability", "d", "i", "r"]
    rows = []
    for rep in reports:
        by_iter = {r.iteration: r for r in rep.records}
        row = [rep.paper_id]
        for n in range(1, width + 1):
            rec = by_iter.get(n)
            row += [_fmt(rec.baseline_tsed if rec else None), _fmt(rec.refined_tsed if rec else None)]
        row += [_fmt(rep.avg_baseline), _fmt(rep.avg_refined), _fmt(rep.increment), _fmt(rep.stability)]
        row += [f"{w:g}" for w in rep.weights.as_tuple()]
        rows.append(row)
    return header, rows


def render_report(reports: Sequence[ExperimentReport], fmt: str = "text") -> str:
    header, rows = report_rows(reports)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        return buf.getvalue()
    if fmt != "text":
        raise ValueError(f"unknown report format {fmt!r}")
    # text layout: weights collapsed into one (d,i,r) column
    header = header[:-3] + ["(d,i,r)"]
    rows = [row[:-3] + [rep.weights.render()] for row, rep in zip(rows, reports)]
    widths = [max(len(h), *(len(r[c]) for r in rows)) if rows else len(h) for c, h in enumerate(header)]
    lines = ["  ".join(cell.rjust(w) for cell, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(cell.rjust(w) for cell, w in zip(row, widths)).rstrip())
    notes = [f"{rep.paper_id}: iterations {list(rep.excluded)} excluded" for rep in reports if rep.excluded]
    if notes:
        lines.append("")
        lines.extend(notes)
    return "\n".join(lines) + "\n"


def parse_report_csv(text: str) -> list[dict]:
    """Rows of a CSV report with numeric fields as floats (None for n/a)."""
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        parsed: dict = {"id": row.pop("id")}
        for key, value in row.items():
            parsed[key] = None if value == "n/a" else float(value)
        out.append(parsed)
    return out


def reaggregate_csv_row(row: dict) -> ExperimentReport:
    records = []
    n = 1
    while f"iter{n}_baseline" in row:
        b, r = row[f"iter{n}_baseline"], row[f"iter{n}_refined"]
        if b is not None or r is not None:
            records.append(IterationRecord(row["id"], n, b, r, b is None, r is None))
        n += 1
    return aggregate(records, EditWeights(row["d"], row["i"], row["r"]), row["id"])


def sweep_weights(
    generated: str,
    ground_truth: str,
    grid: Sequence[EditWeights],
    grammar_id: str = "python",
) -> list[ComparisonResult]:
    """Score one pair under every weight triple, best similarity first."""
    if not grid:
        raise ValueError("weight grid is empty")
    for weights in grid:
        weights.check_ordering()
    results = [compare_sources(generated, ground_truth, grammar_id, w) for w in grid]
    return sorted(results, key=lambda r: -r.tsed)


def score_side(code: str, ground_truth: str, grammar_id: str, weights: EditWeights, side: str) -> Optional[float]:
    """TSED x100 for generated code, or None when the generated side fails to parse."""
    try:
        return compare_sources(code, ground_truth, grammar_id, weights).tsed_percent
    except SourceSyntaxError as exc:
        if exc.side == "ground_truth":
            raise
        logger.warning("%s code failed to parse: %s", side, exc)
        return None


IterationRunner = Callable[[int], tuple[str, str]]


def run_experiment(
    paper_id: str,
    ground_truth: str,
    weights: EditWeights,
    n: int,
    run_iteration: IterationRunner,
    grammar_id: str = "python",
    *,
    parallel: bool = False,
) -> list[IterationRecord]:
    """Score ``n`` independent iterations against the ground truth.

    ``run_iteration(i)`` returns (baseline source, refined source) for
    iteration ``i``. A generation failure is recorded on that iteration
    only; an unparseable ground truth is fatal. With ``parallel`` the
    iterations are generated concurrently and scored in order.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    try:
        parse_to_tree(ground_truth, grammar_id)
    except SourceSyntaxError as exc:
        raise exc.with_side("ground_truth") from None

    def attempt(i: int):
        try:
            return run_iteration(i), None
        except Exception as exc:  # noqa: BLE001 - one failed iteration must not sink the rest
            return None, exc

    if parallel:
        with ThreadPoolExecutor() as pool:
            outcomes = list(pool.map(attempt, range(1, n + 1)))
    else:
        outcomes = [attempt(i) for i in range(1, n + 1)]

    records = []
    for i, (sources, exc) in enumerate(outcomes, start=1):
        if exc is not None:
            logger.warning("iteration %d failed: %s", i, exc)
            records.append(IterationRecord(paper_id, i, None, None, True, True, f"{type(exc).__name__}: {exc}"))
            continue
        baseline_code, refined_code = sources
        b = score_side(baseline_code, ground_truth, grammar_id, weights, "baseline")
        r = score_side(refined_code, ground_truth, grammar_id, weights, "refined")
        records.append(IterationRecord(paper_id, i, b, r, b is None, r is None))
    return records


@dataclass(frozen=True)
class PaperEntry:
    """One line of an evaluation manifest: a paper and its reference implementation."""

    id: str
    domain: str
    description: str
    code_url: str
    weights: EditWeights
    paper_path: Optional[str] = None
    references_dir: Optional[str] = None
    ground_truth_path: Optional[str] = None


def load_paper_manifest(path: str | Path) -> list[PaperEntry]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    entries = []
    for item in data["papers"]:
        entries.append(
            PaperEntry(
                id=str(item["id"]),
                domain=item.get("domain", ""),
                description=item.get("description", ""),
                code_url=item.get("code_url", ""),
                weights=EditWeights(*item["weights"]),
                paper_path=item.get("paper_path"),
                references_dir=item.get("references_dir"),
                ground_truth_path=item.get("ground_truth_path"),
            )
        )
    ids = [e.id for e in entries]
    if len(set(ids)) != len(ids):
        raise ValueError("paper ids in a manifest must be unique")
    return entries
