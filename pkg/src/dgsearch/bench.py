"""Datasets, reference makespans, gap reports and the scaling probe."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from dgsearch.djgraph import check_schedule, compute_times, schedule_csv, schedule_rows
from dgsearch.errors import DgsearchError, NonPositiveReference
from dgsearch.instance import Instance, generate_random, load

REPORT_VERSION = 1
EVAL_BUDGETS = (500, 1000, 2000, 5000)
REFERENCES_FILE = "references.csv"


def compute_gap(achieved: float, reference: float) -> float:
    """Relative gap in percent; negative when ``achieved`` beats the reference."""
    if reference <= 0:
        raise NonPositiveReference(f"reference makespan must be positive, got {reference}")
    return (achieved - reference) / reference * 100.0


@dataclass
class DatasetEntry:
    name: str
    instance: Instance
    reference: int | None = None


@dataclass
class Dataset:
    entries: list[DatasetEntry]
    errors: dict[str, str] = field(default_factory=dict)  # file name -> parser message


def read_references(path: Path) -> dict[str, int]:
    refs = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            refs[row["name"].strip()] = int(row["makespan"])
    return refs


def load_dataset(directory, fmt: str = "orlib") -> Dataset:
    """Parse every instance file in ``directory``; files that fail are listed, not fatal."""
    directory = Path(directory)
    ref_path = directory / REFERENCES_FILE
    refs = read_references(ref_path) if ref_path.exists() else {}
    entries, errors = [], {}
    for path in sorted(directory.iterdir()):
        if not path.is_file() or path.name == REFERENCES_FILE or path.name.startswith("."):
            continue
        try:
            inst = load(path, fmt)
        except (DgsearchError, UnicodeDecodeError) as exc:
            errors[path.name] = str(exc)
            continue
        entries.append(DatasetEntry(inst.name, inst, refs.get(inst.name)))
    return Dataset(entries, errors)


@dataclass
class GapRow:
    name: str
    jobs: int
    machines: int
    steps: int
    makespan: int
    reference: int | None
    gap: float | None
    time_s: float
    steps_used: int


@dataclass
class GapReport:
    rows: list[GapRow]

    def mean_gap(self, steps: int | None = None) -> float | None:
        gaps = [r.gap for r in self.rows if r.gap is not None and (steps is None or r.steps == steps)]
        return float(np.mean(gaps)) if gaps else None

    def aggregates(self, include_time: bool = True) -> list[dict]:
        groups: dict[tuple[int, int, int], list[GapRow]] = {}
        for r in self.rows:
            groups.setdefault((r.jobs, r.machines, r.steps), []).append(r)
        out = []
        for (j, m, s), rows in sorted(groups.items()):
            gaps = [r.gap for r in rows if r.gap is not None]
            agg = {"size": f"{j}x{m}", "steps": s, "instances": len(rows),
                   "mean_gap": float(np.mean(gaps)) if gaps else None}
            if include_time:
                agg["mean_time_s"] = float(np.mean([r.time_s for r in rows]))
            out.append(agg)
        return out

    def to_json(self, include_time: bool = True) -> str:
        rows = []
        for r in self.rows:
            d = asdict(r)
            if not include_time:
                d.pop("time_s")
            rows.append(d)
        doc = {"version": REPORT_VERSION, "instances": rows, "aggregates": self.aggregates(include_time)}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def to_csv(self, include_time: bool = True) -> str:
        buf = io.StringIO()
        cols = [f for f in GapRow.__dataclass_fields__ if include_time or f != "time_s"]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.rows:
            d = asdict(r)
            w.writerow(["" if d[c] is None else d[c] for c in cols])
        return buf.getvalue()


def run_eval(
    dataset: Dataset | Sequence[DatasetEntry],
    policy,
    budgets: Sequence[int] = (500,),
    seed: int = 0,
    mode: str = "sample",
    init_rule: str = "fdd-mwkr",
    schedule_dir: Path | None = None,
) -> GapReport:
    """Search every instance once per budget and re-validate each achieved schedule."""
    from dgsearch.search import run_search

    entries = dataset.entries if isinstance(dataset, Dataset) else list(dataset)
    rows = []
    for entry in entries:
        for budget in budgets:
            t0 = time.perf_counter()
            res = run_search(entry.instance, policy, budget, seed=seed, mode=mode, init_rule=init_rule)
            elapsed = time.perf_counter() - t0
            times = compute_times(res.best_graph)
            sched = schedule_rows(res.best_graph, times)
            checked = check_schedule(entry.instance, sched)
            if checked != res.best_makespan:
                raise AssertionError(f"{entry.name}: schedule re-check gives {checked}, search reported {res.best_makespan}")
            if schedule_dir is not None:
                Path(schedule_dir).mkdir(parents=True, exist_ok=True)
                (Path(schedule_dir) / f"{entry.name}_{budget}.csv").write_text(schedule_csv(res.best_graph, times))
            gap = compute_gap(res.best_makespan, entry.reference) if entry.reference is not None else None
            rows.append(GapRow(entry.name, entry.instance.num_jobs, entry.instance.num_machines, budget,
                               res.best_makespan, entry.reference, gap, elapsed, res.steps_run))
    return GapReport(rows)


@dataclass
class ScalingRow:
    jobs: int
    machines: int
    mean_step_s: float
    steps: int


@dataclass
class ScalingTable:
    rows: list[ScalingRow]
    r_squared: float
    slope: float
    intercept: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["jobs", "machines", "mean_step_s", "steps"])
        for r in self.rows:
            w.writerow([r.jobs, r.machines, repr(r.mean_step_s), r.steps])
        return buf.getvalue()


def linear_fit(x: Sequence[float], y: Sequence[float]) -> tuple[float, float, float]:
    """Least-squares line; returns ``(slope, intercept, r_squared)``."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def scaling_probe(
    sizes: Sequence[tuple[int, int]],
    steps: int,
    policy,
    instances_per_size: int = 3,
    seed: int = 0,
    axis: str | None = None,
) -> ScalingTable:
    """Mean wall time per search step for each size, fitted against the varying dimension."""
    from dgsearch.search import run_search

    rows = []
    for J, M in sizes:
        per_step = []
        for k in range(instances_per_size):
            inst = generate_random(J, M, seed + k)
            res = run_search(inst, policy, steps, seed=seed + k, mode="sample", init_rule="fdd-mwkr")
            per_step.append(res.wall_time / max(res.steps_run, 1))
        rows.append(ScalingRow(J, M, float(np.mean(per_step)), steps))
    if axis is None:
        axis = "jobs" if len({r.jobs for r in rows}) > 1 else "machines"
    xs = [getattr(r, axis) for r in rows]
    slope, intercept, r2 = linear_fit(xs, [r.mean_step_s for r in rows])
    return ScalingTable(rows, r2, slope, intercept)
