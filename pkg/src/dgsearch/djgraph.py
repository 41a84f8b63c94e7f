"""Oriented disjunctive graphs: complete solutions, start times and critical paths."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from dgsearch.errors import CyclicGraph, DuplicateOp, MissingOp, WrongMachineAssignment
from dgsearch.instance import Instance

NONE = -1


class OrientedGraph:
    """A solution: one processing order per machine, plus the induced arcs.

    Arcs are the job arcs, the arcs between consecutive operations of each
    machine order, ``source -> first op of every job`` and
    ``last op of every job -> sink``. Acyclicity is not checked on
    construction; see :func:`is_acyclic`.
    """

    __slots__ = ("instance", "machine_orders", "mach_pred", "mach_succ", "_hash")

    def __init__(self, instance: Instance, machine_orders, mach_pred=None, mach_succ=None):
        self.instance = instance
        self.machine_orders: tuple[tuple[int, ...], ...] = tuple(tuple(o) for o in machine_orders)
        if mach_pred is None:
            mach_pred = [NONE] * instance.num_ops
            mach_succ = [NONE] * instance.num_ops
            for order in self.machine_orders:
                for a, b in zip(order, order[1:]):
                    mach_succ[a] = b
                    mach_pred[b] = a
        self.mach_pred: list[int] = mach_pred
        self.mach_succ: list[int] = mach_succ
        self._hash = None

    def __eq__(self, other):
        if not isinstance(other, OrientedGraph):
            return NotImplemented
        return self.instance == other.instance and self.machine_orders == other.machine_orders

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(self.machine_orders)
        return self._hash

    def __repr__(self):
        inst = self.instance
        orders = "; ".join(
            f"M{m}:[{','.join(inst.label(o) for o in order)}]" for m, order in enumerate(self.machine_orders)
        )
        return f"OrientedGraph({orders})"

    @property
    def num_nodes(self) -> int:
        return self.instance.num_nodes

    def predecessors(self, x: int) -> list[int]:
        inst = self.instance
        if x == inst.source:
            return []
        M = inst.num_machines
        if x == inst.sink:
            return [j * M + M - 1 for j in range(inst.num_jobs)]
        preds = [x - 1 if x % M else inst.source]
        mp = self.mach_pred[x]
        if mp != NONE:
            preds.append(mp)
        return preds

    def successors(self, x: int) -> list[int]:
        inst = self.instance
        if x == inst.sink:
            return []
        M = inst.num_machines
        if x == inst.source:
            return [j * M for j in range(inst.num_jobs)]
        succs = [x + 1 if x % M != M - 1 else inst.sink]
        ms = self.mach_succ[x]
        if ms != NONE:
            succs.append(ms)
        return succs

    def arcs(self) -> tuple[np.ndarray, np.ndarray]:
        """All arcs as parallel ``(src, dst)`` arrays over node ids."""
        inst = self.instance
        J, M = inst.num_jobs, inst.num_machines
        ops = np.arange(inst.num_ops).reshape(J, M)
        src = [np.full(J, inst.source), ops[:, :-1].ravel(), ops[:, -1]]
        dst = [ops[:, 0], ops[:, 1:].ravel(), np.full(J, inst.sink)]
        for order in self.machine_orders:
            if len(order) > 1:
                o = np.asarray(order)
                src.append(o[:-1])
                dst.append(o[1:])
        return np.concatenate(src).astype(np.int64), np.concatenate(dst).astype(np.int64)

    def topological_order(self) -> list[int] | None:
        """Kahn order over all nodes, or None when the graph has a cycle."""
        inst = self.instance
        M = inst.num_machines
        mach_pred, mach_succ = self.mach_pred, self.mach_succ
        indeg = [1 + (mach_pred[x] != NONE) for x in range(inst.num_ops)]
        indeg += [0, inst.num_jobs]
        order = [inst.source]
        stack = [j * M for j in range(inst.num_jobs)]
        for x in stack:
            indeg[x] -= 1
        stack = [x for x in stack if indeg[x] == 0]
        sink = inst.sink
        while stack:
            x = stack.pop()
            order.append(x)
            if x == sink:
                continue
            nxt = x + 1 if x % M != M - 1 else sink
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                stack.append(nxt)
            ms = mach_succ[x]
            if ms != NONE:
                indeg[ms] -= 1
                if indeg[ms] == 0:
                    stack.append(ms)
        if len(order) != inst.num_nodes:
            return None
        return order


def _as_op(instance: Instance, item) -> int:
    if isinstance(item, (tuple, list)):
        return instance.op(int(item[0]), int(item[1]))
    return int(item)


def build(instance: Instance, machine_orders: Sequence[Iterable]) -> OrientedGraph:
    """Checked construction from per-machine orders of op ids or ``(job, step)`` pairs."""
    if len(machine_orders) != instance.num_machines:
        raise WrongMachineAssignment(f"{len(machine_orders)} machine orders for {instance.num_machines} machines")
    orders = []
    seen = set()
    for m, order in enumerate(machine_orders):
        ops = [_as_op(instance, o) for o in order]
        for op in ops:
            if not 0 <= op < instance.num_ops:
                raise MissingOp(f"op id {op} out of range")
            if instance.machine[op] != m:
                raise WrongMachineAssignment(f"{instance.label(op)} belongs to machine {instance.machine[op]}, not {m}")
            if op in seen:
                raise DuplicateOp(f"{instance.label(op)} appears twice")
            seen.add(op)
        orders.append(ops)
    for m, expected in enumerate(instance.machine_ops):
        for op in expected:
            if op not in seen:
                raise MissingOp(f"{instance.label(op)} missing from machine {m}")
    return OrientedGraph(instance, orders)


def is_acyclic(graph: OrientedGraph) -> bool:
    return graph.topological_order() is not None


@dataclass(frozen=True)
class ScheduleTimes:
    """Earliest/latest start per node id and the makespan (exact integers)."""

    est: np.ndarray
    lst: np.ndarray
    makespan: int
    order: tuple[int, ...]


def compute_times(graph: OrientedGraph) -> ScheduleTimes:
    """Forward and backward CPM passes in one topological order each.

    ``est(x) = max over preds y of est(y) + p(y)`` with ``est(source) = 0``;
    ``lst(x) = min over succs z of lst(z) - p(x)`` with ``lst(sink) = makespan``.
    """
    order = graph.topological_order()
    if order is None:
        raise CyclicGraph("orientation contains a directed cycle")
    inst = graph.instance
    M = inst.num_machines
    p = inst.proc_list
    n, source, sink = inst.num_nodes, inst.source, inst.sink
    mach_pred, mach_succ = graph.mach_pred, graph.mach_succ
    last_ops = [j * M + M - 1 for j in range(inst.num_jobs)]

    est = [0] * n
    for x in order:
        if x == source:
            continue
        if x == sink:
            est[x] = max(est[y] + p[y] for y in last_ops)
            continue
        jp = x - 1 if x % M else source
        t = est[jp] + p[jp]
        mp = mach_pred[x]
        if mp != NONE:
            t = max(t, est[mp] + p[mp])
        est[x] = t
    makespan = est[sink]

    lst = [0] * n
    lst[sink] = makespan
    for x in reversed(order):
        if x == sink:
            continue
        if x == source:
            lst[x] = min(lst[j * M] for j in range(inst.num_jobs))
            continue
        js = x + 1 if x % M != M - 1 else sink
        t = lst[js]
        ms = mach_succ[x]
        if ms != NONE:
            t = min(t, lst[ms])
        lst[x] = t - p[x]
    return ScheduleTimes(np.array(est, dtype=np.int64), np.array(lst, dtype=np.int64), int(makespan), tuple(order))


@dataclass(frozen=True)
class CriticalPath:
    ops: tuple[int, ...]  # source ... sink
    blocks: tuple[tuple[int, ...], ...]


def blocks_of(instance: Instance, inner: Sequence[int]) -> tuple[tuple[int, ...], ...]:
    """Split a sequence of real ops into maximal same-machine runs."""
    blocks: list[list[int]] = []
    machine = instance.machine
    for op in inner:
        if blocks and machine[blocks[-1][-1]] == machine[op]:
            blocks[-1].append(op)
        else:
            blocks.append([op])
    return tuple(tuple(b) for b in blocks)


def critical_path(graph: OrientedGraph, times: ScheduleTimes, rng: np.random.Generator) -> CriticalPath:
    """Walk back from the sink through tight predecessors, breaking ties uniformly."""
    inst = graph.instance
    p = inst.proc_list
    est = times.est
    cur = inst.sink
    rev = [cur]
    while cur != inst.source:
        target = est[cur]
        cands = [y for y in graph.predecessors(cur) if est[y] + p[y] == target]
        cur = cands[0] if len(cands) == 1 else cands[int(rng.integers(len(cands)))]
        rev.append(cur)
    ops = tuple(reversed(rev))
    return CriticalPath(ops, blocks_of(inst, ops[1:-1]))


def schedule_rows(graph: OrientedGraph, times: ScheduleTimes) -> list[dict]:
    inst = graph.instance
    rows = []
    for j, route in enumerate(inst.routes):
        for i, (m, p) in enumerate(route):
            rows.append({"job": j, "step": i, "machine": m, "start": int(times.est[inst.op(j, i)]), "processing": p})
    return rows


def schedule_csv(graph: OrientedGraph, times: ScheduleTimes) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["job", "step", "machine", "start", "processing"], lineterminator="\n")
    writer.writeheader()
    writer.writerows(schedule_rows(graph, times))
    return buf.getvalue()


def gantt_json(graph: OrientedGraph, times: ScheduleTimes) -> str:
    bars = [
        {"machine": r["machine"], "job": r["job"], "step": r["step"], "start": r["start"], "end": r["start"] + r["processing"]}
        for r in schedule_rows(graph, times)
    ]
    bars.sort(key=lambda b: (b["machine"], b["start"]))
    return json.dumps({"makespan": times.makespan, "bars": bars}, indent=1)


def read_schedule_csv(text: str) -> list[dict]:
    return [{k: int(v) for k, v in row.items()} for row in csv.DictReader(io.StringIO(text))]


def check_schedule(instance: Instance, rows: list[dict]) -> int:
    """Verify a start-time table is feasible for ``instance``; return its makespan."""
    start = {(r["job"], r["step"]): r["start"] for r in rows}
    if len(start) != instance.num_ops:
        raise MissingOp(f"schedule has {len(start)} operations, instance {instance.num_ops}")
    per_machine: dict[int, list[tuple[int, int]]] = {}
    for j, route in enumerate(instance.routes):
        for i, (m, p) in enumerate(route):
            s = start[(j, i)]
            if s < 0 or (i > 0 and s < start[(j, i - 1)] + route[i - 1][1]):
                raise ValueError(f"job {j} step {i} starts at {s} before its job predecessor finishes")
            per_machine.setdefault(m, []).append((s, p))
    for m, spans in per_machine.items():
        spans.sort()
        for (s0, p0), (s1, _) in zip(spans, spans[1:]):
            if s1 < s0 + p0:
                raise ValueError(f"overlap on machine {m} at time {s1}")
    return max(start[(j, i)] + route[i][1] for j, route in enumerate(instance.routes) for i in range(len(route)))
