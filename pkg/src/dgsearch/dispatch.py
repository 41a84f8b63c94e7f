"""Initial solutions by serial dispatching."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dgsearch.djgraph import OrientedGraph
from dgsearch.instance import Instance


@dataclass
class DispatchState:
    """Serial schedule generation bookkeeping."""

    instance: Instance
    next_step: list[int] = field(init=False)
    machine_ready: list[int] = field(init=False)
    job_ready: list[int] = field(init=False)
    orders: list[list[int]] = field(init=False)

    def __post_init__(self):
        self.next_step = [0] * self.instance.num_jobs
        self.machine_ready = [0] * self.instance.num_machines
        self.job_ready = [0] * self.instance.num_jobs
        self.orders = [[] for _ in range(self.instance.num_machines)]

    def dispatchable(self) -> list[int]:
        """Jobs whose next operation can be dispatched."""
        M = self.instance.num_machines
        return [j for j, i in enumerate(self.next_step) if i < M]

    def dispatch(self, job: int) -> int:
        inst = self.instance
        step = self.next_step[job]
        m, p = inst.routes[job][step]
        start = max(self.machine_ready[m], self.job_ready[job])
        self.machine_ready[m] = self.job_ready[job] = start + p
        self.orders[m].append(inst.op(job, step))
        self.next_step[job] += 1
        return start

    def graph(self) -> OrientedGraph:
        return OrientedGraph(self.instance, self.orders)


def fdd_mwkr_init(instance: Instance) -> OrientedGraph:
    """Dispatch by the minimum ratio of flow due date to most work remaining.

    For the next operation ``i`` of job ``j``, the flow due date is the job's
    work through step ``i`` and the work remaining includes step ``i``.
    Ratios are compared exactly; ties go to the smallest job id.
    """
    state = DispatchState(instance)
    cum = [np.cumsum([p for _, p in r]).tolist() for r in instance.routes]
    for _ in range(instance.num_ops):
        best = None
        for j in state.dispatchable():
            i = state.next_step[j]
            fdd = cum[j][i]
            mwkr = cum[j][-1] - (cum[j][i - 1] if i else 0)
            # fdd / mwkr < best_fdd / best_mwkr, by cross-multiplication
            if best is None or fdd * best[2] < best[1] * mwkr:
                best = (j, fdd, mwkr)
        state.dispatch(best[0])
    return state.graph()


def random_init(instance: Instance, rng: np.random.Generator) -> OrientedGraph:
    """Uniformly random dispatching: any job with work left goes next."""
    state = DispatchState(instance)
    for _ in range(instance.num_ops):
        jobs = state.dispatchable()
        state.dispatch(jobs[int(rng.integers(len(jobs)))])
    return state.graph()


def initial_solution(instance: Instance, rule: str, rng: np.random.Generator | None = None) -> OrientedGraph:
    if rule == "fdd-mwkr":
        return fdd_mwkr_init(instance)
    if rule == "random":
        if rng is None:
            raise ValueError("random initialisation needs an rng")
        return random_init(instance, rng)
    raise ValueError(f"unknown init rule {rule!r}")
