"""Exact makespan oracles for small instances.

``brute_force_optimum`` enumerates every machine-order combination and is
only practical up to about 3x3 or 4x3. ``branch_and_bound`` enumerates
active schedules (Giffler-Thompson branching on the conflict set of the
machine that finishes first) and prunes with job-path bounds and a
preemptive one-machine bound with heads and tails per machine.
"""

from __future__ import annotations

import heapq
import itertools
import math

from dgsearch.djgraph import OrientedGraph, compute_times, is_acyclic
from dgsearch.instance import Instance


def brute_force_optimum(instance: Instance) -> tuple[int, OrientedGraph]:
    best = None
    per_machine = [list(itertools.permutations(ops)) for ops in instance.machine_ops]
    for combo in itertools.product(*per_machine):
        g = OrientedGraph(instance, combo)
        if not is_acyclic(g):
            continue
        ms = compute_times(g).makespan
        if best is None or ms < best[0]:
            best = (ms, g)
    return best


def _preemptive_bound(jobs: list[tuple[int, int, int]]) -> int:
    """Optimal max(C + q) of a preemptive one-machine schedule with heads ``r`` and tails ``q``."""
    jobs = sorted(jobs)
    heap: list[tuple[int, int]] = []  # (-q, remaining p)
    t = jobs[0][0]
    i, n, best = 0, len(jobs), 0
    while i < n or heap:
        if not heap and t < jobs[i][0]:
            t = jobs[i][0]
        while i < n and jobs[i][0] <= t:
            r, p, q = jobs[i]
            heapq.heappush(heap, (-q, p))
            i += 1
        negq, rem = heapq.heappop(heap)
        horizon = jobs[i][0] if i < n else math.inf
        if t + rem <= horizon:
            t += rem
            best = max(best, t - negq)
        else:
            heapq.heappush(heap, (negq, rem - (horizon - t)))
            t = horizon
    return best


class _BnB:
    def __init__(self, instance: Instance, upper_bound: float, node_limit: int | None):
        self.inst = instance
        self.J, self.M = instance.num_jobs, instance.num_machines
        self.mach = [[m for m, _ in r] for r in instance.routes]
        self.p = [[p for _, p in r] for r in instance.routes]
        self.tail = [[sum(r[k + 1 :]) for k in range(len(r))] for r in self.p]
        self.best = upper_bound
        self.best_orders = None
        self.nodes = 0
        self.node_limit = node_limit
        self.exhausted = False

    def lower_bound(self, ns, jr, mr) -> int:
        J, M = self.J, self.M
        lb = 0
        per_machine: list[list[tuple[int, int, int]]] = [[] for _ in range(M)]
        for j in range(J):
            k = ns[j]
            if k == M:
                lb = max(lb, jr[j])
                continue
            head = jr[j]
            for kk in range(k, M):
                m, p = self.mach[j][kk], self.p[j][kk]
                head = max(head, mr[m])
                per_machine[m].append((head, p, self.tail[j][kk]))
                head += p
            lb = max(lb, head)
        for ops in per_machine:
            if ops:
                lb = max(lb, _preemptive_bound(ops))
        return lb

    def search(self, ns, jr, mr, orders) -> None:
        if self.node_limit is not None and self.nodes >= self.node_limit:
            self.exhausted = True
            return
        self.nodes += 1
        J, M = self.J, self.M
        cands = []
        for j in range(J):
            k = ns[j]
            if k < M:
                m = self.mach[j][k]
                est = max(jr[j], mr[m])
                cands.append((est + self.p[j][k], j, m, est))
        if not cands:
            ms = max(jr)
            if ms < self.best:
                self.best = ms
                self.best_orders = [list(o) for o in orders]
            return
        if self.lower_bound(ns, jr, mr) >= self.best:
            return
        c_star, _, m_star, _ = min(cands)
        conflict = [(est, -self.tail[j][ns[j]], j) for ect, j, m, est in cands if m == m_star and est < c_star]
        conflict.sort()
        for est, _, j in conflict:
            k = ns[j]
            p = self.p[j][k]
            old_jr, old_mr = jr[j], mr[m_star]
            jr[j] = mr[m_star] = est + p
            ns[j] += 1
            orders[m_star].append(j * M + k)
            self.search(ns, jr, mr, orders)
            orders[m_star].pop()
            ns[j] -= 1
            jr[j], mr[m_star] = old_jr, old_mr


def branch_and_bound(
    instance: Instance, upper_bound: int | None = None, node_limit: int | None = None
) -> tuple[int, OrientedGraph | None, bool]:
    """Return ``(makespan, graph, proved_optimal)``.

    With an ``upper_bound`` the search only looks for strictly better
    schedules; if none exists the bound is returned with ``graph=None``.
    ``proved_optimal`` is False only when ``node_limit`` cut the search short.
    """
    ub = math.inf if upper_bound is None else upper_bound
    bnb = _BnB(instance, ub, node_limit)
    J, M = instance.num_jobs, instance.num_machines
    bnb.search([0] * J, [0] * J, [0] * M, [[] for _ in range(M)])
    graph = OrientedGraph(instance, bnb.best_orders) if bnb.best_orders is not None else None
    return int(bnb.best), graph, not bnb.exhausted


def exact_optimum(instance: Instance, upper_bound: int | None = None) -> int:
    """Optimal makespan; exhaustive enumeration for tiny instances, branch and bound otherwise."""
    if instance.num_jobs <= 3 and instance.num_machines <= 3:
        return brute_force_optimum(instance)[0]
    ms, _, proved = branch_and_bound(instance, upper_bound)
    assert proved
    return ms
