"""Local search over N5 moves, driven by a move policy."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from typing import Protocol, Sequence

import numpy as np

from dgsearch import toposort
from dgsearch.dispatch import initial_solution
from dgsearch.djgraph import OrientedGraph, ScheduleTimes, compute_times, critical_path
from dgsearch.instance import Instance
from dgsearch.moves import Move, apply_move, generate_moves
from dgsearch.tbgat import TBGAT, ActionDistribution


class Policy(Protocol):
    def distribution(self, state: "SearchState", moves: Sequence[Move]) -> ActionDistribution: ...


class RandomPolicy:
    """Uniform choice among the candidate moves."""

    def distribution(self, state, moves):
        k = len(moves)
        probs = np.full(k, 1.0 / k)
        return ActionDistribution(probs, np.log(probs), float(np.log(k)))


class NeuralPolicy:
    def __init__(self, model: TBGAT):
        self.model = model

    def distribution(self, state, moves):
        return self.model.score_moves(state.graph, state.times, state.ranks, moves)


@dataclass
class SearchState:
    instance: Instance
    graph: OrientedGraph
    times: ScheduleTimes
    incumbent_makespan: int
    incumbent_graph: OrientedGraph
    rng: np.random.Generator
    step_count: int = 0
    terminal: bool = False
    _ranks: toposort.TopoRanks | None = field(default=None, repr=False)

    @property
    def makespan(self) -> int:
        return self.times.makespan

    @property
    def ranks(self) -> toposort.TopoRanks:
        if self._ranks is None:
            self._ranks = toposort.ranks(self.graph)
        return self._ranks


@dataclass(frozen=True)
class StepRecord:
    step: int
    move_index: int | None
    move: Move | None
    reward: int
    log_prob: float
    entropy: float
    terminal: bool
    makespan: int
    incumbent: int

    def as_json(self, instance: Instance) -> dict:
        move = None
        if self.move is not None:
            move = [instance.label(self.move.first), instance.label(self.move.second), self.move.machine]
        return {
            "step": self.step,
            "makespan": self.makespan,
            "incumbent": self.incumbent,
            "reward": self.reward,
            "move": move,
            "terminal": self.terminal,
        }


def state_from_graph(graph: OrientedGraph, rng: np.random.Generator) -> SearchState:
    times = compute_times(graph)
    return SearchState(graph.instance, graph, times, times.makespan, graph, rng)


def init_state(instance: Instance, init_rule: str = "fdd-mwkr", seed: int = 0) -> SearchState:
    rng = np.random.default_rng(seed)
    return state_from_graph(initial_solution(instance, init_rule, rng), rng)


def candidate_moves(state: SearchState) -> list[Move]:
    """Sample one critical path of the current seed and list its N5 moves."""
    path = critical_path(state.graph, state.times, state.rng)
    return generate_moves(state.graph, path)


def advance(state: SearchState, move: Move, index: int, dist: ActionDistribution) -> tuple[SearchState, StepRecord]:
    """Apply ``move`` and book the reward against the incumbent."""
    graph = apply_move(state.graph, move)
    times = compute_times(graph)
    reward = max(state.incumbent_makespan - times.makespan, 0)
    new = replace(state, graph=graph, times=times, step_count=state.step_count + 1, _ranks=None)
    if times.makespan < state.incumbent_makespan:
        new.incumbent_makespan = times.makespan
        new.incumbent_graph = graph
    rec = StepRecord(
        state.step_count, index, move, reward, float(dist.log_probs[index]), dist.entropy, False,
        times.makespan, new.incumbent_makespan,
    )
    return new, rec


def terminal_record(state: SearchState) -> StepRecord:
    return StepRecord(state.step_count, None, None, 0, 0.0, 0.0, True, state.makespan, state.incumbent_makespan)


def choose(dist: ActionDistribution, mode: str, rng: np.random.Generator) -> int:
    if mode == "greedy":
        return int(np.argmax(dist.probs))
    if mode == "sample":
        cdf = np.cumsum(dist.probs)
        return int(min(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"), len(cdf) - 1))
    raise ValueError(f"unknown mode {mode!r}")


def step(state: SearchState, policy: Policy, mode: str = "sample") -> tuple[SearchState, StepRecord]:
    if state.terminal:
        return state, terminal_record(state)
    moves = candidate_moves(state)
    if not moves:
        state = replace(state, terminal=True)
        return state, terminal_record(state)
    dist = policy.distribution(state, moves)
    index = choose(dist, mode, state.rng)
    return advance(state, moves[index], index, dist)


@dataclass
class SearchResult:
    best_makespan: int
    best_graph: OrientedGraph
    initial_makespan: int
    trace: list[StepRecord]
    wall_time: float
    steps_run: int

    def incumbent_after(self, budget: int) -> int:
        """Incumbent makespan after the first ``budget`` steps."""
        best = self.initial_makespan
        for rec in self.trace[:budget]:
            best = min(best, rec.incumbent)
        return best


def run_search(
    instance: Instance,
    policy: Policy,
    steps: int,
    seed: int = 0,
    mode: str = "sample",
    init_rule: str = "fdd-mwkr",
    initial_graph: OrientedGraph | None = None,
) -> SearchResult:
    """Run up to ``steps`` improvement steps, stopping early at a terminal state."""
    if steps < 0:
        raise ValueError("steps must be non-negative")
    t0 = time.perf_counter()
    if initial_graph is not None:
        state = state_from_graph(initial_graph, np.random.default_rng(seed))
    else:
        state = init_state(instance, init_rule, seed)
    initial = state.makespan
    trace: list[StepRecord] = []
    for _ in range(steps):
        state, rec = step(state, policy, mode)
        trace.append(rec)
        if rec.terminal:
            break
    return SearchResult(
        state.incumbent_makespan, state.incumbent_graph, initial, trace, time.perf_counter() - t0, state.step_count
    )


def trace_jsonl(result: SearchResult, instance: Instance) -> str:
    return "".join(json.dumps(rec.as_json(instance)) + "\n" for rec in result.trace)
