"""Batched forward/backward topological ranks by synchronous message passing.

A node's forward rank is the number of arcs on the longest path reaching it
from any zero in-degree node. Each round every node takes the max over its
in-neighbours of ``message + 1`` (zero in-degree nodes stay at 0); the
iteration reaches its fixpoint after ``L + 1`` rounds, ``L`` being the
longest path length. All member graphs of a batch advance together.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from dgsearch.errors import CyclicGraph

UNREACHED = np.iinfo(np.int64).min


@dataclass(frozen=True)
class TopoRanks:
    fwd: np.ndarray
    bwd: np.ndarray


@dataclass(frozen=True, eq=False)
class BatchedDag:
    """Disjoint union of DAGs: global arc list plus per-node graph membership."""

    num_nodes: int
    src: np.ndarray
    dst: np.ndarray
    graph_index: np.ndarray
    offsets: np.ndarray  # start node of each member graph, plus total at the end

    @property
    def num_graphs(self) -> int:
        return len(self.offsets) - 1

    @cached_property
    def _gather_plan(self):
        order = np.argsort(self.dst, kind="stable")
        dst_sorted = self.dst[order]
        if len(dst_sorted):
            starts = np.flatnonzero(np.r_[True, dst_sorted[1:] != dst_sorted[:-1]])
        else:
            starts = np.zeros(0, dtype=np.int64)
        targets = dst_sorted[starts]
        return self.src[order], starts, targets

    @cached_property
    def roots(self) -> np.ndarray:
        indeg = np.bincount(self.dst, minlength=self.num_nodes)
        return indeg == 0

    def reversed(self) -> BatchedDag:
        return BatchedDag(self.num_nodes, self.dst, self.src, self.graph_index, self.offsets)

    def split(self, values: np.ndarray) -> list[np.ndarray]:
        return [values[a:b] for a, b in zip(self.offsets[:-1], self.offsets[1:])]


def make_dag(num_nodes: int, src, dst) -> BatchedDag:
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    if len(src) and (src.min() < 0 or dst.min() < 0 or max(src.max(), dst.max()) >= num_nodes):
        raise ValueError("arc endpoint out of range")
    return BatchedDag(num_nodes, src, dst, np.zeros(num_nodes, dtype=np.int64), np.array([0, num_nodes]))


def batch(dags: Sequence) -> BatchedDag:
    """Disjoint union of ``BatchedDag``s or oriented graphs (anything with ``arcs()``)."""
    parts = []
    for d in dags:
        if isinstance(d, BatchedDag):
            parts.append((d.num_nodes, d.src, d.dst))
        else:
            s, t = d.arcs()
            parts.append((d.num_nodes, s, t))
    offsets = np.zeros(len(parts) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([p[0] for p in parts])
    src = np.concatenate([p[1] + off for p, off in zip(parts, offsets)]) if parts else np.zeros(0, np.int64)
    dst = np.concatenate([p[2] + off for p, off in zip(parts, offsets)]) if parts else np.zeros(0, np.int64)
    membership = np.repeat(np.arange(len(parts)), [p[0] for p in parts])
    return BatchedDag(int(offsets[-1]), src, dst, membership, offsets)


def initial_messages(dag: BatchedDag) -> np.ndarray:
    msgs = np.full(dag.num_nodes, UNREACHED, dtype=np.int64)
    msgs[dag.roots] = 0
    return msgs


def mpo_round(dag: BatchedDag, messages: np.ndarray) -> np.ndarray:
    """One synchronous round: ``new(x) = max over in-neighbours y of messages(y) + 1``."""
    src_sorted, starts, targets = dag._gather_plan
    new = np.full(dag.num_nodes, UNREACHED, dtype=np.int64)
    if len(starts):
        vals = messages[src_sorted]
        vals = np.where(vals == UNREACHED, UNREACHED, vals + 1)
        new[targets] = np.maximum.reduceat(vals, starts)
    new[dag.roots] = 0
    return new


def mpo_fixpoint(dag: BatchedDag) -> tuple[np.ndarray, int]:
    """Iterate rounds to the fixpoint; return ``(ranks, rounds)``."""
    msgs = initial_messages(dag)
    for rounds in range(1, dag.num_nodes + 2):
        new = mpo_round(dag, msgs)
        if np.array_equal(new, msgs):
            if (new == UNREACHED).any():
                raise CyclicGraph("nodes on or behind a cycle never receive a message")
            return new, rounds
        msgs = new
    raise CyclicGraph(f"no fixpoint within {dag.num_nodes + 1} rounds")


def forward_ranks(dag: BatchedDag) -> np.ndarray:
    return mpo_fixpoint(dag)[0]


def backward_ranks(dag: BatchedDag) -> np.ndarray:
    return mpo_fixpoint(dag.reversed())[0]


def ranks(graph) -> TopoRanks:
    """Forward and backward ranks of a single oriented graph."""
    dag = batch([graph])
    return TopoRanks(forward_ranks(dag), backward_ranks(dag))


def batched_ranks(graphs: Sequence) -> list[TopoRanks]:
    dag = batch(graphs)
    fwd, bwd = forward_ranks(dag), backward_ranks(dag)
    return [TopoRanks(f, b) for f, b in zip(dag.split(fwd), dag.split(bwd))]
