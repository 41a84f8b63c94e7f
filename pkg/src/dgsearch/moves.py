"""N5 neighbourhood: swaps of the first/last adjacent pair in critical blocks."""

from __future__ import annotations

from dataclasses import dataclass

from dgsearch.djgraph import NONE, CriticalPath, OrientedGraph
from dgsearch.errors import InvalidMove


@dataclass(frozen=True)
class Move:
    first: int
    second: int
    machine: int


def generate_moves(graph: OrientedGraph, path: CriticalPath) -> list[Move]:
    """Candidate swaps along one critical path, in block order.

    Each block of two or more operations offers its first and its last pair;
    the initial block loses its first pair and the final block its last pair,
    so a block that is both contributes nothing.
    """
    machine = graph.instance.machine
    blocks = path.blocks
    last = len(blocks) - 1
    moves: list[Move] = []
    for k, block in enumerate(blocks):
        if len(block) < 2:
            continue
        pairs = []
        if k != 0:
            pairs.append((block[0], block[1]))
        if k != last:
            pairs.append((block[-2], block[-1]))
        for a, b in pairs:
            mv = Move(a, b, int(machine[a]))
            if not moves or moves[-1] != mv:
                moves.append(mv)
    return moves


def apply_move(graph: OrientedGraph, move: Move) -> OrientedGraph:
    """Swap two adjacent operations of one machine order; returns a new graph."""
    a, b, m = move.first, move.second, move.machine
    if not (0 <= m < len(graph.machine_orders)) or graph.mach_succ[a] != b or graph.instance.machine[a] != m:
        raise InvalidMove(f"{graph.instance.label(a)} is not immediately before {graph.instance.label(b)} on M{m}")
    order = list(graph.machine_orders[m])
    i = order.index(a)
    order[i], order[i + 1] = b, a
    orders = list(graph.machine_orders)
    orders[m] = tuple(order)

    pred, succ = graph.mach_pred[:], graph.mach_succ[:]
    before, after = pred[a], succ[b]
    if before != NONE:
        succ[before] = b
    if after != NONE:
        pred[after] = a
    pred[b], succ[b] = before, a
    pred[a], succ[a] = b, after
    return OrientedGraph(graph.instance, orders, pred, succ)
