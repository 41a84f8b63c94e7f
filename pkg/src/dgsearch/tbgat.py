"""Bidirectional graph-attention move policy.

Two attention stacks embed a solution graph: the forward stack lets every
node attend over itself and its direct predecessors, the backward stack over
itself and its direct successors. Per node the two outputs are concatenated,
mean-pooled into a graph vector, and the graph vector is appended to each
node. A move ``(x, z)`` is scored by an MLP over the two node embeddings and
scores are normalised per graph into a move distribution.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from dgsearch import engine as E
from dgsearch.djgraph import OrientedGraph, ScheduleTimes
from dgsearch.errors import CorruptFile, EmptyActionSet, ShapeMismatch
from dgsearch.moves import Move
from dgsearch.toposort import TopoRanks

TIME_SCALE = 99.0
START_SCALE = 1000.0


@dataclass(frozen=True)
class PolicyConfig:
    layers: int = 3
    heads: int = 4
    hidden: int = 128
    action_layers: int = 4
    in_dim: int = 3
    slope: float = E.LEAKY_SLOPE

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ValueError("hidden width must be divisible by the head count")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    @property
    def node_dim(self) -> int:
        return 4 * self.hidden

    @property
    def action_widths(self) -> list[int]:
        """Widths of the action MLP from input to the scalar head."""
        widths = [2 * self.node_dim]
        for _ in range(self.action_layers):
            widths.append(widths[-1] // 2)
        return widths + [1]


@dataclass(frozen=True)
class NodeFeatures:
    fwd: np.ndarray  # nodes x 3: (p, est, forward rank), normalised
    bwd: np.ndarray  # nodes x 3: (p, lst, backward rank), normalised


def build_features(graph: OrientedGraph, times: ScheduleTimes, ranks: TopoRanks) -> NodeFeatures:
    p = graph.instance.proc / TIME_SCALE
    fmax = ranks.fwd.max()
    bmax = ranks.bwd.max()
    fwd_rank = ranks.fwd / fmax if fmax > 0 else np.zeros(len(p))
    bwd_rank = ranks.bwd / bmax if bmax > 0 else np.zeros(len(p))
    fwd = np.column_stack([p, times.est / START_SCALE, fwd_rank])
    bwd = np.column_stack([p, times.lst / START_SCALE, bwd_rank])
    return NodeFeatures(fwd, bwd)


@dataclass
class GraphBatch:
    """Disjoint union of solution graphs prepared for the network."""

    num_nodes: int
    offsets: np.ndarray
    fwd_x: np.ndarray
    bwd_x: np.ndarray
    fwd_src: np.ndarray  # edge sources for the forward view (sorted by target)
    fwd_segs: E.Segments
    bwd_src: np.ndarray
    bwd_segs: E.Segments
    node_segs: E.Segments  # node -> member graph


def _view_edges(src: np.ndarray, dst: np.ndarray, n: int) -> tuple[np.ndarray, E.Segments]:
    """Edges ``target <- source`` with one self-loop per node, grouped by target."""
    loops = np.arange(n, dtype=np.int64)
    tgt = np.concatenate([dst, loops])
    srcs = np.concatenate([src, loops])
    order = np.argsort(tgt, kind="stable")
    return srcs[order], E.Segments(tgt[order], n)


def make_batch(items: Sequence[tuple[OrientedGraph, ScheduleTimes, TopoRanks]]) -> GraphBatch:
    sizes = [g.num_nodes for g, _, _ in items]
    offsets = np.zeros(len(items) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum(sizes)
    fwd_x, bwd_x, src, dst = [], [], [], []
    for (graph, times, ranks), off in zip(items, offsets):
        feats = build_features(graph, times, ranks)
        fwd_x.append(feats.fwd)
        bwd_x.append(feats.bwd)
        s, t = graph.arcs()
        src.append(s + off)
        dst.append(t + off)
    n = int(offsets[-1])
    src_all, dst_all = np.concatenate(src), np.concatenate(dst)
    fsrc, fsegs = _view_edges(src_all, dst_all, n)
    bsrc, bsegs = _view_edges(dst_all, src_all, n)
    node_segs = E.Segments(np.repeat(np.arange(len(items)), sizes), len(items))
    return GraphBatch(n, offsets, np.vstack(fwd_x), np.vstack(bwd_x), fsrc, fsegs, bsrc, bsegs, node_segs)


@dataclass
class ActionDistribution:
    probs: np.ndarray
    log_probs: np.ndarray
    entropy: float


@dataclass
class BatchScores:
    """Differentiable per-move log-probabilities and per-graph entropies."""

    log_probs: E.Tensor  # total moves, flat
    entropy: E.Tensor  # one per graph
    move_segs: E.Segments

    def distribution(self, b: int) -> ActionDistribution:
        a, c = self.move_segs.starts[b], self.move_segs.starts[b] + self.move_segs.counts[b]
        lp = self.log_probs.data[a:c]
        return ActionDistribution(np.exp(lp), lp, float(self.entropy.data[b]))


class TBGAT:
    """Parameters and forward pass of the move policy."""

    def __init__(self, config: PolicyConfig | None = None, seed: int = 0):
        self.config = config or PolicyConfig()
        self.store = E.ParamStore()
        rng = np.random.default_rng(seed)
        cfg = self.config
        for view in ("fem", "bem"):
            fan_in = cfg.in_dim
            for l in range(cfg.layers):
                self._uniform(rng, f"{view}.{l}.ag", (fan_in, cfg.hidden), fan_in)
                self._uniform(rng, f"{view}.{l}.at", (fan_in, cfg.hidden), fan_in)
                self._uniform(rng, f"{view}.{l}.att_self", (cfg.heads, cfg.head_dim), 2 * cfg.head_dim)
                self._uniform(rng, f"{view}.{l}.att_nbr", (cfg.heads, cfg.head_dim), 2 * cfg.head_dim)
                fan_in = cfg.hidden
        widths = cfg.action_widths
        for k, (a, b) in enumerate(zip(widths, widths[1:])):
            self._uniform(rng, f"act.{k}.w", (a, b), a)
            self._uniform(rng, f"act.{k}.b", (b,), a)

    def _uniform(self, rng, name, shape, fan_in):
        bound = fan_in ** -0.5
        self.store.add(name, rng.uniform(-bound, bound, size=shape))

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: t.shape for k, t in self.store}

    # -- network pieces -----------------------------------------------------------

    def attention_scores(self, view: str, layer: int, h: E.Tensor, src: np.ndarray, segs: E.Segments) -> E.Tensor:
        """Attention weights per (target, source) edge and head, softmaxed per target."""
        p = self.store
        t = E.matmul(h, p[f"{view}.{layer}.at"])
        s_self = E.headwise_dot(t, p[f"{view}.{layer}.att_self"])
        s_nbr = E.headwise_dot(t, p[f"{view}.{layer}.att_nbr"])
        logits = E.leaky_relu(E.add(E.gather_rows(s_self, segs.ids), E.gather_rows(s_nbr, src)), self.config.slope)
        return E.segment_softmax(logits, segs)

    def gat_layer(self, view: str, layer: int, h: E.Tensor, src: np.ndarray, segs: E.Segments) -> E.Tensor:
        alpha = self.attention_scores(view, layer, h, src, segs)
        z = E.matmul(h, self.store[f"{view}.{layer}.ag"])
        return E.attend(z, alpha, src, segs)

    def _stack(self, view: str, x: np.ndarray, src: np.ndarray, segs: E.Segments) -> E.Tensor:
        h = E.Tensor(x)
        for l in range(self.config.layers):
            h = self.gat_layer(view, l, h, src, segs)
        return h

    def embed(self, batch: GraphBatch) -> tuple[E.Tensor, E.Tensor]:
        """Final node embeddings (nodes x 4*hidden) and graph embeddings (graphs x 2*hidden)."""
        hf = self._stack("fem", batch.fwd_x, batch.fwd_src, batch.fwd_segs)
        hb = self._stack("bem", batch.bwd_x, batch.bwd_src, batch.bwd_segs)
        h_last = E.concat([hf, hb], axis=1)
        h_graph = E.mean_pool(h_last, batch.node_segs)
        h = E.concat([h_last, E.gather_rows(h_graph, batch.node_segs.ids)], axis=1)
        return h, h_graph

    def move_scores(self, h: E.Tensor, first: np.ndarray, second: np.ndarray) -> E.Tensor:
        x = E.concat([E.gather_rows(h, first), E.gather_rows(h, second)], axis=1)
        n_layers = len(self.config.action_widths) - 1
        for k in range(n_layers):
            x = E.add(E.matmul(x, self.store[f"act.{k}.w"]), self.store[f"act.{k}.b"])
            if k < n_layers - 1:
                x = E.leaky_relu(x, self.config.slope)
        return E.reshape(x, (-1,))

    def score_batch(self, batch: GraphBatch, moves: Sequence[Sequence[Move]]) -> BatchScores:
        """Move log-probabilities and entropies for every graph of ``batch``."""
        if any(len(m) == 0 for m in moves):
            raise EmptyActionSet("every graph needs at least one candidate move")
        h, _ = self.embed(batch)
        first = np.array([mv.first + batch.offsets[b] for b, ms in enumerate(moves) for mv in ms], dtype=np.int64)
        second = np.array([mv.second + batch.offsets[b] for b, ms in enumerate(moves) for mv in ms], dtype=np.int64)
        segs = E.Segments(np.repeat(np.arange(len(moves)), [len(m) for m in moves]), len(moves))
        scores = self.move_scores(h, first, second)
        logp = E.segment_log_softmax(scores, segs)
        ent = E.neg(E.segment_sum(E.mul(E.exp(logp), logp), segs))
        return BatchScores(logp, ent, segs)

    def score_moves(self, graph, times, ranks, moves: Sequence[Move]) -> ActionDistribution:
        if not moves:
            raise EmptyActionSet("no candidate moves; the state is terminal")
        with E.no_grad():
            out = self.score_batch(make_batch([(graph, times, ranks)]), [moves])
        return out.distribution(0)

    # -- checkpoints --------------------------------------------------------------

    def save(self, path) -> None:
        E.write_checkpoint(path, asdict(self.config), [(k, t.data) for k, t in self.store])

    @classmethod
    def load(cls, path) -> TBGAT:
        header, tensors = E.read_checkpoint(path)
        try:
            config = PolicyConfig(**header["config"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptFile(f"{path}: bad architecture config ({exc})") from None
        model = cls(config)
        expected = model.param_shapes()
        got = {name: arr.shape for name, arr in tensors}
        if list(expected) != [name for name, _ in tensors] or expected != got:
            diff = [k for k in expected if got.get(k) != expected[k]]
            raise ShapeMismatch(f"{path}: tensors disagree with the config at {diff[:3] or sorted(set(got) - set(expected))[:3]}")
        model.store.set_values(dict(tensors))
        return model

    def config_json(self) -> str:
        return json.dumps(asdict(self.config), indent=2, sort_keys=True)


def score_distribution(scores: np.ndarray) -> ActionDistribution:
    """Softmax over raw move scores (plain numpy, for inspection and tests)."""
    shifted = scores - scores.max()
    logp = shifted - np.log(np.exp(shifted).sum())
    probs = np.exp(logp)
    return ActionDistribution(probs, logp, float(-(probs * logp).sum()))
