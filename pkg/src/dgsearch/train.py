"""Entropy-regularised REINFORCE with periodic n-step updates."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from dgsearch import engine as E
from dgsearch import toposort
from dgsearch.bench import compute_gap
from dgsearch.errors import MissingTrace
from dgsearch.exact import exact_optimum
from dgsearch.instance import Instance, generate_random
from dgsearch.search import NeuralPolicy, RandomPolicy, advance, candidate_moves, init_state, run_search
from dgsearch.tbgat import TBGAT, PolicyConfig, make_batch

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    num_jobs: int = 10
    num_machines: int = 10
    batch_size: int = 64
    horizon: int = 500
    update_every: int = 10
    lr: float = 1e-5
    entropy_coef: float = 1e-5
    total_instances: int = 128_000
    seed: int = 0
    gamma: float = 1.0
    val_instances: int = 20
    val_every: int = 10
    val_steps: int = 500
    val_seed: int = 10_000_000
    policy: PolicyConfig = field(default_factory=PolicyConfig)

    def __post_init__(self):
        for name in ("batch_size", "horizon", "update_every", "total_instances", "num_jobs", "num_machines"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.update_every > self.horizon:
            raise ValueError("update_every must not exceed the horizon")
        if self.entropy_coef < 0:
            raise ValueError("entropy_coef must be >= 0")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")

    @property
    def num_batches(self) -> int:
        return max(1, self.total_instances // self.batch_size)


def segment_returns(rewards, gamma: float = 1.0) -> list[float]:
    """Discounted suffix sums of the rewards within one buffer."""
    out = [0.0] * len(rewards)
    acc = 0.0
    for j in range(len(rewards) - 1, -1, -1):
        acc = rewards[j] + gamma * acc
        out[j] = acc
    return out


@dataclass
class StepBatch:
    """One synchronous step over the active instances of a batch."""

    owners: list[int]  # batch index of each row
    log_probs: E.Tensor  # log pi(chosen move), one per row
    entropy: E.Tensor  # policy entropy, one per row
    rewards: list[int]


def objective(segment: list[StepBatch], batch_size: int, gamma: float, entropy_coef: float) -> E.Tensor | None:
    """``mean_b [ sum_j log pi(a_j) R_j + EC * mean_j H_j ]`` over one buffer of steps."""
    per_owner: dict[int, list[tuple[int, int]]] = {}
    for t, sb in enumerate(segment):
        for row, b in enumerate(sb.owners):
            per_owner.setdefault(b, []).append((t, row))
    if not per_owner:
        return None
    logp_w = [np.zeros(len(sb.owners)) for sb in segment]
    ent_w = [np.zeros(len(sb.owners)) for sb in segment]
    for b, cells in per_owner.items():
        returns = segment_returns([segment[t].rewards[row] for t, row in cells], gamma)
        for (t, row), ret in zip(cells, returns):
            logp_w[t][row] = ret / batch_size
            ent_w[t][row] = entropy_coef / (len(cells) * batch_size)
    terms = []
    for sb, lw, ew in zip(segment, logp_w, ent_w):
        terms.append(E.total(E.mul(sb.log_probs, lw)))
        terms.append(E.total(E.mul(sb.entropy, ew)))
    obj = terms[0]
    for t in terms[1:]:
        obj = E.add(obj, t)
    return obj


def reinforce_update(model: TBGAT, segment: list[StepBatch], lr: float, entropy_coef: float, batch_size: int, gamma: float = 1.0) -> bool:
    """Ascend the objective by one optimiser step; returns False if nothing was stored."""
    obj = objective(segment, batch_size, gamma, entropy_coef)
    segment.clear()
    if obj is None:
        return False
    if not obj.requires_grad:
        raise MissingTrace("stored log-probabilities carry no gradient trace")
    E.backward(E.neg(obj))
    E.optimizer_step(model.store, lr)
    return True


def rollout_step(model: TBGAT, states: list, active: list[int], rng: np.random.Generator) -> tuple[StepBatch | None, list]:
    """Sample one move for every active state; returns the step batch and updated states."""
    live, moves = [], []
    for b in active:
        ms = candidate_moves(states[b])
        if ms:
            live.append(b)
            moves.append(ms)
        else:
            states[b].terminal = True
    if not live:
        return None, states
    ranks = toposort.batched_ranks([states[b].graph for b in live])
    for b, r in zip(live, ranks):
        states[b]._ranks = r
    batch = make_batch([(states[b].graph, states[b].times, states[b].ranks) for b in live])
    scores = model.score_batch(batch, moves)
    chosen, rewards = [], []
    for row, b in enumerate(live):
        dist = scores.distribution(row)
        idx = int(min(np.searchsorted(np.cumsum(dist.probs), rng.random() * dist.probs.sum(), side="right"), len(dist.probs) - 1))
        states[b], rec = advance(states[b], moves[row][idx], idx, dist)
        chosen.append(scores.move_segs.starts[row] + idx)
        rewards.append(rec.reward)
    sb = StepBatch(live, E.gather_rows(scores.log_probs, np.array(chosen)), scores.entropy, rewards)
    return sb, states


@dataclass
class ValidationSet:
    instances: list[Instance]
    references: list[int]

    @classmethod
    def build(cls, config: TrainConfig) -> ValidationSet:
        insts = [generate_random(config.num_jobs, config.num_machines, config.val_seed + i) for i in range(config.val_instances)]
        refs = []
        for k, inst in enumerate(insts):
            if inst.num_jobs <= 3 and inst.num_machines <= 3:
                refs.append(exact_optimum(inst))
                continue
            fdd = init_state(inst, "fdd-mwkr").makespan
            rand = run_search(inst, RandomPolicy(), 200, seed=config.val_seed + k).best_makespan
            refs.append(min(fdd, rand))
        return cls(insts, refs)

    def mean_gap(self, model: TBGAT, steps: int) -> float:
        policy = NeuralPolicy(model)
        gaps = []
        for k, (inst, ref) in enumerate(zip(self.instances, self.references)):
            res = run_search(inst, policy, steps, seed=k, mode="greedy")
            gaps.append(compute_gap(res.best_makespan, ref))
        return float(np.mean(gaps))


@dataclass
class CurveRow:
    batch: int
    mean_reward: float
    mean_entropy: float
    validation_gap: float | None


@dataclass
class TrainResult:
    model: TBGAT
    curve: list[CurveRow]
    best_gap: float | None
    best_params: dict[str, np.ndarray]


def curve_csv(rows: list[CurveRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["batch", "mean_reward", "mean_entropy", "validation_gap"])
    for r in rows:
        w.writerow([r.batch, repr(r.mean_reward), repr(r.mean_entropy), "" if r.validation_gap is None else repr(r.validation_gap)])
    return buf.getvalue()


def train_loop(config: TrainConfig, out_dir: Path | None = None, model: TBGAT | None = None) -> TrainResult:
    """Train on instances generated on the fly; keeps the best-validation parameters."""
    model = model or TBGAT(config.policy, seed=config.seed)
    rng = np.random.default_rng(config.seed)
    val = ValidationSet.build(config) if config.val_instances > 0 else None
    curve: list[CurveRow] = []
    best_gap, best_params = None, model.store.copy_values()
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

    for bi in range(config.num_batches):
        seeds = rng.integers(0, 2**63 - 1, size=config.batch_size)
        states = [init_state(generate_random(config.num_jobs, config.num_machines, int(s)), "fdd-mwkr", int(s)) for s in seeds]
        for s in states:
            s.rng = rng
        segment: list[StepBatch] = []
        total_reward = np.zeros(config.batch_size)
        entropies: list[float] = []
        for t in range(config.horizon):
            active = [b for b, s in enumerate(states) if not s.terminal]
            sb = None
            if active:
                sb, states = rollout_step(model, states, active, rng)
            if sb is not None:
                segment.append(sb)
                for b, r in zip(sb.owners, sb.rewards):
                    total_reward[b] += r
                entropies.extend(sb.entropy.data.tolist())
            if (t + 1) % config.update_every == 0 or t == config.horizon - 1:
                reinforce_update(model, segment, config.lr, config.entropy_coef, config.batch_size, config.gamma)
        gap = None
        if val is not None and ((bi + 1) % config.val_every == 0 or bi == config.num_batches - 1):
            gap = val.mean_gap(model, config.val_steps)
            if best_gap is None or gap < best_gap:
                best_gap, best_params = gap, model.store.copy_values()
                if out_dir is not None:
                    model.save(out_dir / "best.ckpt")
        row = CurveRow(bi, float(total_reward.mean()), float(np.mean(entropies)) if entropies else 0.0, gap)
        curve.append(row)
        log.info("batch %d reward %.2f entropy %.4f gap %s", bi, row.mean_reward, row.mean_entropy, gap)
        if out_dir is not None:
            (out_dir / "curve.csv").write_text(curve_csv(curve))
    if out_dir is not None:
        model.save(out_dir / "last.ckpt")
    return TrainResult(model, curve, best_gap, best_params)
