"""Command-line entry point: ``dgsearch <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from dgsearch import toposort
from dgsearch.bench import EVAL_BUDGETS, GapReport, load_dataset, run_eval
from dgsearch.dispatch import initial_solution
from dgsearch.djgraph import build, check_schedule, compute_times, gantt_json, read_schedule_csv, schedule_csv
from dgsearch.errors import DgsearchError
from dgsearch.instance import generate_random, load, parse, to_orlib, to_taillard, validate
from dgsearch.search import NeuralPolicy, RandomPolicy, run_search, trace_jsonl
from dgsearch.tbgat import TBGAT, PolicyConfig
from dgsearch.train import TrainConfig, curve_csv, train_loop

FORMATS = ("orlib", "taillard")
INIT_RULES = ("fdd-mwkr", "random")
MODES = ("sample", "greedy")
REPORT_VERSION = 1


def _policy(path: str | None):
    return RandomPolicy() if path is None else NeuralPolicy(TBGAT.load(path))


def _write(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


def cmd_gen(args) -> int:
    rng = np.random.default_rng(args.seed)
    seeds = rng.integers(0, 2**31 - 1, size=args.count)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump = to_orlib if args.format == "orlib" else to_taillard
    width = len(str(max(args.count - 1, 0)))
    for k, s in enumerate(seeds):
        inst = generate_random(args.jobs, args.machines, int(s))
        name = f"{args.jobs}x{args.machines}_{k:0{width}d}"
        (out / f"{name}.txt").write_text(dump(inst))
    print(f"wrote {args.count} instances to {out}")
    return 0


def cmd_solve(args) -> int:
    inst = load(args.instance, args.format)
    policy = _policy(args.policy)
    res = run_search(inst, policy, args.steps, seed=args.seed, mode=args.mode, init_rule=args.init)
    times = compute_times(res.best_graph)
    report = {
        "version": REPORT_VERSION,
        "instance": inst.name,
        "jobs": inst.num_jobs,
        "machines": inst.num_machines,
        "init": args.init,
        "initial_makespan": res.initial_makespan,
        "makespan": res.best_makespan,
        "steps": args.steps,
        "steps_run": res.steps_run,
        "mode": args.mode,
        "policy": "random" if args.policy is None else Path(args.policy).name,
        "seed": args.seed,
    }
    if args.reference is not None:
        from dgsearch.bench import compute_gap

        report["reference"] = args.reference
        report["gap"] = compute_gap(res.best_makespan, args.reference)
    _write(args.out, json.dumps(report, indent=2, sort_keys=True) + "\n")
    if args.trace:
        _write(args.trace, trace_jsonl(res, inst))
    if args.schedule:
        _write(args.schedule, schedule_csv(res.best_graph, times))
    if args.gantt:
        _write(args.gantt, gantt_json(res.best_graph, times) + "\n")
    if args.out not in (None, "-"):
        print(f"{inst.name}: makespan {res.best_makespan} (initial {res.initial_makespan})")
    print(f"wall time {res.wall_time:.3f} s", file=sys.stderr)
    return 0


def _eval_one(payload):
    entry, policy_path, budgets, seed, mode, init = payload
    return run_eval([entry], _policy(policy_path), budgets, seed=seed, mode=mode, init_rule=init).rows


def cmd_eval(args) -> int:
    data = load_dataset(args.dataset, args.format)
    for name, msg in sorted(data.errors.items()):
        print(f"skipped {name}: {msg}", file=sys.stderr)
    if not data.entries:
        print("no instances loaded", file=sys.stderr)
        return 1
    payloads = [(e, args.policy, tuple(args.steps), args.seed, args.mode, args.init) for e in data.entries]
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            chunks = list(pool.map(_eval_one, payloads))
    else:
        chunks = [_eval_one(p) for p in payloads]
    report = GapReport([row for chunk in chunks for row in chunk])
    _write(args.out, report.to_json())
    if args.csv:
        _write(args.csv, report.to_csv())
    for budget in args.steps:
        gap = report.mean_gap(budget)
        print(f"steps {budget}: mean gap {'n/a' if gap is None else f'{gap:.3f}%'}", file=sys.stderr)
    return 0


def cmd_train(args) -> int:
    if args.workers != 1:
        print("note: rollouts run in one process; --workers is accepted for compatibility", file=sys.stderr)
    policy = PolicyConfig(layers=args.layers, heads=args.heads, hidden=args.hidden)
    cfg = TrainConfig(
        num_jobs=args.jobs, num_machines=args.machines, batch_size=args.batch_size, horizon=args.horizon,
        update_every=args.update_every, lr=args.lr, entropy_coef=args.entropy_coef,
        total_instances=args.instances, seed=args.seed, gamma=args.gamma, val_instances=args.val_instances,
        val_every=args.val_every, val_steps=args.val_steps, policy=policy,
    )
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    t0 = time.perf_counter()
    result = train_loop(cfg, Path(args.out))
    print(f"trained {cfg.num_batches} batches in {time.perf_counter() - t0:.1f} s; best validation gap {result.best_gap}",
          file=sys.stderr)
    return 0


def cmd_toposort(args) -> int:
    inst = load(args.instance, args.format)
    if args.orders:
        orders = json.loads(Path(args.orders).read_text())
        graph = build(inst, [[tuple(o) if isinstance(o, list) else o for o in ms] for ms in orders])
    else:
        graph = initial_solution(inst, args.init, np.random.default_rng(args.seed))
    r = toposort.ranks(graph)
    doc = {
        "nodes": [inst.label(x) for x in range(inst.num_nodes)],
        "forward": r.fwd.tolist(),
        "backward": r.bwd.tolist(),
    }
    _write(args.out, json.dumps(doc) + "\n")
    return 0


def cmd_validate(args) -> int:
    text = Path(args.instance).read_text()
    inst = parse(text, args.format, Path(args.instance).stem)
    problems = validate(inst)
    for p in problems:
        print(f"{args.instance}: {p}", file=sys.stderr)
    if problems:
        return 1
    print(f"{inst.name}: {inst.num_jobs} jobs x {inst.num_machines} machines, ok")
    if args.schedule:
        ms = check_schedule(inst, read_schedule_csv(Path(args.schedule).read_text()))
        print(f"schedule feasible, makespan {ms}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="dgsearch", description="Job shop local search with a learned move policy.",
                                     formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_, formatter_class=fmt)
        p.add_argument("--seed", type=int, default=0, help="seed for all randomness")
        return p

    def add_instance(p, required=True):
        p.add_argument("--instance", required=required, help="instance file")
        p.add_argument("--format", choices=FORMATS, default="orlib", help="instance file format")

    p = add("gen", "generate random instances")
    p.add_argument("--jobs", type=int, default=10)
    p.add_argument("--machines", type=int, default=10)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--format", choices=FORMATS, default="orlib")
    p.add_argument("--out", default="instances", help="output directory")
    p.set_defaults(func=cmd_gen)

    p = add("solve", "improve one instance")
    add_instance(p)
    p.add_argument("--init", choices=INIT_RULES, default="fdd-mwkr", help="initial solution rule")
    p.add_argument("--steps", type=int, default=500, help="improvement step budget")
    p.add_argument("--policy", default=None, help="checkpoint; omitted means uniform-random moves")
    p.add_argument("--mode", choices=MODES, default="sample", help="move selection")
    p.add_argument("--reference", type=int, default=None, help="reference makespan for a gap")
    p.add_argument("--out", default=None, help="report JSON (stdout when omitted)")
    p.add_argument("--trace", default=None, help="per-step JSONL trace")
    p.add_argument("--schedule", default=None, help="schedule CSV of the best solution")
    p.add_argument("--gantt", default=None, help="Gantt JSON of the best solution")
    p.set_defaults(func=cmd_solve)

    p = add("eval", "run a dataset and report gaps")
    p.add_argument("--dataset", required=True, help="directory of instances plus optional references.csv")
    p.add_argument("--format", choices=FORMATS, default="orlib")
    p.add_argument("--policy", default=None, help="checkpoint; omitted means uniform-random moves")
    p.add_argument("--steps", type=int, nargs="+", default=[EVAL_BUDGETS[0]], help="one or more step budgets")
    p.add_argument("--init", choices=INIT_RULES, default="fdd-mwkr")
    p.add_argument("--mode", choices=MODES, default="sample")
    p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    p.add_argument("--out", default=None, help="report JSON (stdout when omitted)")
    p.add_argument("--csv", default=None, help="report CSV")
    p.set_defaults(func=cmd_eval)

    d = TrainConfig()
    pc = PolicyConfig()
    p = add("train", "train a move policy")
    p.add_argument("--jobs", type=int, default=d.num_jobs)
    p.add_argument("--machines", type=int, default=d.num_machines)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--horizon", type=int, default=d.horizon, help="steps per instance")
    p.add_argument("--update-every", type=int, default=d.update_every, help="steps per update")
    p.add_argument("--lr", type=float, default=d.lr)
    p.add_argument("--entropy-coef", type=float, default=d.entropy_coef)
    p.add_argument("--instances", type=int, default=d.total_instances, help="total training instances")
    p.add_argument("--gamma", type=float, default=d.gamma)
    p.add_argument("--val-instances", type=int, default=d.val_instances)
    p.add_argument("--val-every", type=int, default=d.val_every, help="batches between validations")
    p.add_argument("--val-steps", type=int, default=d.val_steps)
    p.add_argument("--layers", type=int, default=pc.layers)
    p.add_argument("--heads", type=int, default=pc.heads)
    p.add_argument("--hidden", type=int, default=pc.hidden)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="run", help="output directory for checkpoints and curve.csv")
    p.add_argument("--verbose", action="store_true", help="log per-batch progress")
    p.set_defaults(func=cmd_train)

    p = add("toposort", "print forward and backward topological ranks")
    add_instance(p)
    p.add_argument("--orders", default=None, help="JSON machine orders; omitted means the --init solution")
    p.add_argument("--init", choices=INIT_RULES, default="fdd-mwkr")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_toposort)

    p = add("validate", "check an instance file and optionally a schedule")
    add_instance(p)
    p.add_argument("--schedule", default=None, help="schedule CSV to check")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DgsearchError, OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
