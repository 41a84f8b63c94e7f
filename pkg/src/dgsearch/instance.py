"""Job shop instances: data type, text formats and random generation.

Operations are addressed by integer ids. Operation ``i`` of job ``j`` has id
``j * num_machines + i``; the artificial source and sink nodes take the two
ids after the last real operation (``instance.source`` and ``instance.sink``)
and carry processing time 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from dgsearch.errors import (
    DuplicateMachineInRoute,
    InstanceError,
    MachineOutOfRange,
    MalformedHeader,
    MatrixShapeMismatch,
    NonPositiveTime,
    WrongPairCount,
)

Route = tuple[tuple[int, int], ...]

MAX_GENERATED_TIME = 99


@dataclass(frozen=True)
class Instance:
    """Immutable job shop problem data.

    ``routes[j]`` is job ``j``'s ordered list of ``(machine, processing_time)``.
    Construction does not validate; use :func:`validate` (the parsers and the
    generator always return valid instances).
    """

    num_jobs: int
    num_machines: int
    routes: tuple[Route, ...]
    name: str = field(default="", compare=False)

    def __post_init__(self):
        routes = tuple(tuple((int(m), int(p)) for m, p in r) for r in self.routes)
        object.__setattr__(self, "routes", routes)

    @property
    def num_ops(self) -> int:
        return self.num_jobs * self.num_machines

    @property
    def source(self) -> int:
        return self.num_ops

    @property
    def sink(self) -> int:
        return self.num_ops + 1

    @property
    def num_nodes(self) -> int:
        return self.num_ops + 2

    def op(self, job: int, step: int) -> int:
        if not (0 <= job < self.num_jobs and 0 <= step < self.num_machines):
            raise IndexError(f"operation ({job}, {step}) out of range")
        return job * self.num_machines + step

    def job_step(self, op: int) -> tuple[int, int]:
        if not 0 <= op < self.num_ops:
            raise IndexError(f"{op} is not a real operation")
        return divmod(op, self.num_machines)

    def label(self, op: int) -> str:
        if op == self.source:
            return "S"
        if op == self.sink:
            return "T"
        j, i = self.job_step(op)
        return f"O{j}_{i}"

    @cached_property
    def machine(self) -> np.ndarray:
        """Machine of every real operation, indexed by op id."""
        return np.array([m for r in self.routes for m, _ in r], dtype=np.int64)

    @cached_property
    def proc(self) -> np.ndarray:
        """Processing time per node id (source and sink included, as 0)."""
        times = [p for r in self.routes for _, p in r]
        return np.array(times + [0, 0], dtype=np.int64)

    @cached_property
    def proc_list(self) -> list[int]:
        return [int(p) for p in self.proc]

    @cached_property
    def machine_ops(self) -> tuple[tuple[int, ...], ...]:
        """Ids of the operations processed on each machine, in job order."""
        per = [[] for _ in range(self.num_machines)]
        for op, m in enumerate(self.machine.tolist()):
            per[m].append(op)
        return tuple(tuple(x) for x in per)

    def times_matrix(self) -> np.ndarray:
        return np.array([[p for _, p in r] for r in self.routes], dtype=np.int64)

    def machines_matrix(self) -> np.ndarray:
        return np.array([[m for m, _ in r] for r in self.routes], dtype=np.int64)


def from_matrices(times: Sequence[Sequence[int]], machines: Sequence[Sequence[int]], name: str = "") -> Instance:
    """Build an instance from a jobs x steps time matrix and 0-based machine matrix."""
    times = np.asarray(times)
    machines = np.asarray(machines)
    if times.shape != machines.shape or times.ndim != 2:
        raise MatrixShapeMismatch(f"times {times.shape} vs machines {machines.shape}")
    routes = tuple(tuple(zip(machines[j].tolist(), times[j].tolist())) for j in range(times.shape[0]))
    return Instance(times.shape[0], times.shape[1], routes, name=name)


def validate(instance: Instance) -> list[InstanceError]:
    """Return every invariant violation of ``instance`` (empty when valid)."""
    errors: list[InstanceError] = []
    if instance.num_jobs < 1 or instance.num_machines < 1:
        errors.append(MalformedHeader(f"sizes must be positive, got {instance.num_jobs}x{instance.num_machines}"))
        return errors
    if len(instance.routes) != instance.num_jobs:
        errors.append(WrongPairCount(f"{len(instance.routes)} routes for {instance.num_jobs} jobs"))
    for j, route in enumerate(instance.routes):
        if len(route) != instance.num_machines:
            errors.append(WrongPairCount(f"job {j} has {len(route)} operations, expected {instance.num_machines}"))
        seen = set()
        for i, (m, p) in enumerate(route):
            if not 0 <= m < instance.num_machines:
                errors.append(MachineOutOfRange(f"job {j} step {i}: machine {m}"))
            elif m in seen:
                errors.append(DuplicateMachineInRoute(f"job {j} visits machine {m} twice"))
            seen.add(m)
            if p < 1:
                errors.append(NonPositiveTime(f"job {j} step {i}: processing time {p}"))
    return errors


def _data_lines(text: str) -> list[tuple[int, str]]:
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        out.append((lineno, line))
    return out


def _ints(line: str, lineno: int, exc=MalformedHeader) -> list[int]:
    try:
        return [int(tok) for tok in line.split()]
    except ValueError:
        raise exc(f"non-integer token in {line!r}", lineno) from None


def _parse_header(lines: list[tuple[int, str]]) -> tuple[int, int, int]:
    if not lines:
        raise MalformedHeader("empty input", 1)
    lineno, line = lines[0]
    vals = _ints(line, lineno)
    if len(vals) != 2 or vals[0] < 1 or vals[1] < 1:
        raise MalformedHeader(f"expected 'J M' with positive sizes, got {line!r}", lineno)
    return vals[0], vals[1], lineno


def _check_route(route: list[tuple[int, int]], num_machines: int, lineno: int) -> None:
    seen = set()
    for m, p in route:
        if not 0 <= m < num_machines:
            raise MachineOutOfRange(f"machine {m} outside 0..{num_machines - 1}", lineno)
        if m in seen:
            raise DuplicateMachineInRoute(f"machine {m} appears twice", lineno)
        seen.add(m)
        if p < 1:
            raise NonPositiveTime(f"processing time {p}", lineno)


def parse_orlib(text: str, name: str = "") -> Instance:
    """Parse the OR-Library layout: ``J M`` then one line of machine/time pairs per job."""
    lines = _data_lines(text)
    num_jobs, num_machines, header_line = _parse_header(lines)
    body = lines[1:]
    if len(body) != num_jobs:
        where = body[-1][0] if len(body) > num_jobs else header_line
        raise WrongPairCount(f"header declares {num_jobs} jobs, found {len(body)} job lines", where)
    routes = []
    for lineno, line in body:
        vals = _ints(line, lineno, WrongPairCount)
        if len(vals) != 2 * num_machines:
            raise WrongPairCount(f"expected {num_machines} pairs, found {len(vals) / 2:g}", lineno)
        route = list(zip(vals[0::2], vals[1::2]))
        _check_route(route, num_machines, lineno)
        routes.append(tuple(route))
    return Instance(num_jobs, num_machines, tuple(routes), name=name)


def parse_taillard(text: str, name: str = "") -> Instance:
    """Parse Taillard's layout: ``J M``, a J x M time matrix, then a J x M 1-based machine matrix.

    Section label lines (``Times``, ``Machines``) are ignored.
    """
    lines = [(n, l) for n, l in _data_lines(text) if l.lower() not in ("times", "machines")]
    num_jobs, num_machines, header_line = _parse_header(lines)
    body = lines[1:]
    if len(body) != 2 * num_jobs:
        where = body[-1][0] if body else header_line
        raise MatrixShapeMismatch(f"expected {2 * num_jobs} matrix rows, found {len(body)}", where)
    rows = []
    for lineno, line in body:
        vals = _ints(line, lineno, MatrixShapeMismatch)
        if len(vals) != num_machines:
            raise MatrixShapeMismatch(f"expected {num_machines} columns, found {len(vals)}", lineno)
        rows.append((lineno, vals))
    routes = []
    for j in range(num_jobs):
        _, times = rows[j]
        lineno, machines = rows[num_jobs + j]
        for p in times:
            if p < 1:
                raise NonPositiveTime(f"processing time {p}", rows[j][0])
        route = [(m - 1, p) for m, p in zip(machines, times)]
        for m, _ in route:
            if not 0 <= m < num_machines:
                raise MachineOutOfRange(f"machine {m + 1} outside 1..{num_machines}", lineno)
        _check_route(route, num_machines, lineno)
        routes.append(tuple(route))
    return Instance(num_jobs, num_machines, tuple(routes), name=name)


def parse(text: str, fmt: str = "orlib", name: str = "") -> Instance:
    if fmt == "orlib":
        return parse_orlib(text, name)
    if fmt == "taillard":
        return parse_taillard(text, name)
    raise ValueError(f"unknown format {fmt!r}")


def load(path, fmt: str = "orlib") -> Instance:
    from pathlib import Path

    path = Path(path)
    return parse(path.read_text(), fmt, name=path.stem)


def to_orlib(instance: Instance) -> str:
    lines = [f"{instance.num_jobs} {instance.num_machines}"]
    for route in instance.routes:
        lines.append(" ".join(f"{m} {p}" for m, p in route))
    return "\n".join(lines) + "\n"


def to_taillard(instance: Instance) -> str:
    lines = [f"{instance.num_jobs} {instance.num_machines}"]
    lines += [" ".join(str(p) for _, p in r) for r in instance.routes]
    lines += [" ".join(str(m + 1) for m, _ in r) for r in instance.routes]
    return "\n".join(lines) + "\n"


def generate_random(num_jobs: int, num_machines: int, seed: int) -> Instance:
    """Random instance: times uniform on 1..99, each route a uniform random permutation."""
    if num_jobs < 1 or num_machines < 1:
        raise ValueError("sizes must be positive")
    rng = np.random.default_rng(seed)
    times = rng.integers(1, MAX_GENERATED_TIME + 1, size=(num_jobs, num_machines))
    machines = np.stack([rng.permutation(num_machines) for _ in range(num_jobs)])
    return from_matrices(times, machines, name=f"rand{num_jobs}x{num_machines}_{seed}")
