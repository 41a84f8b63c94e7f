from fractions import Fraction

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from dgsearch.dispatch import DispatchState, fdd_mwkr_init, initial_solution, random_init
from dgsearch.djgraph import compute_times, is_acyclic
from dgsearch.exact import brute_force_optimum
from dgsearch.instance import generate_random, validate


def test_tiny_sequence(tiny, sol_a):
    # ratios: O10 2/6 < O00 2/5; then O00 2/5 < O11 6/4; then O11 6/4 < O01 5/3
    g = fdd_mwkr_init(tiny)
    assert g == sol_a
    assert compute_times(g).makespan == 6


def test_single_job_follows_route():
    inst = generate_random(1, 5, 9)
    g = fdd_mwkr_init(inst)
    assert [list(o) for o in g.machine_orders] == [list(o) for o in inst.machine_ops]


def _fdd_mwkr_oracle(inst):
    nxt = [0] * inst.num_jobs
    orders = [[] for _ in range(inst.num_machines)]
    for _ in range(inst.num_ops):
        best = None
        for j, route in enumerate(inst.routes):
            i = nxt[j]
            if i == len(route):
                continue
            times = [p for _, p in route]
            key = Fraction(sum(times[: i + 1]), sum(times[i:]))
            if best is None or key < best[0]:
                best = (key, j)
        j = best[1]
        orders[inst.routes[j][nxt[j]][0]].append(inst.op(j, nxt[j]))
        nxt[j] += 1
    return orders


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**32))
def test_matches_rule_oracle(J, M, seed):
    inst = generate_random(J, M, seed)
    g = fdd_mwkr_init(inst)
    assert [list(o) for o in g.machine_orders] == _fdd_mwkr_oracle(inst)
    assert DispatchState(inst).dispatchable() == list(range(J))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**32))
def test_never_beats_optimum(J, M, seed):
    inst = generate_random(J, M, seed)
    opt, _ = brute_force_optimum(inst)
    g = fdd_mwkr_init(inst)
    r = random_init(inst, np.random.default_rng(seed))
    assert is_acyclic(g) and is_acyclic(r)
    assert compute_times(g).makespan >= opt and compute_times(r).makespan >= opt
    assert validate(inst) == []


def test_random_init_reproducible():
    inst = generate_random(6, 6, 4)
    a = initial_solution(inst, "random", np.random.default_rng(5))
    b = initial_solution(inst, "random", np.random.default_rng(5))
    assert a == b
