import itertools

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from dgsearch.djgraph import compute_times
from dgsearch.exact import _preemptive_bound, branch_and_bound, brute_force_optimum, exact_optimum
from dgsearch.instance import generate_random

FT06_OPTIMUM = 55


def test_tiny_optimum(tiny):
    ms, g = brute_force_optimum(tiny)
    assert ms == 6 and compute_times(g).makespan == 6


def test_ft06_optimum(ft06):
    ms, g, proved = branch_and_bound(ft06)
    assert (ms, proved) == (FT06_OPTIMUM, True)
    assert compute_times(g).makespan == FT06_OPTIMUM


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**32))
def test_bnb_matches_enumeration(J, M, seed):
    inst = generate_random(J, M, seed)
    ms, g, proved = branch_and_bound(inst)
    assert proved and ms == brute_force_optimum(inst)[0] == compute_times(g).makespan


def test_bnb_matches_enumeration_4x3():
    for seed in range(5):
        inst = generate_random(4, 3, seed)
        assert branch_and_bound(inst)[0] == brute_force_optimum(inst)[0]


def _preemptive_oracle(jobs):
    # unit-time simulation, always running the available job with the largest tail
    rem = [p for _, p, _ in jobs]
    t, best = 0, 0
    while any(rem):
        ready = [k for k, (r, _, _) in enumerate(jobs) if r <= t and rem[k]]
        if ready:
            k = max(ready, key=lambda k: jobs[k][2])
            rem[k] -= 1
            if rem[k] == 0:
                best = max(best, t + 1 + jobs[k][2])
        t += 1
    return best


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 20), st.integers(1, 8), st.integers(0, 20)), min_size=1, max_size=6))
def test_preemptive_bound(jobs):
    assert _preemptive_bound(jobs) == _preemptive_oracle(jobs)


def test_exact_dispatches_on_size(tiny):
    assert exact_optimum(tiny) == 6
    assert exact_optimum(generate_random(4, 4, 1)) == branch_and_bound(generate_random(4, 4, 1))[0]
