import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dgsearch.djgraph import compute_times, is_acyclic
from dgsearch.instance import generate_random
from dgsearch.search import (
    NeuralPolicy,
    RandomPolicy,
    choose,
    init_state,
    run_search,
    state_from_graph,
    step,
    trace_jsonl,
)
from dgsearch.tbgat import TBGAT, ActionDistribution, PolicyConfig

SMALL = PolicyConfig(layers=1, heads=2, hidden=8, action_layers=2)


def test_init_state_tiny(tiny):
    s = init_state(tiny, "fdd-mwkr")
    assert s.incumbent_makespan >= 6 and s.incumbent_graph == s.graph
    assert init_state(tiny, "fdd-mwkr").graph == s.graph
    r1, r2 = init_state(generate_random(5, 5, 1), "random", 3), init_state(generate_random(5, 5, 1), "random", 3)
    assert r1.graph == r2.graph


def test_step_from_solution_b(sol_b, sol_a):
    s = state_from_graph(sol_b, np.random.default_rng(0))
    s2, rec = step(s, RandomPolicy())
    assert rec.reward == 5 and s2.graph == sol_a and s2.incumbent_makespan == 6
    s3, rec3 = step(s2, RandomPolicy())
    assert rec3.terminal and s3.terminal and s3.graph == sol_a


def test_worsening_move_has_zero_reward():
    inst = generate_random(6, 6, 0)
    res = run_search(inst, RandomPolicy(), 300, seed=1)
    worse = [r for r in res.trace if r.makespan > r.incumbent]
    assert worse and all(r.reward == 0 for r in worse)


def test_zero_steps_returns_initial(ft06):
    res = run_search(ft06, RandomPolicy(), 0)
    assert res.best_makespan == res.initial_makespan == compute_times(init_state(ft06).graph).makespan
    assert res.trace == []


def test_tiny_from_b_reaches_optimum(tiny, sol_b):
    for policy in (RandomPolicy(), NeuralPolicy(TBGAT(SMALL))):
        assert run_search(tiny, policy, 5, initial_graph=sol_b).best_makespan == 6


def test_choose_modes():
    d = ActionDistribution(np.array([0.2, 0.4, 0.4]), np.log([0.2, 0.4, 0.4]), 1.0)
    assert choose(d, "greedy", np.random.default_rng(0)) == 1
    rng = np.random.default_rng(0)
    counts = np.bincount([choose(d, "sample", rng) for _ in range(5000)], minlength=3)
    assert np.allclose(counts / 5000, [0.2, 0.4, 0.4], atol=0.03)
    with pytest.raises(ValueError):
        choose(d, "other", rng)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 6), st.integers(2, 6), st.integers(0, 2**32))
def test_telescoping_and_monotone_incumbent(J, M, seed):
    inst = generate_random(J, M, seed)
    res = run_search(inst, RandomPolicy(), 60, seed=seed)
    assert sum(r.reward for r in res.trace) == res.initial_makespan - res.best_makespan
    inc = [res.initial_makespan] + [r.incumbent for r in res.trace]
    assert all(a >= b for a, b in zip(inc, inc[1:]))
    assert all(r.reward >= 0 for r in res.trace)
    assert is_acyclic(res.best_graph) and compute_times(res.best_graph).makespan == res.best_makespan


def test_reproducible_traces():
    inst = generate_random(5, 5, 3)
    model = TBGAT(SMALL, seed=1)
    a = run_search(inst, NeuralPolicy(model), 40, seed=9)
    b = run_search(inst, NeuralPolicy(model), 40, seed=9)
    assert trace_jsonl(a, inst) == trace_jsonl(b, inst)
    line = json.loads(trace_jsonl(a, inst).splitlines()[0])
    assert set(line) == {"step", "makespan", "incumbent", "reward", "move", "terminal"}


def test_negative_steps():
    with pytest.raises(ValueError):
        run_search(generate_random(2, 2, 0), RandomPolicy(), -1)
