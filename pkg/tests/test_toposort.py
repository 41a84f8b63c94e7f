import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dgsearch import toposort as T
from dgsearch.dispatch import random_init
from dgsearch.errors import CyclicGraph
from dgsearch.instance import generate_random

from oracles import layered_peeling, random_dag, reachable


def test_chain_single_round():
    dag = T.make_dag(3, [0, 1], [1, 2])
    m0 = T.initial_messages(dag)
    assert m0[0] == 0 and m0[1] == T.UNREACHED and m0[2] == T.UNREACHED
    m1 = T.mpo_round(dag, m0)
    assert list(m1[:2]) == [0, 1] and m1[2] == T.UNREACHED


def test_diamond_with_shortcut():
    dag = T.make_dag(4, [0, 0, 1, 2, 0], [1, 2, 3, 3, 3])
    ranks, rounds = T.mpo_fixpoint(dag)
    assert list(ranks) == [0, 1, 1, 2]
    assert rounds == 3  # longest path 2, plus one confirming round


def test_solution_b_ranks(sol_b):
    r = T.ranks(sol_b)
    # node order O00, O01, O10, O11, S, T
    assert list(r.fwd) == [1, 2, 3, 4, 0, 5]
    assert list(r.bwd) == [4, 3, 2, 1, 5, 0]
    assert r.bwd[0] > r.bwd[1]


def test_isolated_node_and_chain_backward():
    assert list(T.forward_ranks(T.make_dag(1, [], []))) == [0]
    assert list(T.backward_ranks(T.make_dag(3, [0, 1], [1, 2]))) == [2, 1, 0]


def test_batch_matches_solo(sol_a, sol_b):
    solo = [T.ranks(sol_a), T.ranks(sol_b)]
    both = T.batched_ranks([sol_a, sol_b])
    for s, b in zip(solo, both):
        assert np.array_equal(s.fwd, b.fwd) and np.array_equal(s.bwd, b.bwd)


def test_cycle_raises():
    with pytest.raises(CyclicGraph):
        T.forward_ranks(T.make_dag(3, [0, 1, 2], [1, 2, 1]))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32))
def test_random_dags_match_peeling(seed):
    rng = np.random.default_rng(seed)
    n, arcs = random_dag(rng, 60)
    src = [u for u, _ in arcs]
    dst = [v for _, v in arcs]
    dag = T.make_dag(n, src, dst)
    fwd, rounds = T.mpo_fixpoint(dag)
    assert list(fwd) == layered_peeling(n, arcs)
    assert rounds == (int(fwd.max()) if n else 0) + 1
    bwd = T.backward_ranks(dag)
    assert list(bwd) == layered_peeling(n, [(v, u) for u, v in arcs])
    for u, v in arcs:
        assert fwd[u] < fwd[v] and bwd[u] > bwd[v]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32))
def test_reachability_order(seed):
    rng = np.random.default_rng(seed)
    n, arcs = random_dag(rng, 30)
    fwd = T.forward_ranks(T.make_dag(n, [u for u, _ in arcs], [v for _, v in arcs]))
    for x, zs in enumerate(reachable(n, arcs)):
        assert all(fwd[x] < fwd[z] for z in zs)


def test_batched_dags_with_mixed_sizes():
    rng = np.random.default_rng(3)
    dags, expected = [], []
    for _ in range(20):
        n, arcs = random_dag(rng, 40)
        dags.append(T.make_dag(n, [u for u, _ in arcs], [v for _, v in arcs]))
        expected.append(layered_peeling(n, arcs))
    big = T.batch(dags)
    for got, want in zip(big.split(T.forward_ranks(big)), expected):
        assert list(got) == want


def test_solution_ranks_source_and_sink():
    inst = generate_random(5, 4, 1)
    g = random_init(inst, np.random.default_rng(2))
    r = T.ranks(g)
    assert r.fwd[inst.source] == 0 and r.bwd[inst.sink] == 0
    assert r.fwd[inst.sink] == r.fwd.max() and r.bwd[inst.source] == r.bwd.max()
