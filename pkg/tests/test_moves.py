import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dgsearch.djgraph import CriticalPath, blocks_of, compute_times, critical_path, is_acyclic
from dgsearch.dispatch import random_init
from dgsearch.errors import InvalidMove
from dgsearch.instance import generate_random
from dgsearch.moves import Move, apply_move, generate_moves

from oracles import n5_oracle


def test_solution_b_moves(sol_b, rng):
    cp = critical_path(sol_b, compute_times(sol_b), rng)
    assert generate_moves(sol_b, cp) == [Move(1, 2, 1)]


def test_solution_a_single_block_has_no_moves(tiny, sol_a):
    path = CriticalPath((4, 0, 3, 5), blocks_of(tiny, (0, 3)))
    assert path.blocks == ((0, 3),)
    assert generate_moves(sol_a, path) == []


def test_all_singleton_blocks(tiny, sol_a):
    path = CriticalPath((4, 2, 3, 5), blocks_of(tiny, (2, 3)))
    assert generate_moves(sol_a, path) == []


def test_apply_b_to_a(sol_a, sol_b):
    g = apply_move(sol_b, Move(1, 2, 1))
    assert g == sol_a
    assert compute_times(sol_b).makespan == 11 and compute_times(g).makespan == 6
    assert apply_move(g, Move(2, 1, 1)) == sol_b


def test_invalid_moves(sol_b):
    with pytest.raises(InvalidMove):
        apply_move(sol_b, Move(2, 1, 1))  # wrong orientation
    with pytest.raises(InvalidMove):
        apply_move(sol_b, Move(0, 1, 0))  # different machines


def test_interior_long_block():
    # one long interior block contributes both its first and last pair
    from dgsearch.instance import parse_orlib
    from dgsearch.djgraph import build

    inst = parse_orlib("4 2\n1 1 0 5\n0 3 1 1\n0 3 1 1\n0 3 1 1")
    g = build(inst, [[0 * 2 + 1, 2, 4, 6], [0, 3, 5, 7]])
    path = CriticalPath((inst.source, 0, 1, 2, 4, 6, 7, inst.sink), blocks_of(inst, (0, 1, 2, 4, 6, 7)))
    assert [len(b) for b in path.blocks] == [1, 4, 1]
    assert generate_moves(g, path) == [Move(1, 2, 0), Move(4, 6, 0)]


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32))
def test_matches_oracle_along_trajectory(J, M, seed):
    inst = generate_random(J, M, seed)
    rng = np.random.default_rng(seed)
    g = random_init(inst, rng)
    for _ in range(30):
        t = compute_times(g)
        cp = critical_path(g, t, rng)
        got = [(m.first, m.second, m.machine) for m in generate_moves(g, cp)]
        assert got == n5_oracle(inst, cp.ops)
        if not got:
            break
        mv = generate_moves(g, cp)[int(rng.integers(len(got)))]
        nxt = apply_move(g, mv)
        assert is_acyclic(nxt)
        assert apply_move(nxt, Move(mv.second, mv.first, mv.machine)) == g
        g = nxt
