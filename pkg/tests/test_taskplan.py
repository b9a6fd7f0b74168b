import math
import zlib

import pytest
from hypothesis import given, settings, strategies as st

from mrtmp.pddl import Atom, parse_domain, parse_problem
from mrtmp.taskplan import (GroundAction, NoPlan, NotApplicable, apply, ground, raw_binding_count,
                            search_optimal_plan)

from oracles import bfs_plan_length, enumerate_min_cost
from pddl_helpers import DOMAIN, rooms_problem

D = parse_domain(DOMAIN)


def A(pred, *args):
    return Atom(pred, tuple(args))


def problem(*args, **kwargs):
    return parse_problem(rooms_problem(*args, **kwargs), D)


def full_edges(n):
    rooms = [f"l{i}" for i in range(1, n + 1)]
    return [(a, b) for i, a in enumerate(rooms) for b in rooms[i + 1:]]


def test_raw_binding_count_ten_rooms():
    p = problem(10, ["r1", "r2"], ["l1", "l10"], ["l10"], edges=full_edges(10))
    assert raw_binding_count(D, D.action("goto_room"), p.objects) == 40000
    assert len(ground(D, p.objects)) == 40000


def test_raw_binding_count_one_robot():
    p = problem(2, ["r1"], ["l1"], ["l2"])
    assert raw_binding_count(D, D.action("goto_room"), p.objects) == 16
    acts = ground(D, p.objects)
    assert len(acts) == 16
    assert all(a.args[4] == a.args[5] == "r1" for a in acts)


def test_no_objects_of_type():
    objs = {"l1": "room", "l2": "room"}
    assert ground(D, objs) == []


def test_static_pruning_keeps_connected_only():
    p = problem(4, ["r1", "r2"], ["l1", "l4"], ["l2"])
    acts = ground(D, p.objects, p.init)
    # chain of 4 rooms: 6 directed edges per robot, 2 x 2 robot bindings
    assert len(acts) == 6 * 6 * 4
    for a in acts:
        f1, f2, t1, t2 = a.args[:4]
        assert A("connected", f1, t1) in p.init and A("connected", f2, t2) in p.init


def test_grounding_deterministic():
    p = problem(3, ["r1", "r2"], ["l1", "l3"], ["l2"])
    assert [a.key for a in ground(D, p.objects, p.init)] == [a.key for a in ground(D, p.objects, p.init)]


def test_triggered_tuple_order():
    p = problem(2, ["r1", "r2"], ["l1", "l2"], ["l2"])
    a = next(a for a in ground(D, p.objects, p.init) if a.args[4:] == ("r1", "r2"))
    f1, f2, t1, t2, r1, r2 = a.args
    assert a.triggered == (r1, f1, t1, r2, f2, t2)
    assert a.external


def test_apply_swap():
    a = GroundAction("sw", (), frozenset({A("p")}), frozenset(), frozenset({A("q")}), frozenset({A("p")}))
    assert apply(frozenset({A("p")}), a) == frozenset({A("q")})


def test_apply_noop():
    a = GroundAction("n", (), frozenset(), frozenset(), frozenset(), frozenset())
    s = frozenset({A("p")})
    assert apply(s, a) == s


def test_apply_goto_room():
    p = problem(2, ["r1", "r2"], ["l1", "l1"], ["l2"])
    a = next(a for a in ground(D, p.objects, p.init) if a.args == ("l1", "l1", "l2", "l2", "r1", "r2"))
    s = apply(p.init, a)
    assert A("robot_in", "r1", "l2") in s and A("robot_in", "r1", "l1") not in s
    assert A("visited", "l2") in s


def test_apply_not_applicable():
    a = GroundAction("x", (), frozenset({A("p")}), frozenset(), frozenset(), frozenset())
    with pytest.raises(NotApplicable):
        apply(frozenset(), a)


def unit(a, s, ctx):
    return 1.0


def test_goal_satisfied_initially():
    p = problem(2, ["r1", "r2"], ["l1", "l2"], [])
    plan = search_optimal_plan(p, ground(D, p.objects, p.init), unit)
    assert plan.steps == [] and plan.total_cost == 0


def test_unit_costs_match_bfs():
    p = problem(2, ["r1", "r2"], ["l1", "l1"], ["l2"])
    acts = ground(D, p.objects, p.init)
    plan = search_optimal_plan(p, acts, unit)
    assert plan.total_cost == bfs_plan_length(p.init, p.goal, acts)


@pytest.mark.parametrize("n, starts, goal", [
    (4, ["l1", "l1"], ["l4"]),
    (4, ["l1", "l4"], ["l2", "l3"]),
    (3, ["l2", "l2"], ["l1", "l3"]),
])
def test_unit_costs_match_bfs_chain(n, starts, goal):
    p = problem(n, ["r1", "r2"], starts, goal)
    acts = ground(D, p.objects, p.init)
    plan = search_optimal_plan(p, acts, unit)
    assert plan.total_cost == bfs_plan_length(p.init, p.goal, acts)
    s = p.init
    for a, _ in plan.steps:
        s = apply(s, a)
    assert p.goal <= s


def test_unreachable_goal():
    p = problem(3, ["r1", "r2"], ["l1", "l1"], ["l3"], edges=[("l1", "l2")])
    with pytest.raises(NoPlan):
        search_optimal_plan(p, ground(D, p.objects, p.init), unit)


def test_infinite_costs_are_skipped():
    p = problem(2, ["r1", "r2"], ["l1", "l1"], ["l2"])
    acts = ground(D, p.objects, p.init)

    def only_r1_r2(a, s, ctx):
        return 1.0 if a.args[4:] == ("r1", "r2") else math.inf

    plan = search_optimal_plan(p, acts, only_r1_r2)
    assert all(a.args[4:] == ("r1", "r2") for a in plan.actions)
    with pytest.raises(NoPlan):
        search_optimal_plan(p, acts, lambda a, s, c: math.inf)


def test_negative_cost_rejected():
    p = problem(2, ["r1", "r2"], ["l1", "l1"], ["l2"])
    with pytest.raises(ValueError):
        search_optimal_plan(p, ground(D, p.objects, p.init), lambda a, s, c: -1.0)


def hashed_cost(a, ctx, seed):
    h = zlib.crc32(repr((a.key, ctx, seed)).encode())
    return 0.25 + (h % 1000) / 250.0


def ctx_oracle(seed):
    """Cost depends on the action and a context counting moves of r1 (mod 3)."""
    def f(a, s, ctx):
        nctx = (ctx + 1) % 3 if "r1" in a.args[4:] else ctx
        return hashed_cost(a, ctx, seed), nctx
    return f


def brute_force(p, acts, oracle, ctx, plan_cost, cmin):
    return enumerate_min_cost(p.init, p.goal, acts, oracle, ctx, int(plan_cost / cmin) + 1)


@settings(max_examples=15)
@given(st.integers(2, 3), st.integers(0, 10_000), st.data())
def test_search_matches_enumeration(n, seed, data):
    rooms = [f"l{i}" for i in range(1, n + 1)]
    starts = [data.draw(st.sampled_from(rooms)) for _ in range(2)]
    goal = data.draw(st.lists(st.sampled_from(rooms), min_size=1, max_size=n, unique=True))
    p = problem(n, ["r1", "r2"], starts, goal, edges=full_edges(n))
    acts = ground(D, p.objects, p.init)
    oracle = ctx_oracle(seed)
    plan = search_optimal_plan(p, acts, oracle, context=0)
    assert plan.total_cost == brute_force(p, acts, oracle, 0, plan.total_cost, 0.25)


def test_memo_does_not_change_result():
    p = problem(3, ["r1", "r2"], ["l1", "l3"], ["l2", "l3", "l1"], edges=full_edges(3))
    acts = ground(D, p.objects, p.init)
    a = search_optimal_plan(p, acts, ctx_oracle(1), context=0, memo=True)
    b = search_optimal_plan(p, acts, ctx_oracle(1), context=0, memo=False)
    assert a.total_cost == b.total_cost
    assert b.oracle_calls >= a.oracle_calls


def test_projection_does_not_change_result():
    p = problem(3, ["r1", "r2"], ["l1", "l1"], ["l3"], edges=full_edges(3))
    acts = ground(D, p.objects, p.init)
    a = search_optimal_plan(p, acts, ctx_oracle(5), context=0, project=True)
    b = search_optimal_plan(p, acts, ctx_oracle(5), context=0, project=False)
    assert a.total_cost == b.total_cost


def test_contexts_follow_plan():
    p = problem(3, ["r1", "r2"], ["l1", "l1"], ["l3", "l2"], edges=full_edges(3))
    acts = ground(D, p.objects, p.init)
    plan = search_optimal_plan(p, acts, ctx_oracle(2), context=0)
    assert len(plan.contexts) == len(plan.steps) + 1
    ctx = 0
    for (a, c), recorded in zip(plan.steps, plan.contexts):
        assert recorded == ctx
        assert c == hashed_cost(a, ctx, 2)
        ctx = ctx_oracle(2)(a, None, ctx)[1]
