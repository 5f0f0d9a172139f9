import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from climbnav.anchors import AnchorSet
from climbnav.errors import GoalOutsideTether, NoPath, StartOutsideTether
from climbnav.planner_local import (CostModel, TetherConstraint, bounded_leg_astar, nearest_anchor,
                                    plan_team)
from climbnav.scenegraph import build_graph

from instances import graph_edges, graph_positions, random_planning_instance
from oracles import constrained_dijkstra, path_cost, pruned_digraph


def check_plan(graph, plan, h_max, hub, r_max):
    """The three plan invariants, checked from the graph alone."""
    edges = {(s, t): d for s, t, d, _ in graph_edges(graph)}
    for a, b, hop in zip(plan.anchors, plan.anchors[1:], plan.hops):
        assert (a, b) in edges
        assert hop == edges[(a, b)] <= h_max
    for a in plan.anchors:
        assert math.dist(graph.position(a), hub) <= r_max
    assert len(plan.positions) == len(plan.anchors)


# -- chain ---------------------------------------------------------------------------

def test_chain():
    g = build_graph(AnchorSet.from_points([[0, 0, 0], [1, 0, 0], [2, 0, 0]]), 1.0)
    p = bounded_leg_astar(g, 0, 2, 1.0, TetherConstraint((1, 0, 0), 2.0))
    assert p.anchors == [0, 1, 2]
    assert p.hops == [1.0, 1.0]
    assert p.cost == 2.0


# -- the dead-end scene ------------------------------------------------------------------
# S=0 sits left of centre, G=4 to the right. Anchor 2 is the safest neighbour
# of S but lies behind it, out of hop range of everything else. Routes via 1
# and via 3 both reach G; 3 is closer to the straight line and less risky.

FIG9 = {0: (0.0, 0.0, 0.0), 1: (2.2, 1.2, 0.0), 2: (-2.0, 0.3, 0.0), 3: (2.0, -0.8, 0.0),
        4: (4.2, 0.1, 0.0)}
FIG9_R = {0: 0.0, 1: 0.3, 2: 0.0, 3: 0.1, 4: 0.05}
FIG9_H = 2.6
FIG9_HUB = (2.0, 0.0, 0.0)


def _fig9_graph():
    ids = sorted(FIG9)
    return build_graph(AnchorSet.from_points([FIG9[i] for i in ids], r=[FIG9_R[i] for i in ids]),
                       FIG9_H, max_degree=None)


def _hand_cost(path, lam=10.0):
    return sum(math.hypot(*(np.subtract(FIG9[b], FIG9[a]))) + lam * FIG9_R[b]
               for a, b in zip(path, path[1:]))


def test_dead_end_scene_exhaustive():
    g = _fig9_graph()
    # the hop graph: 2 only talks to 0
    assert {(s, t) for s, t, *_ in graph_edges(g) if 2 in (s, t)} == {(0, 2), (2, 0)}
    dg = pruned_digraph(graph_positions(g), graph_edges(g), FIG9_H, FIG9_HUB, 3.0,
                        "distance_plus_loss", 10.0)
    paths = sorted(nx.all_simple_paths(dg, 0, 4))
    costs = {tuple(p): path_cost(p, graph_edges(g)) for p in paths}
    assert set(costs) == {(0, 1, 3, 4), (0, 1, 4), (0, 3, 1, 4), (0, 3, 4)}
    # frozen values, derived by hand from the coordinates above
    assert costs[(0, 3, 4)] == pytest.approx(math.sqrt(4.64) + math.sqrt(5.65) + 1.5, abs=1e-12)
    assert costs[(0, 1, 4)] == pytest.approx(math.sqrt(6.28) + math.sqrt(5.21) + 3.5, abs=1e-12)
    assert costs[(0, 3, 4)] == pytest.approx(6.031038788, abs=1e-9)
    assert costs[(0, 1, 4)] == pytest.approx(8.288535259, abs=1e-9)
    assert costs[(0, 3, 4)] == pytest.approx(_hand_cost([0, 3, 4]), abs=1e-12)
    assert costs[(0, 1, 4)] == pytest.approx(_hand_cost([0, 1, 4]), abs=1e-12)
    p = bounded_leg_astar(g, 0, 4, FIG9_H, TetherConstraint(FIG9_HUB, 3.0))
    assert p.anchors == [0, 3, 4]
    assert p.cost == min(costs.values())
    check_plan(g, p, FIG9_H, FIG9_HUB, 3.0)


def test_dead_end_scene_loss_only():
    g = _fig9_graph()
    p = bounded_leg_astar(g, 0, 4, FIG9_H, TetherConstraint(FIG9_HUB, 3.0), CostModel(mode="loss_only"))
    assert p.anchors == [0, 3, 4]
    assert p.cost == pytest.approx(0.15)


def test_dead_end_scene_without_the_good_branch():
    g = _fig9_graph()
    # pull the tether in so anchor 3 is out of reach: only the route via 1 remains
    tether = TetherConstraint((2.1, 5.0, 0.0), 5.5)
    assert tether.reach([FIG9[0], FIG9[1], FIG9[4]]).all()
    assert not tether.reach([FIG9[3]])[0]
    p = bounded_leg_astar(g, 0, 4, FIG9_H, tether)
    assert p.anchors == [0, 1, 4]
    # and a hop limit below every outgoing edge of S isolates it
    with pytest.raises(NoPath):
        bounded_leg_astar(g, 0, 4, 1.9, TetherConstraint(FIG9_HUB, 3.0))


def test_endpoint_errors():
    g = _fig9_graph()
    with pytest.raises(GoalOutsideTether):
        bounded_leg_astar(g, 0, 4, FIG9_H, TetherConstraint((0, 0, 0), 2.5))
    with pytest.raises(StartOutsideTether):
        bounded_leg_astar(g, 2, 4, FIG9_H, TetherConstraint((4, 0, 0), 2.5))
    with pytest.raises(KeyError):
        bounded_leg_astar(g, 0, 99, FIG9_H, TetherConstraint(FIG9_HUB, 3.0))
    with pytest.raises(ValueError):
        TetherConstraint((0, 0, 0), 0.0)
    with pytest.raises(ValueError):
        CostModel(mode="fastest")


# -- random instances vs the oracle -------------------------------------------------------

@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["distance_plus_loss", "loss_only"]))
def test_optimal_cost_matches_constrained_dijkstra(seed, mode):
    graph, start, goal, h_max, hub, r_max = random_planning_instance(seed, 120)
    cost = CostModel(10.0, mode)
    want = constrained_dijkstra(graph_positions(graph), graph_edges(graph), start, goal,
                                h_max, hub, r_max, mode, 10.0)
    if want is None:
        with pytest.raises(NoPath):
            bounded_leg_astar(graph, start, goal, h_max, TetherConstraint(hub, r_max), cost)
        return
    plan = bounded_leg_astar(graph, start, goal, h_max, TetherConstraint(hub, r_max), cost)
    assert plan.cost == want
    assert plan.cost == path_cost(plan.anchors, graph_edges(graph), mode, 10.0)
    check_plan(graph, plan, h_max, hub, r_max)
    again = bounded_leg_astar(graph, start, goal, h_max, TetherConstraint(hub, r_max), cost)
    assert again.anchors == plan.anchors and again.cost == plan.cost


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1.0, 2.0), st.floats(1.0, 2.0))
def test_relaxing_limits_never_costs_more(seed, grow_r, grow_h):
    graph, start, goal, h_max, hub, r_max = random_planning_instance(seed, 80)

    def best(h, r):
        try:
            return bounded_leg_astar(graph, start, goal, h, TetherConstraint(hub, r)).cost
        except NoPath:
            return math.inf

    base = best(h_max, r_max)
    assert best(h_max * grow_h, r_max) <= base
    assert best(h_max, r_max * grow_r) <= base
    assert best(h_max * grow_h, r_max * grow_r) <= base


# -- teams ---------------------------------------------------------------------------------

def _lattice(n=9, step=0.5, seed=0):
    xs = step * np.arange(n)
    X, Y = np.meshgrid(xs, xs)
    pts = np.c_[X.ravel(), Y.ravel(), np.zeros(n * n)]
    r = np.random.default_rng(seed).uniform(0, 0.5, n * n)
    return AnchorSet.from_points(pts, r=r)


def test_square_team_plans_are_individually_optimal():
    anchors = _lattice()
    g = build_graph(anchors, 0.75, max_degree=None)
    # robots at the corners of a 1 m square, as in the x configuration
    starts = [nearest_anchor(g, p) for p in [(1, 1, 0), (2, 1, 0), (1, 2, 0), (2, 2, 0)]]
    goal = nearest_anchor(g, (3, 3, 0))
    hub = (1.5, 1.5, 0.0)
    team = plan_team(g, starts, goal, 0.75, TetherConstraint(hub, 3.0))
    assert team.ok and sorted(team.plans) == [1, 2, 3, 4]
    for rid, s in zip([1, 2, 3, 4], starts):
        want = constrained_dijkstra(graph_positions(g), graph_edges(g), s, goal, 0.75, hub, 3.0)
        assert team[rid].cost == want
        assert team[rid].anchors[0] == s and team[rid].anchors[-1] == goal
        check_plan(g, team[rid], 0.75, hub, 3.0)


def test_isolated_robot_fails_alone():
    anchors = AnchorSet.concat(_lattice(),
                               AnchorSet.from_points([[-2.4, -2.4, 0], [-3.0, -3.0, 0]], ids=[500, 501]))
    g = build_graph(anchors, 1.0, max_degree=None)
    starts = {1: nearest_anchor(g, (1, 1, 0)), 2: nearest_anchor(g, (2, 1, 0)),
              3: nearest_anchor(g, (1, 2, 0)), 4: 500}
    # 500 is inside the tether but its only neighbour (501) is not
    hub = (0.5, 0.5, 0.0)
    tether = TetherConstraint(hub, 4.2)
    assert tether.reach([[-2.4, -2.4, 0]])[0] and not tether.reach([[-3, -3, 0]])[0]
    team = plan_team(g, starts, nearest_anchor(g, (2, 2, 0)), 1.0, tether)
    assert sorted(team.plans) == [1, 2, 3]
    assert isinstance(team.failures[4], NoPath)
    assert not team.ok


def test_single_robot_team_is_plain_search():
    g = _fig9_graph()
    tether = TetherConstraint(FIG9_HUB, 3.0)
    team = plan_team(g, [0], 4, FIG9_H, tether)
    solo = bounded_leg_astar(g, 0, 4, FIG9_H, tether)
    assert list(team.plans) == [1]
    assert team[1].anchors == solo.anchors and team[1].cost == solo.cost


def test_per_robot_goals():
    g = build_graph(_lattice(), 0.75, max_degree=None)
    goals = {1: nearest_anchor(g, (3, 0, 0)), 2: nearest_anchor(g, (0, 3, 0))}
    team = plan_team(g, {1: 0, 2: 0}, goals, 0.75, TetherConstraint((2, 2, 0), 4.0))
    assert team[1].goal == goals[1] and team[2].goal == goals[2]


def test_equal_cost_routes_break_ties_deterministically():
    # a square: 0 -> 1 -> 3 and 0 -> 2 -> 3 cost the same
    g = build_graph(AnchorSet.from_points([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]]), 1.0)
    tether = TetherConstraint((0.5, 0.5, 0), 2.0)
    plans = {tuple(bounded_leg_astar(g, 0, 3, 1.0, tether).anchors) for _ in range(5)}
    assert plans == {(0, 1, 3)}


def test_nearest_anchor_tie_and_mask():
    g = build_graph(AnchorSet.from_points([[1, 0, 0], [-1, 0, 0], [0, 3, 0]], ids=[7, 3, 5]), 5.0)
    assert nearest_anchor(g, (0, 0, 0)) == 3
    assert nearest_anchor(g, (0, 0, 0), mask=[True, False, True]) == 7
    with pytest.raises(NoPath):
        nearest_anchor(g, (0, 0, 0), mask=[False, False, False])
