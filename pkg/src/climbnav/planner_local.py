"""Bounded-leg A*: anchor-to-anchor search under hop-length and tether limits.

Before searching, edges longer than ``h_max`` are ignored and so is every
anchor farther than ``r_max`` from the tether hub. Each robot of a team is
planned independently over the same graph.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import GoalOutsideTether, NoPath, PlanningError, StartOutsideTether
from .scenegraph import SceneGraph

DISTANCE_PLUS_LOSS = "distance_plus_loss"
LOSS_ONLY = "loss_only"


@dataclass(frozen=True)
class TetherConstraint:
    hub: tuple[float, float, float]
    r_max: float

    def __post_init__(self):
        if not self.r_max > 0:
            raise ValueError("r_max must be positive")
        object.__setattr__(self, "hub", tuple(float(v) for v in np.asarray(self.hub, dtype=float).reshape(3)))

    def reach(self, positions) -> np.ndarray:
        """Boolean mask of positions within ``r_max`` of the hub."""
        p = np.asarray(positions, dtype=float).reshape(-1, 3)
        return np.sqrt(((p - np.asarray(self.hub)) ** 2).sum(axis=1)) <= self.r_max


@dataclass(frozen=True)
class CostModel:
    lam: float = 10.0  # metres of detour one unit of loss is worth
    mode: str = DISTANCE_PLUS_LOSS

    def __post_init__(self):
        if self.mode not in (DISTANCE_PLUS_LOSS, LOSS_ONLY):
            raise ValueError(f"unknown cost mode {self.mode!r}")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")

    def edge_cost(self, d: float, loss: float) -> float:
        if self.mode == LOSS_ONLY:
            return loss
        return d + self.lam * loss


@dataclass
class HopPlan:
    anchors: list[int]
    cost: float
    hops: list[float] = field(default_factory=list)
    positions: list[tuple[float, float, float]] = field(default_factory=list)

    @property
    def start(self) -> int:
        return self.anchors[0]

    @property
    def goal(self) -> int:
        return self.anchors[-1]

    def next_anchor(self, current: int) -> int | None:
        """Anchor that follows ``current`` on the plan, or None at the end / off plan."""
        try:
            i = self.anchors.index(current)
        except ValueError:
            return None
        return self.anchors[i + 1] if i + 1 < len(self.anchors) else None


@dataclass
class TeamPlans:
    plans: dict[int, HopPlan]
    failures: dict[int, PlanningError]

    def __getitem__(self, robot):
        return self.plans[robot]

    @property
    def ok(self) -> bool:
        return not self.failures


def _search(graph: SceneGraph, reach: np.ndarray, start: int, goal: int,
            h_max: float, cost: CostModel) -> HopPlan:
    adj = graph.adjacency()
    pos = graph.vertices.positions
    row = graph.row
    goal_pos = pos[row(goal)]
    use_h = cost.mode == DISTANCE_PLUS_LOSS

    def heuristic(v):
        if not use_h:
            return 0.0
        p = pos[row(v)]
        return math.sqrt((p[0] - goal_pos[0]) ** 2 + (p[1] - goal_pos[1]) ** 2 + (p[2] - goal_pos[2]) ** 2)

    g = {start: 0.0}
    parent = {start: None}
    closed = set()
    heap = [(heuristic(start), start)]
    while heap:
        f, u = heapq.heappop(heap)
        if u in closed:
            continue
        if u == goal:
            break
        closed.add(u)
        gu = g[u]
        for v, d, loss in adj[u]:
            if d > h_max or not reach[row(v)]:
                continue
            ng = gu + cost.edge_cost(d, loss)
            if ng < g.get(v, math.inf):
                g[v] = ng
                parent[v] = u
                closed.discard(v)
                heapq.heappush(heap, (ng + heuristic(v), v))
    else:
        raise NoPath(f"no path from {start} to {goal} within hop {h_max} m and tether limits")

    path = [goal]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    path.reverse()
    pts = [tuple(float(c) for c in pos[row(a)]) for a in path]
    hops = [math.dist(pts[i], pts[i + 1]) for i in range(len(pts) - 1)]
    return HopPlan(path, g[goal], hops, pts)


def _check_ends(graph, reach, start, goal, check_start=True):
    for name, a in (("start", start), ("goal", goal)):
        if a not in graph:
            raise KeyError(f"{name} anchor {a} is not in the graph")
    if check_start and not reach[graph.row(start)]:
        raise StartOutsideTether(f"start anchor {start} is beyond the tether limit")
    if not reach[graph.row(goal)]:
        raise GoalOutsideTether(f"goal anchor {goal} is beyond the tether limit")


def bounded_leg_astar(graph: SceneGraph, start: int, goal: int, h_max: float,
                      tether: TetherConstraint, cost: CostModel = CostModel()) -> HopPlan:
    """Minimum-cost hop sequence from ``start`` to ``goal``.

    f-score ties are broken toward the lower anchor id, so results are
    deterministic. Raises :class:`NoPath` when the constraints disconnect
    the goal.
    """
    reach = tether.reach(graph.vertices.positions)
    start, goal = int(start), int(goal)
    _check_ends(graph, reach, start, goal)
    return _search(graph, reach, start, goal, h_max, cost)


def plan_team(graph: SceneGraph, starts: Mapping[int, int] | Sequence[int],
              goal: int | Mapping[int, int], h_max: float, tether: TetherConstraint,
              cost: CostModel = CostModel(), check_start: bool = True) -> TeamPlans:
    """Independent bounded-leg searches for each robot.

    ``starts`` maps robot id to start anchor (a plain sequence numbers robots
    from 1). ``goal`` is one anchor shared by all, or a per-robot mapping.
    Failures are collected per robot instead of aborting the team. With
    ``check_start=False`` a robot already outside the tether ball may still
    plan its way back in.
    """
    if not isinstance(starts, Mapping):
        starts = {i + 1: a for i, a in enumerate(starts)}
    goals = goal if isinstance(goal, Mapping) else {r: goal for r in starts}
    reach = tether.reach(graph.vertices.positions)
    plans, failures = {}, {}
    for robot in sorted(starts):
        s, t = int(starts[robot]), int(goals[robot])
        try:
            _check_ends(graph, reach, s, t, check_start)
            plans[robot] = _search(graph, reach, s, t, h_max, cost)
        except PlanningError as exc:
            failures[robot] = exc
    return TeamPlans(plans, failures)


def nearest_anchor(graph: SceneGraph, point, mask=None) -> int:
    """Id of the anchor closest to ``point`` (lower id on ties), optionally among ``mask``."""
    pos = graph.vertices.positions
    d = np.sqrt(((pos - np.asarray(point, dtype=float).reshape(3)) ** 2).sum(axis=1))
    ids = graph.vertices.ids
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise NoPath("no anchor satisfies the constraint")
        d, ids = d[mask], ids[mask]
    best = np.lexsort((ids, d))[0]
    return int(ids[best])
