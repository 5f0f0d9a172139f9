"""Sequential hop gait for the tethered four-robot team.

Robots hop one at a time in the cyclic order 1, 2, 3, 4 while the other three
stay gripped. The tether hub is modelled as the centroid of the robot
positions, so one hop of displacement ``v`` moves it by ``v / n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from ..errors import Stranded, TetherViolation
from ..planner_local import HopPlan, TeamPlans
from ..scenegraph import SceneGraph

DEFAULT_HOP_DURATION = 2.5
DEFAULT_FAILURE_BETA = 0.5
# layout of the four robots relative to robot 4, in units of the side length
SQUARE_LAYOUT = {1: (1.0, 1.0, 0.0), 2: (1.0, 0.0, 0.0), 3: (0.0, 1.0, 0.0), 4: (0.0, 0.0, 0.0)}
_TOL = 1e-9


@dataclass(frozen=True)
class RobotState:
    id: int
    position: tuple[float, float, float]
    anchored: bool = True
    anchor: int | None = None


@dataclass(frozen=True)
class TeamState:
    robots: tuple[RobotState, ...]
    r_max: float
    hop_duration: float = DEFAULT_HOP_DURATION
    clock: float = 0.0
    next_robot: int = 1

    def __post_init__(self):
        ids = [r.id for r in self.robots]
        if ids != sorted(ids) or len(set(ids)) != len(ids):
            raise ValueError("robots must have unique ids in ascending order")
        if sum(not r.anchored for r in self.robots) > 1:
            raise ValueError("at most one robot may be un-anchored")

    @property
    def positions(self) -> np.ndarray:
        return np.array([r.position for r in self.robots], dtype=float)

    @property
    def hub(self) -> np.ndarray:
        return self.positions.mean(axis=0)

    def robot(self, rid: int) -> RobotState:
        for r in self.robots:
            if r.id == rid:
                return r
        raise KeyError(rid)

    def tether_slack(self) -> float:
        """``r_max`` minus the largest robot-to-hub distance (negative = violated)."""
        return self.r_max - float(np.linalg.norm(self.positions - self.hub, axis=1).max())

    def snapshot(self) -> list[dict]:
        return [{"id": r.id, "position": list(r.position), "anchored": r.anchored,
                 "anchor": r.anchor} for r in self.robots]


@dataclass(frozen=True)
class Event:
    t: float
    kind: str
    data: dict = field(default_factory=dict)


def square_team(origin=(0.0, 0.0, 0.0), side: float = 1.0, r_max: float = 3.0,
                hop_duration: float = DEFAULT_HOP_DURATION, anchors=None) -> TeamState:
    """Four robots on a square, robot 4 at ``origin`` and robot 1 diagonally opposite."""
    o = np.asarray(origin, dtype=float)
    robots = []
    for rid in sorted(SQUARE_LAYOUT):
        p = o + side * np.asarray(SQUARE_LAYOUT[rid])
        a = None if anchors is None else anchors[rid]
        robots.append(RobotState(rid, tuple(float(c) for c in p), True, a))
    return TeamState(tuple(robots), r_max, hop_duration)


def _with_robot(team: TeamState, new: RobotState, **kw) -> TeamState:
    robots = tuple(new if r.id == new.id else r for r in team.robots)
    return replace(team, robots=robots, **kw)


def _fits(team: TeamState, rid: int, target) -> bool:
    """Would every robot be within ``r_max`` of the hub with ``rid`` moved to ``target``?"""
    pos = team.positions.copy()
    pos[[r.id for r in team.robots].index(rid)] = target
    hub = pos.mean(axis=0)
    return bool(np.linalg.norm(pos - hub, axis=1).max() <= team.r_max + _TOL)


def _pre_ok(team: TeamState, target) -> bool:
    return float(np.linalg.norm(np.asarray(target) - team.hub)) <= team.r_max + _TOL


def next_hop(team: TeamState, plans, rid: int):
    """``(anchor, position)`` of robot ``rid``'s next planned hop, or None."""
    plan: HopPlan | None = plans.get(rid)
    if plan is None:
        return None
    robot = team.robot(rid)
    if robot.anchor is None:
        if len(plan.anchors) < 2:
            return None
        i = 0
    else:
        try:
            i = plan.anchors.index(robot.anchor)
        except ValueError:
            return None
        if i + 1 >= len(plan.anchors):
            return None
    return plan.anchors[i + 1], np.asarray(plan.positions[i + 1], dtype=float)


def step_gait(team: TeamState, plans: Mapping[int, HopPlan] | TeamPlans,
              failure_beta: float = DEFAULT_FAILURE_BETA,
              seed: int | np.random.Generator | None = 0,
              graph: SceneGraph | None = None, h_max: float = math.inf,
              ) -> tuple[TeamState, list[Event]]:
    """Advance the next robot in cyclic order that has a planned hop.

    The hopping robot grips its target with probability ``1 - min(1, beta*r)``
    where ``r`` is the target's risk score in ``graph`` (0 without a graph).
    After a failed grip it hops on from the failed anchor to the
    lowest-loss untried neighbour within ``h_max`` whose commit keeps the
    tether intact, until a grip holds. Robots with nothing left to do are
    skipped; if nobody can move the team is returned unchanged.
    """
    if isinstance(plans, TeamPlans):
        plans = plans.plans
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    ids = [r.id for r in team.robots]
    start = ids.index(team.next_robot) if team.next_robot in ids else 0
    order = ids[start:] + ids[:start]
    for rid in order:
        hop = next_hop(team, plans, rid)
        if hop is not None:
            break
    else:
        return team, []

    following = ids[(ids.index(rid) + 1) % len(ids)]
    anchor, target = hop
    if not (_pre_ok(team, target) and _fits(team, rid, target)):
        raise TetherViolation(f"robot {rid} hop to anchor {anchor} would break the tether limit")
    events: list[Event] = []
    clock = team.clock
    robot = team.robot(rid)
    # never retry onto a teammate's anchor
    tried = {anchor} | {r.anchor for r in team.robots if r.id != rid and r.anchor is not None}
    retry = False
    while True:
        flying = replace(robot, anchored=False)
        t_team = _with_robot(team, flying)
        events.append(Event(clock, "hop", {
            "robot": rid, "anchor": anchor, "from": list(robot.position),
            "to": [float(c) for c in target], "retry": retry, "team": t_team.snapshot()}))
        clock += team.hop_duration
        r = graph.score(anchor) if graph is not None and anchor in graph else 0.0
        p_fail = min(1.0, failure_beta * r)
        failed = p_fail > 0 and rng.random() < p_fail
        if not failed:
            landed = RobotState(rid, tuple(float(c) for c in target), True, anchor)
            team = _with_robot(team, landed, clock=clock, next_robot=following)
            events.append(Event(clock, "grip-success", {
                "robot": rid, "anchor": anchor, "team": team.snapshot()}))
            return team, events
        loose = _with_robot(team, replace(flying, position=tuple(float(c) for c in target)))
        events.append(Event(clock, "grip-failure", {
            "robot": rid, "anchor": anchor, "p_fail": p_fail, "team": loose.snapshot()}))
        choice = None
        if graph is not None and anchor in graph:
            for v, d, loss in sorted(graph.adjacency()[anchor], key=lambda e: (e[2], e[0])):
                if v in tried or d > h_max:
                    continue
                pv = graph.position(v)
                if _pre_ok(team, pv) and _fits(team, rid, pv):
                    choice = (v, pv)
                    break
        if choice is None:
            exc = Stranded(f"robot {rid} found no grippable anchor after failing at {anchor}")
            exc.events = events
            raise exc
        robot = replace(robot, position=tuple(float(c) for c in target), anchor=None)
        anchor, target = choice
        tried.add(anchor)
        retry = True
