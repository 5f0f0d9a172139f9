"""Closed-loop mission: scan, plan locally, hop, and reroute globally when stuck.

Each hop runs the whole perception chain on a fresh scan taken above the
tether hub, plans every robot toward the centre of the next cell on the
global route, and advances the gait by one robot. When the team can make no
progress toward that cell, the border between the last reached cell and the
next one is reported to the global planner as a wall. Terrain is assumed to
lie in the x-y plane with +z up, matching the global grid.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..anchors import AnchorSet
from ..config import PipelineConfig
from ..errors import ClimbNavError, NoRoute, Stranded
from ..geometry import PointCloud
from ..mesh import TriangleMesh
from ..pipeline import graph as build_scene_graph
from ..pipeline import process_scan
from ..planner_global import DStarLite, GlobalGrid
from ..planner_local import TetherConstraint, plan_team
from .gait import SQUARE_LAYOUT, Event, RobotState, TeamState, _fits, _pre_ok, step_gait
from .lidar import BVH, simulate_scan

logger = logging.getLogger(__name__)

SUCCESS = "success"
STATUS_NO_ROUTE = "NoRoute"
STATUS_BUDGET = "HopBudgetExhausted"
STATUS_STRANDED = "Stranded"
# progress toward the cell target smaller than this does not reset the stall counter
PROGRESS_EPS = 0.05


@dataclass
class MissionLog:
    """Events in (time, sequence) order plus the final status."""

    events: list[dict] = field(default_factory=list)
    status: str | None = None

    def add(self, t: float, kind: str, **data) -> None:
        self.events.append({"seq": len(self.events), "t": float(t), "kind": kind, **data})

    def extend(self, events: list[Event]) -> None:
        for e in events:
            self.add(e.t, e.kind, **e.data)

    def of_kind(self, kind: str) -> list[dict]:
        return [e for e in self.events if e["kind"] == kind]

    @property
    def wall_reports(self) -> list[tuple[tuple[int, int], tuple[int, int]]]:
        return [(tuple(e["a"]), tuple(e["b"])) for e in self.of_kind("wall-report")]

    @property
    def cells_visited(self) -> list[tuple[int, int]]:
        return [tuple(e["cell"]) for e in self.of_kind("cell-reached")]

    @property
    def hops(self) -> int:
        return len(self.of_kind("hop"))

    def to_jsonl(self) -> str:
        lines = [json.dumps(e, sort_keys=True) for e in self.events]
        lines.append(json.dumps({"status": self.status}))
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @classmethod
    def from_jsonl(cls, text: str) -> "MissionLog":
        log = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            if set(rec) == {"status"}:
                log.status = rec["status"]
            else:
                log.events.append(rec)
        return log

    @classmethod
    def load(cls, path) -> "MissionLog":
        return cls.from_jsonl(Path(path).read_text(encoding="utf-8"))


def grid_for_terrain(terrain: TriangleMesh, start, goal, cell_size: float) -> GlobalGrid:
    """Cells tiling the terrain's x-y footprint, north-west corner at (min x, max y)."""
    lo, hi = terrain.vertices.min(axis=0), terrain.vertices.max(axis=0)
    width = max(1, int(round((hi[0] - lo[0]) / cell_size)))
    height = max(1, int(round((hi[1] - lo[1]) / cell_size)))
    return GlobalGrid(width, height, start, goal, cell_size, origin=(float(lo[0]), float(hi[1])))


def drop_to_surface(bvh: BVH, xy, up):
    """First surface point straight below ``xy`` along ``-up``."""
    top = float(bvh.bmax[0] @ up) + 1.0
    origin = np.array([xy[0], xy[1], 0.0]) + top * up
    t, _ = bvh.intersect(origin[None, :], -up[None, :])
    if not np.isfinite(t[0]):
        raise ValueError(f"no terrain below {tuple(xy)}")
    return origin - t[0] * up


def initial_team(bvh: BVH, centre_xy, cfg: PipelineConfig) -> TeamState:
    """Square formation centred on ``centre_xy``, each robot resting on the terrain."""
    up = np.asarray(cfg.up) / np.linalg.norm(cfg.up)
    robots = []
    for rid in sorted(SQUARE_LAYOUT):
        off = (np.asarray(SQUARE_LAYOUT[rid][:2]) - 0.5) * cfg.formation_side
        p = drop_to_surface(bvh, np.asarray(centre_xy) + off, up)
        robots.append(RobotState(rid, tuple(float(c) for c in p), True, -rid))
    return TeamState(tuple(robots), cfg.r_max, cfg.hop_duration)


def planning_radius(cfg: PipelineConfig, n_robots: int = 4) -> float:
    """Tether ball used for planning.

    A robot placed within this radius of the hub stays within ``r_max`` while
    the other robots each take one hop, since every hop moves the centroid by
    at most ``h_max / n``.
    """
    return cfg.r_max - (n_robots - 1) * cfg.h_max / n_robots


def _robot_anchors(team: TeamState) -> AnchorSet:
    return AnchorSet.from_points(team.positions, r=0.0, ids=[-r.id for r in team.robots])


def run_mission(terrain: TriangleMesh, start_cell, goal_cell, cfg: PipelineConfig = PipelineConfig(),
                seed: int | None = None, grid: GlobalGrid | None = None) -> MissionLog:
    """Drive the team from ``start_cell`` to the centre of ``goal_cell``.

    The log's status is ``success``, ``NoRoute``, ``HopBudgetExhausted`` or
    ``Stranded``. Everything random draws from one generator seeded with
    ``seed`` (``cfg.seed`` when None), so equal inputs give equal logs.
    """
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    bvh = BVH(terrain)
    if grid is None:
        grid = grid_for_terrain(terrain, start_cell, goal_cell, cfg.cell_size)
    up = np.asarray(cfg.up) / np.linalg.norm(cfg.up)
    n_robots = len(SQUARE_LAYOUT)
    r_plan = planning_radius(cfg, n_robots)
    lidar = cfg.lidar
    log = MissionLog()

    team = initial_team(bvh, grid.cell_center(grid.start), cfg)
    planner = DStarLite(grid)
    log.add(0.0, "start", cell=list(grid.start), goal=list(grid.goal), team=team.snapshot())
    try:
        route = planner.route(grid.start)
    except NoRoute:
        log.status = STATUS_NO_ROUTE
        return log
    log.add(0.0, "route", cells=[list(c) for c in route.cells])
    reached = grid.start
    log.add(0.0, "cell-reached", cell=list(reached), team=team.snapshot())

    hops = 0
    best_gap, stalled = math.inf, 0
    while True:
        if reached == grid.goal:
            log.status = SUCCESS
            break
        if hops >= cfg.hop_budget:
            log.status = STATUS_BUDGET
            break
        nxt = route.cells[route.cells.index(reached) + 1]
        target_xy = np.asarray(grid.cell_center(nxt))

        stuck, team, n_moves = _one_hop(team, bvh, target_xy, cfg, lidar, up, r_plan, rng, log)
        if n_moves is None:
            log.status = STATUS_STRANDED
            break
        hops += n_moves
        hub = team.hub
        gap = float(np.hypot(*(hub[:2] - target_xy)))
        if gap < best_gap - PROGRESS_EPS:
            best_gap, stalled = gap, 0
        else:
            stalled += 1
        if stuck or stalled >= cfg.stall_hops:
            log.add(team.clock, "wall-report", a=list(reached), b=list(nxt),
                    reason="no-hop" if stuck else "stall")
            try:
                route = planner.report_blocked(reached, nxt)
            except NoRoute:
                log.status = STATUS_NO_ROUTE
                break
            log.add(team.clock, "reroute", cells=[list(c) for c in route.cells])
            best_gap, stalled = math.inf, 0
            continue
        if gap <= grid.cell_size / 4:
            reached = nxt
            log.add(team.clock, "cell-reached", cell=list(reached), team=team.snapshot())
            best_gap, stalled = math.inf, 0
    log.add(team.clock, "end", status=log.status, team=team.snapshot())
    return log


def _one_hop(team, bvh, target_xy, cfg, lidar, up, r_plan, rng, log):
    """Scan, plan and advance one robot; returns ``(stuck, team, hops taken or None)``."""
    hub = team.hub
    pose = hub + cfg.sensor_height * up
    cloud = simulate_scan(bvh, pose, lidar, rng)
    if cfg.scene_radius is not None and len(cloud):
        near = np.linalg.norm(cloud.points - hub, axis=1) <= cfg.scene_radius
        cloud = PointCloud(cloud.points[near], cloud.sensor_origin)
    log.add(team.clock, "scan", pose=[float(c) for c in pose], points=len(cloud))
    try:
        scene = process_scan(cloud, cfg)
        anchors = AnchorSet.concat(scene.anchors, _robot_anchors(team))
    except ClimbNavError as exc:
        log.add(team.clock, "scan-failed", error=type(exc).__name__)
        anchors = _robot_anchors(team)
    g = build_scene_graph(anchors, cfg, quiet=True)
    # robot footholds are start points only; nobody plans through a teammate
    g = g.edge_mask(g.dst >= 0)

    tether = TetherConstraint(tuple(hub), r_plan)
    free = tether.reach(anchors.positions) & (anchors.ids >= 0)
    pos = anchors.positions
    goals, taken = {}, []
    for r in team.robots:
        off = (np.asarray(SQUARE_LAYOUT[r.id][:2]) - 0.5) * cfg.formation_side
        aim = np.array([target_xy[0] + off[0], target_xy[1] + off[1], hub @ up])
        # candidates: free anchors not claimed by a teammate, or staying put
        mask = free.copy()
        for q in taken:
            mask &= np.linalg.norm(pos - q, axis=1) > cfg.formation_side / 2
        mask |= anchors.ids == -r.id
        d = np.linalg.norm(pos[mask] - aim, axis=1)
        ids = anchors.ids[mask]
        goals[r.id] = int(ids[np.lexsort((ids, d))[0]])
        taken.append(pos[g.row(goals[r.id])])
    starts = {r.id: -r.id for r in team.robots}
    plans = plan_team(g, starts, goals, cfg.h_max, tether, cfg.cost, check_start=False)
    usable = {}
    for rid, plan in plans.plans.items():
        if len(plan.anchors) < 2:
            continue
        hop = np.asarray(plan.positions[1])
        if _pre_ok(team, hop) and _fits(team, rid, hop):
            usable[rid] = plan
    log.add(team.clock, "plan", goals={str(k): v for k, v in sorted(goals.items())},
            plans={str(k): p.anchors for k, p in sorted(plans.plans.items())},
            failures={str(k): type(e).__name__ for k, e in sorted(plans.failures.items())},
            anchors=len(anchors))
    try:
        team2, events = step_gait(team, usable, cfg.failure_beta, rng, g, cfg.h_max)
    except Stranded as exc:
        log.extend(getattr(exc, "events", []))
        log.add(team.clock, "stranded", error=str(exc))
        return True, team, None
    if not events:
        # stuck outright only when every robot already stands on its goal
        settled = all(goals.get(r.id) == -r.id for r in team.robots)
        return settled, team, 0
    log.extend(events)
    # the robot now sits on a scene anchor; rename it so the next scan's
    # synthetic robot anchors line up with robot ids
    robots = tuple(RobotState(r.id, r.position, r.anchored, -r.id) for r in team2.robots)
    team2 = TeamState(robots, team2.r_max, team2.hop_duration, team2.clock, team2.next_robot)
    return False, team2, sum(e.kind == "hop" for e in events)
