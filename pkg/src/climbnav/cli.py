"""``climbnav`` command line: one subcommand per pipeline stage.

Exit codes: 0 success, 1 usage, 2 unreadable input, 3 pipeline failure.
Failures print ``ErrorName: message`` on standard error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import warnings
from importlib import resources
from pathlib import Path

import numpy as np

from . import io, pipeline
from .anchors import AnchorSet, score_anchors
from .config import PipelineConfig
from .errors import ClimbNavError, EmptyCloud, NoEdges, ParseError
from .geometry import estimate_normals, load_cloud, load_oriented, save_cloud
from .mesh import TriangleMesh, load_obj, save_obj
from .planner_global import GlobalGrid, plan_route
from .planner_local import TetherConstraint, nearest_anchor, plan_team
from .reconstruct import save_grid

EXIT_USAGE, EXIT_PARSE, EXIT_PIPELINE = 1, 2, 3

# Fig. 15's path colours for robots 1-4, yellow for the anchor graph
PATH_COLOURS = {1: (0.0, 0.0, 1.0), 2: (0.0, 0.0, 0.0), 3: (0.55, 0.27, 0.07), 4: (0.5, 0.0, 0.5)}
ANCHOR_COLOUR = (1.0, 0.85, 0.0)
TERRAIN_COLOUR = (0.6, 0.6, 0.6)

SCENARIOS = {
    # name: (start cell, goal cell)
    "crevasse": ((1, 1), (1, 3)),
    "box-canyon": ((1, 1), (1, 0)),
    "flat": ((0, 0), (1, 1)),
    "crag": ((0, 0), (1, 1)),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def bundled_crag() -> Path:
    """Path of the synthetic crag mesh shipped with the package."""
    return Path(str(resources.files("climbnav") / "data" / "crag.obj"))


# -- configuration flags ---------------------------------------------------------

def _optional(kind):
    def parse(text):
        return None if text.lower() == "none" else kind(text)
    parse.__name__ = kind.__name__
    return parse


def _add_config_flags(parser):
    group = parser.add_argument_group("configuration (override --config)")
    group.add_argument("--config", metavar="FILE", help="JSON configuration file")
    for f in dataclasses.fields(PipelineConfig):
        flag = "--" + f.name.replace("_", "-")
        kw = dict(dest=f"cfg_{f.name}", default=argparse.SUPPRESS)
        t = str(f.type)
        if t.startswith("tuple"):
            kw.update(nargs=3, type=float, metavar=("X", "Y", "Z"))
        elif t == "str":
            kw.update(type=str)
        else:
            base = int if t.startswith("int") else float
            kw.update(type=_optional(base) if "None" in t else base, metavar=base.__name__.upper())
        group.add_argument(flag, **kw)


def build_config(args, base: PipelineConfig | None = None) -> PipelineConfig:
    """Defaults (or ``base``), then the config file, then flags."""
    data = (base or PipelineConfig()).to_dict()
    if getattr(args, "config", None):
        data.update(PipelineConfig.load(args.config).to_dict())
    flags = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_")}
    data.update(flags)
    try:
        return PipelineConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None


# -- commands ------------------------------------------------------------------------

def _terrain(args) -> TriangleMesh:
    mesh = load_obj(args.terrain if args.terrain else bundled_crag())
    return mesh.scaled(args.scale) if args.scale is not None else mesh


def cmd_scan(args):
    from .sim.lidar import BVH, simulate_scan
    from .sim.mission import drop_to_surface

    cfg = build_config(args)
    bvh = BVH(_terrain(args))
    up = np.asarray(cfg.up) / np.linalg.norm(cfg.up)
    if args.pose is not None:
        pose = np.asarray(args.pose, dtype=float)
    else:
        centre = (bvh.bmin[0] + bvh.bmax[0]) / 2
        try:
            pose = drop_to_surface(bvh, centre[:2], up) + cfg.sensor_height * up
        except ValueError:
            raise UsageError("no surface below the terrain centre; give --pose") from None
    cloud = simulate_scan(bvh, pose, cfg.lidar, cfg.seed)
    save_cloud(args.out, cloud)
    logging.info("scan: %d returns from %s", len(cloud), pose.tolist())


def cmd_normals(args):
    cfg = build_config(args)
    oriented = estimate_normals(load_cloud(args.input), cfg.k)
    save_cloud(args.out, oriented)


def cmd_reconstruct(args):
    cfg = build_config(args)
    rec = pipeline.reconstruct(load_oriented(args.input), cfg)
    save_obj(args.out, rec.mesh)
    if args.grid_dump:
        save_grid(args.grid_dump, rec.grid)
    logging.info("reconstruct: %d vertices, %d triangles", rec.mesh.n_vertices, rec.mesh.n_triangles)


def cmd_anchors(args):
    cfg = build_config(args)
    mesh = load_obj(args.input)
    anchors = pipeline.select(score_anchors(mesh, cfg.weights, cfg.radii, cfg.up), cfg)
    io.save_anchors(args.out, anchors)
    logging.info("anchors: kept %d of %d vertices", len(anchors), mesh.n_vertices)


def cmd_graph(args):
    cfg = build_config(args)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", NoEdges)
        g = pipeline.graph(io.load_anchors(args.input), cfg)
    for w in caught:
        print(f"{w.category.__name__}: {w.message}", file=sys.stderr)
    io.save_graph(args.out, g)
    logging.info("graph: %d vertices, %d edges", len(g.vertices), g.n_edges)


def _resolve_points(graph, points):
    return [nearest_anchor(graph, p) for p in points]


def cmd_plan_local(args):
    cfg = build_config(args)
    graph = io.load_graph(args.graph)
    starts = list(args.start or []) + _resolve_points(graph, args.start_point or [])
    if not starts:
        raise UsageError("give at least one --start or --start-point")
    for s in starts:
        if s not in graph:
            raise UsageError(f"start anchor {s} is not in the graph")
    if args.goal is not None:
        if args.goal not in graph:
            raise UsageError(f"goal anchor {args.goal} is not in the graph")
        goal = args.goal
    else:
        goal = nearest_anchor(graph, args.goal_point)
    hub = (np.asarray(args.hub, dtype=float) if args.hub is not None
           else np.mean([graph.position(s) for s in starts], axis=0))
    plans = plan_team(graph, starts, goal, cfg.h_max, TetherConstraint(tuple(hub), cfg.r_max), cfg.cost)
    if plans.failures:
        rid, exc = min(plans.failures.items())
        raise type(exc)(f"robot {rid}: {exc}")
    io.save_plans(args.out, plans, {rid: goal for rid in plans.plans})


def cmd_plan_global(args):
    if args.grid:
        grid = io.load_grid_spec(args.grid)
    else:
        if args.size is None or args.start is None or args.goal is None:
            raise UsageError("give --grid, or --size, --start and --goal")
        cfg = build_config(args)
        walls = {((w[0], w[1]), (w[2], w[3])) for w in args.wall or []}
        try:
            grid = GlobalGrid(args.size[0], args.size[1], tuple(args.start), tuple(args.goal),
                              cfg.cell_size, walls)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    io.save_route(args.out, grid, plan_route(grid))


def cmd_simulate(args):
    from .sim import terrain as terrains
    from .sim.mission import SUCCESS, run_mission

    base = PipelineConfig() if args.full_profile else PipelineConfig.mission_profile()
    cfg = build_config(args, base)
    if args.terrain:
        mesh = _terrain(args)
        start, goal = args.start_cell, args.goal_cell
        if start is None or goal is None:
            raise UsageError("a custom --terrain needs --start-cell and --goal-cell")
    else:
        mesh = {"crevasse": terrains.crevasse_terrain, "box-canyon": terrains.box_canyon_terrain,
                "flat": terrains.flat_terrain, "crag": terrains.crag_terrain}[args.scenario]()
        start, goal = SCENARIOS[args.scenario]
        start = args.start_cell or start
        goal = args.goal_cell or goal
    try:
        log = run_mission(mesh, tuple(start), tuple(goal), cfg)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    log.save(args.out)
    logging.info("simulate: %s after %d hops", log.status, log.hops)
    if log.status != SUCCESS:
        print(f"{log.status}: mission ended after {log.hops} hops", file=sys.stderr)
        return EXIT_PIPELINE
    return 0


def _paths_from_log(path) -> dict[int, list]:
    from .sim.mission import MissionLog

    try:
        log = MissionLog.load(path)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(str(exc), path=str(path)) from None
    paths: dict[int, list] = {}
    for e in log.events:
        if e.get("kind") == "start":
            for r in e["team"]:
                paths[r["id"]] = [r["position"]]
        elif e.get("kind") == "grip-success":
            for r in e["team"]:
                if r["id"] == e["robot"]:
                    paths.setdefault(r["id"], []).append(r["position"])
    return paths


def _octahedron(centre, size):
    c = np.asarray(centre, dtype=float)
    v = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], float)
    f = [(0, 2, 4), (2, 1, 4), (1, 3, 4), (3, 0, 4), (2, 0, 5), (1, 2, 5), (3, 1, 5), (0, 3, 5)]
    return c + size * v, f


def write_overlay(path, mesh=None, anchors: AnchorSet | None = None, graph=None,
                  paths: dict[int, list] | None = None, marker_size: float = 0.05) -> None:
    """OBJ overlay with a sibling ``.mtl``; vertices also carry RGB for viewers that read it."""
    path = Path(path)
    mtl = path.with_suffix(".mtl")
    fmt = lambda x: repr(float(x))  # noqa: E731
    out = [f"mtllib {mtl.name}"]
    n = 0

    def verts(points, colour):
        nonlocal n
        for p in points:
            out.append("v " + " ".join(fmt(x) for x in p) + " " + " ".join(fmt(c) for c in colour))
        base = n
        n += len(points)
        return base

    if mesh is not None:
        out += ["g terrain", "usemtl terrain"]
        b = verts(mesh.vertices, TERRAIN_COLOUR)
        out += [f"f {b + i + 1} {b + j + 1} {b + k + 1}" for i, j, k in mesh.triangles]
    if graph is not None and anchors is None:
        anchors = graph.vertices
    if anchors is not None and len(anchors):
        out += ["g anchors", "usemtl anchor"]
        for p in anchors.positions:
            v, faces = _octahedron(p, marker_size)
            b = verts(v, ANCHOR_COLOUR)
            out += [f"f {b + i + 1} {b + j + 1} {b + k + 1}" for i, j, k in faces]
    if graph is not None and graph.n_edges:
        out += ["g edges", "usemtl anchor"]
        b = verts(graph.vertices.positions, ANCHOR_COLOUR)
        seen = set()
        for s, t in zip(graph.src.tolist(), graph.dst.tolist()):
            key = (min(s, t), max(s, t))
            if key not in seen:
                seen.add(key)
                out.append(f"l {b + graph.row(s) + 1} {b + graph.row(t) + 1}")
    for rid, pts in sorted((paths or {}).items()):
        if len(pts) < 2:
            continue
        colour = PATH_COLOURS.get(rid, (1.0, 0.0, 0.0))
        out += [f"g robot{rid}", f"usemtl path{rid}"]
        b = verts(pts, colour)
        out.append("l " + " ".join(str(b + i + 1) for i in range(len(pts))))
    path.write_text("\n".join(out) + "\n", encoding="utf-8")

    materials = [("terrain", TERRAIN_COLOUR), ("anchor", ANCHOR_COLOUR)]
    materials += [(f"path{rid}", c) for rid, c in sorted(PATH_COLOURS.items())]
    mtl.write_text("".join(f"newmtl {name}\nKd {c[0]} {c[1]} {c[2]}\n\n" for name, c in materials),
                   encoding="utf-8")


def cmd_export(args):
    mesh = load_obj(args.mesh) if args.mesh else None
    graph = io.load_graph(args.graph) if args.graph else None
    anchors = io.load_anchors(args.anchors) if args.anchors else None
    paths = {}
    if args.plan:
        paths.update({rid: list(p.positions) for rid, p in io.load_plans(args.plan).plans.items()})
    if args.log:
        paths.update(_paths_from_log(args.log))
    if mesh is None and graph is None and anchors is None and not paths:
        raise UsageError("nothing to export; give --mesh, --anchors, --graph, --plan or --log")
    write_overlay(args.out, mesh, anchors, graph, paths, args.marker_size)


# -- parser ------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="climbnav", description="Climbing navigation pipeline for a tethered robot team.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, func, help):
        sp = sub.add_parser(name, help=help, description=help)
        sp.set_defaults(func=func)
        return sp

    s = command("scan", cmd_scan, "simulate a rangefinder scan of a terrain mesh")
    s.add_argument("--terrain", metavar="OBJ", help="terrain mesh (default: bundled crag)")
    s.add_argument("--pose", nargs=3, type=float, metavar=("X", "Y", "Z"),
                   help="sensor position (default: sensor height above the terrain centre)")
    s.add_argument("--scale", nargs=3, type=float, metavar=("SX", "SY", "SZ"),
                   help="stretch the terrain about the origin on import")
    s.add_argument("-o", "--out", required=True, help="output cloud (.ply or .xyz)")

    s = command("normals", cmd_normals, "estimate oriented normals for a point cloud")
    s.add_argument("input", help="cloud (.ply or .xyz)")
    s.add_argument("-o", "--out", required=True, help="oriented cloud (.ply or .xyz)")

    s = command("reconstruct", cmd_reconstruct, "reconstruct a surface mesh from an oriented cloud")
    s.add_argument("input", help="oriented cloud")
    s.add_argument("-o", "--out", required=True, help="mesh (.obj)")
    s.add_argument("--grid-dump", metavar="PATH", help="also write the indicator grid")

    s = command("anchors", cmd_anchors, "score mesh vertices and keep the safest as anchors")
    s.add_argument("input", help="mesh (.obj)")
    s.add_argument("-o", "--out", required=True, help="anchor set (.json)")

    s = command("graph", cmd_graph, "connect anchors into a scene graph")
    s.add_argument("input", help="anchor set (.json)")
    s.add_argument("-o", "--out", required=True, help="scene graph (.json)")

    s = command("plan-local", cmd_plan_local, "plan hop sequences for each robot")
    s.add_argument("graph", help="scene graph (.json)")
    s.add_argument("--start", type=int, nargs="+", metavar="ID", help="start anchor per robot")
    s.add_argument("--start-point", type=float, nargs=3, action="append", metavar=("X", "Y", "Z"),
                   help="start at the anchor nearest this point (repeatable)")
    goal = s.add_mutually_exclusive_group(required=True)
    goal.add_argument("--goal", type=int, metavar="ID", help="goal anchor id")
    goal.add_argument("--goal-point", type=float, nargs=3, metavar=("X", "Y", "Z"),
                      help="goal at the anchor nearest this point")
    s.add_argument("--hub", type=float, nargs=3, metavar=("X", "Y", "Z"),
                   help="tether hub (default: centroid of the start anchors)")
    s.add_argument("-o", "--out", required=True, help="plan (.json)")

    s = command("plan-global", cmd_plan_global, "route across a grid of cells")
    s.add_argument("--grid", metavar="JSON", help="grid document (replaces the grid flags)")
    s.add_argument("--size", type=int, nargs=2, metavar=("W", "H"), help="grid size in cells")
    s.add_argument("--start", type=int, nargs=2, metavar=("X", "Y"), help="start cell")
    s.add_argument("--goal", type=int, nargs=2, metavar=("X", "Y"), help="goal cell")
    s.add_argument("--wall", type=int, nargs=4, action="append", metavar=("X1", "Y1", "X2", "Y2"),
                   help="wall between two adjacent cells (repeatable)")
    s.add_argument("-o", "--out", required=True, help="route (.json)")

    s = command("simulate", cmd_simulate, "run a closed-loop climbing mission")
    where = s.add_mutually_exclusive_group()
    where.add_argument("--scenario", choices=sorted(SCENARIOS), default="crevasse")
    where.add_argument("--terrain", metavar="OBJ", help="terrain mesh, +z up")
    s.add_argument("--scale", nargs=3, type=float, metavar=("SX", "SY", "SZ"),
                   help="stretch a --terrain mesh about the origin on import")
    s.add_argument("--start-cell", type=int, nargs=2, metavar=("X", "Y"))
    s.add_argument("--goal-cell", type=int, nargs=2, metavar=("X", "Y"))
    s.add_argument("--full-profile", action="store_true",
                   help="start from the stage defaults instead of the coarser mission profile")
    s.add_argument("-o", "--out", required=True, help="mission log (.jsonl)")

    s = command("export", cmd_export, "write an OBJ overlay of mesh, anchors and paths")
    s.add_argument("--mesh", metavar="OBJ")
    s.add_argument("--anchors", metavar="JSON")
    s.add_argument("--graph", metavar="JSON", help="draws vertices and edges")
    s.add_argument("--plan", metavar="JSON", help="draws each robot's planned hops")
    s.add_argument("--log", metavar="JSONL", help="draws each robot's travelled path")
    s.add_argument("--marker-size", type=float, default=0.05, help="anchor marker radius")
    s.add_argument("-o", "--out", required=True, help="overlay (.obj, plus a .mtl beside it)")

    for name, sp in sub.choices.items():
        if name not in ("export",):
            _add_config_flags(sp)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args) or 0
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"climbnav: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, EmptyCloud, OSError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ClimbNavError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
