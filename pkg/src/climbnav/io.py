"""JSON interchange between pipeline stages: anchors, graphs, plans, grids and routes.

Documents are plain JSON laid out one record per line so that diffs stay
readable. Floats are written with ``repr`` precision, which makes
load-then-save reproduce the original bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import errors
from .anchors import AnchorSet
from .errors import ParseError
from .planner_global import GlobalGrid, Route
from .planner_local import HopPlan, TeamPlans
from .scenegraph import SceneGraph

VERSION = 1


def _dump(obj) -> str:
    return json.dumps(obj, separators=(", ", ": "), allow_nan=False)


def _document(kind: str, header: dict, sections: dict[str, list]) -> str:
    """Header keys on their own lines, then each list with one record per line."""
    lines = ["{", f' "format": "climbnav.{kind}",', f' "version": {VERSION},']
    for key, value in header.items():
        lines.append(f" {_dump(key)}: {_dump(value)},")
    items = list(sections.items())
    for n, (key, records) in enumerate(items):
        lines.append(f" {_dump(key)}: [")
        last = len(records) - 1
        lines.extend(f"  {_dump(r)}" + ("," if i < last else "") for i, r in enumerate(records))
        lines.append(" ]" + ("," if n + 1 < len(items) else ""))
    lines.append("}")
    return "\n".join(lines) + "\n"


def _read(path, kind: str) -> dict:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ParseError(exc.strerror or str(exc), path=str(path)) from None
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno, path=str(path)) from None
    if not isinstance(data, dict) or data.get("format") != f"climbnav.{kind}":
        raise ParseError(f"not a climbnav {kind} document", path=str(path))
    if data.get("version") != VERSION:
        raise ParseError(f"unsupported version {data.get('version')!r}", path=str(path))
    return data


def _field(data, key, path):
    try:
        return data[key]
    except (KeyError, TypeError):
        raise ParseError(f"missing field {key!r}", path=str(path)) from None


# -- anchors -------------------------------------------------------------------

def _anchor_records(anchors: AnchorSet) -> list[dict]:
    return [{"id": i, "position": p, "normal": n, "flatness": f, "height_risk": h, "r": r}
            for i, p, n, f, h, r in zip(anchors.ids.tolist(), anchors.positions.tolist(),
                                        anchors.normals.tolist(), anchors.flatness.tolist(),
                                        anchors.height_risk.tolist(), anchors.r.tolist())]


def _anchors_from(records, path) -> AnchorSet:
    try:
        cols = {k: [rec[k] for rec in records]
                for k in ("id", "position", "normal", "flatness", "height_risk", "r")}
        return AnchorSet(np.array(cols["id"], dtype=np.int64).reshape(-1),
                         np.array(cols["position"], dtype=float).reshape(-1, 3),
                         np.array(cols["normal"], dtype=float).reshape(-1, 3),
                         cols["flatness"], cols["height_risk"], cols["r"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad anchor record: {exc}", path=str(path)) from None


def anchors_to_text(anchors: AnchorSet) -> str:
    return _document("anchors", {}, {"anchors": _anchor_records(anchors)})


def save_anchors(path, anchors: AnchorSet) -> None:
    Path(path).write_text(anchors_to_text(anchors), encoding="utf-8")


def load_anchors(path) -> AnchorSet:
    data = _read(path, "anchors")
    return _anchors_from(_field(data, "anchors", path), path)


# -- scene graph -----------------------------------------------------------------

def graph_to_text(graph: SceneGraph) -> str:
    edges = [[s, t, d, l] for s, t, d, l in zip(graph.src.tolist(), graph.dst.tolist(),
                                                 graph.d.tolist(), graph.loss.tolist())]
    return _document("graph", {}, {"vertices": _anchor_records(graph.vertices), "edges": edges})


def save_graph(path, graph: SceneGraph) -> None:
    Path(path).write_text(graph_to_text(graph), encoding="utf-8")


def load_graph(path) -> SceneGraph:
    data = _read(path, "graph")
    vertices = _anchors_from(_field(data, "vertices", path), path)
    edges = _field(data, "edges", path)
    try:
        e = np.array(edges, dtype=float).reshape(-1, 4)
        src = np.array([int(x[0]) for x in edges], dtype=np.int64)
        dst = np.array([int(x[1]) for x in edges], dtype=np.int64)
    except (TypeError, ValueError, IndexError) as exc:
        raise ParseError(f"bad edge record: {exc}", path=str(path)) from None
    known = set(vertices.ids.tolist())
    if not (set(src.tolist()) <= known and set(dst.tolist()) <= known):
        raise ParseError("edge refers to an unknown vertex", path=str(path))
    return SceneGraph(vertices, src, dst, e[:, 2], e[:, 3])


# -- hop plans --------------------------------------------------------------------

def plans_to_text(plans: TeamPlans, goals: dict[int, int] | None = None) -> str:
    robots = []
    for rid in sorted(plans.plans):
        p = plans.plans[rid]
        robots.append({"robot": rid, "anchors": list(p.anchors),
                       "positions": [list(map(float, q)) for q in p.positions],
                       "hops": [float(h) for h in p.hops], "cost": float(p.cost)})
    failures = [{"robot": rid, "error": type(e).__name__, "message": str(e)}
                for rid, e in sorted(plans.failures.items())]
    header = {} if goals is None else {"goals": {str(k): int(v) for k, v in sorted(goals.items())}}
    return _document("plan", header, {"robots": robots, "failures": failures})


def save_plans(path, plans: TeamPlans, goals: dict[int, int] | None = None) -> None:
    Path(path).write_text(plans_to_text(plans, goals), encoding="utf-8")


def load_plans(path) -> TeamPlans:
    data = _read(path, "plan")
    plans, failures = {}, {}
    try:
        for rec in _field(data, "robots", path):
            plans[int(rec["robot"])] = HopPlan(
                [int(a) for a in rec["anchors"]], float(rec["cost"]),
                [float(h) for h in rec["hops"]],
                [tuple(float(c) for c in q) for q in rec["positions"]])
        for rec in _field(data, "failures", path):
            cls = getattr(errors, rec["error"], None)
            if not (isinstance(cls, type) and issubclass(cls, errors.PlanningError)):
                cls = errors.PlanningError
            failures[int(rec["robot"])] = cls(rec["message"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad plan record: {exc}", path=str(path)) from None
    return TeamPlans(plans, failures)


# -- global grid and route ----------------------------------------------------------

def _grid_header(grid: GlobalGrid) -> dict:
    return {"width": grid.width, "height": grid.height, "cell_size": float(grid.cell_size),
            "origin": [float(v) for v in grid.origin], "start": list(grid.start),
            "goal": list(grid.goal)}


def _walls(grid: GlobalGrid) -> list:
    return [[list(a), list(b)] for a, b in sorted(grid.walls)]


def grid_to_text(grid: GlobalGrid) -> str:
    return _document("grid", _grid_header(grid), {"walls": _walls(grid)})


def save_grid_spec(path, grid: GlobalGrid) -> None:
    Path(path).write_text(grid_to_text(grid), encoding="utf-8")


def _grid_from(data, path) -> GlobalGrid:
    try:
        return GlobalGrid(int(data["width"]), int(data["height"]), tuple(data["start"]),
                          tuple(data["goal"]), float(data["cell_size"]),
                          {(tuple(a), tuple(b)) for a, b in data["walls"]},
                          tuple(float(v) for v in data["origin"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad grid: {exc}", path=str(path)) from None


def load_grid_spec(path) -> GlobalGrid:
    return _grid_from(_read(path, "grid"), path)


def route_to_text(grid: GlobalGrid, route: Route) -> str:
    header = _grid_header(grid)
    header["steps"] = route.steps
    return _document("route", header, {"walls": _walls(grid), "cells": [list(c) for c in route.cells]})


def save_route(path, grid: GlobalGrid, route: Route) -> None:
    Path(path).write_text(route_to_text(grid, route), encoding="utf-8")


def load_route(path) -> tuple[GlobalGrid, Route]:
    data = _read(path, "route")
    grid = _grid_from(data, path)
    try:
        cells = [(int(x), int(y)) for x, y in data["cells"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad route: {exc}", path=str(path)) from None
    return grid, Route(cells)
