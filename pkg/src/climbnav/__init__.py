"""Autonomous climbing navigation for a tethered team of four hopping robots.

Scan, surface, anchors, scene graph, bounded-leg hop plans and a global cell
route, plus a kinematic simulator that runs the loop end to end.
"""

from .anchors import AnchorSet, cull, score_anchors
from .config import PipelineConfig
from .errors import ClimbNavError
from .geometry import OrientedCloud, PointCloud, estimate_normals, load_cloud
from .mesh import TriangleMesh, load_obj, save_obj
from .planner_global import DStarLite, GlobalGrid, plan_route
from .planner_local import CostModel, TetherConstraint, bounded_leg_astar, plan_team
from .reconstruct import reconstruct_surface
from .scenegraph import SceneGraph, build_graph

__version__ = "0.1.0"

__all__ = [
    "AnchorSet", "ClimbNavError", "CostModel", "DStarLite", "GlobalGrid", "OrientedCloud",
    "PipelineConfig", "PointCloud", "SceneGraph", "TetherConstraint", "TriangleMesh",
    "bounded_leg_astar", "build_graph", "cull", "estimate_normals", "load_cloud", "load_obj",
    "plan_route", "plan_team", "reconstruct_surface", "save_obj", "score_anchors",
]
