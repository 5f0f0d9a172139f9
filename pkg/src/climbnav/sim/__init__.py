"""Kinematic mission simulator: LIDAR, load model, gait and the planning loop."""

from .gait import RobotState, TeamState, square_team, step_gait
from .lidar import BVH, LidarConfig, raycast, simulate_scan
from .load import LoadModel, required_spines

__all__ = [
    "BVH", "LidarConfig", "LoadModel", "MissionLog", "RobotState", "TeamState",
    "raycast", "required_spines", "run_mission", "simulate_scan", "square_team", "step_gait",
]


def __getattr__(name):
    # mission pulls in the whole pipeline; import it on first use
    if name in ("run_mission", "MissionLog"):
        from . import mission
        return getattr(mission, name)
    raise AttributeError(name)
