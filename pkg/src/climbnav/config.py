"""Single flat configuration shared by the CLI stages and the mission simulator."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, fields
from pathlib import Path

from .anchors import ScoreRadii, ScoreWeights
from .errors import ParseError
from .planner_local import CostModel
from .sim.lidar import LidarConfig


@dataclass(frozen=True)
class PipelineConfig:
    # normals
    k: int = 16
    # reconstruction
    resolution: int = 128
    padding: float | None = None
    screening: float | None = None      # None -> 4 / spacing
    solver_tol: float = 1e-6
    trim_distance: float | None = 0.3   # open scans: drop surface far from any sample
    # anchors
    flatness_weight: float = 0.5
    height_weight: float = 0.5
    flatness_radius: float = 0.3
    height_radius: float = 0.5
    up: tuple[float, float, float] = (0.0, 0.0, 1.0)
    keep_fraction: float | None = 0.15
    threshold: float | None = None
    # scene graph
    neighbor_radius: float | None = None  # None -> h_max
    max_degree: int | None = 16
    base_loss: float = 0.0
    # local planning
    h_max: float = 1.5
    r_max: float = 3.0
    lam: float = 10.0
    cost_mode: str = "distance_plus_loss"
    # global planning
    cell_size: float = 5.6
    # lidar
    lidar_range: float = 5.6
    lidar_noise: float = 0.03
    azimuth_resolution: float = 0.02
    elevation_resolution: float = 0.02
    azimuth_min: float = -math.pi
    azimuth_max: float = math.pi
    elevation_min: float = -math.pi / 2
    elevation_max: float = math.pi / 2
    sensor_height: float = 1.0
    scene_radius: float | None = None   # mission: drop returns farther than this from the hub
    # mission
    failure_beta: float = 0.5
    hop_duration: float = 2.5
    hop_budget: int = 400
    stall_hops: int = 8
    formation_side: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "up", tuple(float(v) for v in self.up))
        if len(self.up) != 3 or not any(self.up):
            raise ValueError("up must be a non-zero 3-vector")
        if self.k < 3:
            raise ValueError("k must be at least 3")
        if self.resolution < 2:
            raise ValueError("resolution must be at least 2")
        for name in ("h_max", "r_max", "cell_size", "flatness_radius", "height_radius",
                     "hop_duration", "solver_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.hop_budget < 0 or self.stall_hops < 1:
            raise ValueError("hop_budget must be >= 0 and stall_hops >= 1")
        # let the component types validate the rest
        self.weights, self.radii, self.cost, self.lidar  # noqa: B018

    @classmethod
    def mission_profile(cls, **overrides) -> "PipelineConfig":
        """Coarser settings that keep a per-hop rescan affordable.

        Only the part of each scan the team can reach on its next hops is
        kept, the surface grid is sized so vertices stay closer together than
        the flatness radius, and the solver tolerance is relaxed.
        """
        base = dict(resolution=32, solver_tol=1e-4, scene_radius=3.5,
                    azimuth_resolution=0.05, elevation_resolution=0.05, elevation_max=0.0)
        base.update(overrides)
        return cls(**base)

    # -- component views ------------------------------------------------------
    @property
    def weights(self) -> ScoreWeights:
        return ScoreWeights(self.flatness_weight, self.height_weight)

    @property
    def radii(self) -> ScoreRadii:
        return ScoreRadii(self.flatness_radius, self.height_radius)

    @property
    def cost(self) -> CostModel:
        return CostModel(self.lam, self.cost_mode)

    @property
    def lidar(self) -> LidarConfig:
        return LidarConfig(self.lidar_range, self.lidar_noise, self.azimuth_resolution,
                           self.elevation_resolution, self.azimuth_min, self.azimuth_max,
                           self.elevation_min, self.elevation_max)

    @property
    def graph_radius(self) -> float:
        return self.h_max if self.neighbor_radius is None else self.neighbor_radius

    # -- serialisation ----------------------------------------------------------
    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["up"] = list(self.up)
        return d

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        if not isinstance(data, dict):
            raise ValueError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, line=exc.lineno, path=str(path)) from None
        try:
            return cls.from_dict(data)
        except (TypeError, ValueError) as exc:
            raise ParseError(str(exc), path=str(path)) from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n",
                              encoding="utf-8")
