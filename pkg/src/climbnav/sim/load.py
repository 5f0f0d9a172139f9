"""Microspine load arithmetic for the four-robot team."""

from __future__ import annotations

import math
from dataclasses import dataclass

MARS_G = 3.7


@dataclass(frozen=True)
class LoadModel:
    robot_mass: float = 3.0      # kg
    tether_mass: float = 0.15    # kg each
    tether_count: int = 4
    robots: int = 4
    g: float = MARS_G            # m/s^2
    spine_capacity: float = 1.7  # N one spine/asperity contact holds

    def __post_init__(self):
        if min(self.robot_mass, self.tether_mass, self.spine_capacity) <= 0:
            raise ValueError("masses and spine capacity must be positive")
        if self.g < 0:
            raise ValueError("g must be non-negative")
        if self.tether_count < 0 or self.robots < 1:
            raise ValueError("bad robot or tether count")

    @property
    def system_mass(self) -> float:
        return self.robots * self.robot_mass + self.tether_count * self.tether_mass

    @property
    def system_weight(self) -> float:
        """Newtons the engaged spines must hold with no help from thrust."""
        return self.system_mass * self.g


def required_spines(load: LoadModel = LoadModel(), sharing_robots: int = 1) -> int:
    """Fewest spines per gripping robot when ``sharing_robots`` split the weight evenly."""
    if sharing_robots < 1:
        raise ValueError("sharing_robots must be at least 1")
    need = load.system_weight / sharing_robots / load.spine_capacity
    # guard against 46.62/1.7 style quotients landing a hair above an integer
    return max(0, math.ceil(need - 1e-9))
