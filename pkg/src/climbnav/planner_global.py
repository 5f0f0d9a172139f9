"""Global route planning over a grid of scenes with D* Lite repair.

Cells are ``(x, y)`` pairs: ``x`` is the column and grows east, ``y`` is the
row and grows south. Moves are 4-connected with unit cost. A wall between two
adjacent cells is permanent once reported.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

from .errors import AtGoal, NoRoute, OffRoute

Cell = tuple[int, int]

# Neighbour order doubles as the tie-break priority.
HEADINGS: dict[str, Cell] = {"N": (0, -1), "S": (0, 1), "E": (1, 0), "W": (-1, 0)}
_STEPS = tuple(HEADINGS.values())
DEFAULT_CELL_SIZE = 5.6


def _cell(c) -> Cell:
    x, y = c
    return int(x), int(y)


def wall_key(a, b) -> tuple[Cell, Cell]:
    a, b = _cell(a), _cell(b)
    return (a, b) if a <= b else (b, a)


@dataclass
class GlobalGrid:
    width: int
    height: int
    start: Cell
    goal: Cell
    cell_size: float = DEFAULT_CELL_SIZE
    walls: set = field(default_factory=set)
    origin: tuple[float, float] = (0.0, 0.0)  # world (x, y) of the north-west corner

    def __post_init__(self):
        self.start, self.goal = _cell(self.start), _cell(self.goal)
        for c in (self.start, self.goal):
            if not self.contains(c):
                raise ValueError(f"cell {c} is outside the {self.width}x{self.height} grid")
        self.walls = {wall_key(a, b) for a, b in self.walls}
        for a, b in self.walls:
            self._check_adjacent(a, b)

    def contains(self, c) -> bool:
        x, y = c
        return 0 <= x < self.width and 0 <= y < self.height

    @staticmethod
    def _check_adjacent(a, b):
        if abs(a[0] - b[0]) + abs(a[1] - b[1]) != 1:
            raise ValueError(f"cells {a} and {b} are not 4-adjacent")

    def add_wall(self, a, b) -> bool:
        """Insert a wall; returns False if it was already there."""
        a, b = _cell(a), _cell(b)
        self._check_adjacent(a, b)
        key = wall_key(a, b)
        if key in self.walls:
            return False
        self.walls.add(key)
        return True

    def blocked(self, a, b) -> bool:
        return wall_key(a, b) in self.walls

    def neighbors(self, c) -> list[Cell]:
        """Open 4-neighbours of ``c`` in N, S, E, W order."""
        x, y = c
        walls, w, h = self.walls, self.width, self.height
        out = []
        for dx, dy in _STEPS:
            nx, ny = x + dx, y + dy
            if 0 <= nx < w and 0 <= ny < h:
                n = (nx, ny)
                if not walls or ((c, n) if c <= n else (n, c)) not in walls:
                    out.append(n)
        return out

    def cell_center(self, c) -> tuple[float, float]:
        """World (x, y) of a cell centre; world +y points north."""
        x, y = c
        return (self.origin[0] + (x + 0.5) * self.cell_size,
                self.origin[1] - (y + 0.5) * self.cell_size)

    def cell_of(self, xy) -> Cell:
        return (int(math.floor((xy[0] - self.origin[0]) / self.cell_size)),
                int(math.floor((self.origin[1] - xy[1]) / self.cell_size)))


@dataclass
class Route:
    cells: list[Cell]

    @property
    def steps(self) -> int:
        return len(self.cells) - 1

    def __len__(self):
        return len(self.cells)


def _manhattan(a, b) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


class DStarLite:
    """Goal-rooted incremental planner.

    Every repair is run until the queue empties, so the stored distances are
    exact afterwards and the extracted route matches a from-scratch plan
    tie for tie.
    """

    def __init__(self, grid: GlobalGrid):
        self.grid = grid
        self.g: dict[Cell, float] = {}
        self.rhs: dict[Cell, float] = {grid.goal: 0.0}
        self.km = 0.0
        self.s_last = grid.start
        self._heap: list = []
        self._open: dict[Cell, tuple[float, float]] = {}
        self._nbrs: dict[Cell, list[Cell]] = {}
        self.expansions = 0
        self._push(grid.goal)
        self._compute()

    def _neighbors(self, c):
        nb = self._nbrs.get(c)
        if nb is None:
            nb = self._nbrs[c] = self.grid.neighbors(c)
        return nb

    # -- priority queue with lazy deletion ---------------------------------
    def _key(self, s):
        m = min(self.g.get(s, math.inf), self.rhs.get(s, math.inf))
        sx, sy = self.s_last
        return (m + abs(sx - s[0]) + abs(sy - s[1]) + self.km, m)

    def _push(self, s):
        k = self._key(s)
        self._open[s] = k
        heapq.heappush(self._heap, (k, s))

    def _update(self, u):
        g = self.g
        if u != self.grid.goal:
            best = math.inf
            for n in self._neighbors(u):
                gn = g.get(n, math.inf)
                if gn < best:
                    best = gn
            self.rhs[u] = best + 1.0
        self._open.pop(u, None)
        if g.get(u, math.inf) != self.rhs.get(u, math.inf):
            self._push(u)

    def _compute(self):
        heap, open_, g, rhs = self._heap, self._open, self.g, self.rhs
        while heap:
            k_old, u = heapq.heappop(heap)
            if open_.get(u) != k_old:
                continue
            k_new = self._key(u)
            if k_old < k_new:
                self._push(u)
                continue
            del open_[u]
            self.expansions += 1
            if g.get(u, math.inf) > rhs.get(u, math.inf):
                g[u] = rhs[u]
            else:
                g[u] = math.inf
                self._update(u)
            for p in self._neighbors(u):
                self._update(p)

    # -- public -------------------------------------------------------------
    def distance(self, cell) -> float:
        return self.g.get(_cell(cell), math.inf)

    def route(self, start=None) -> Route:
        start = self.grid.start if start is None else _cell(start)
        if not self.grid.contains(start):
            raise ValueError(f"cell {start} is outside the grid")
        if start != self.s_last:
            self.km += _manhattan(self.s_last, start)
            self.s_last = start
        if math.isinf(self.distance(start)):
            raise NoRoute(f"goal {self.grid.goal} is unreachable from {start}")
        cells = [start]
        cur = start
        while cur != self.grid.goal:
            best, nxt = math.inf, None
            for n in self._neighbors(cur):
                gn = self.g.get(n, math.inf)
                if gn < best:
                    best, nxt = gn, n
            cur = nxt
            cells.append(cur)
        return Route(cells)

    def report_blocked(self, a, b) -> Route:
        """Add a wall between ``a`` and ``b`` and return the repaired route from ``a``."""
        a, b = _cell(a), _cell(b)
        if self.grid.add_wall(a, b):
            self._nbrs.pop(a, None)
            self._nbrs.pop(b, None)
            self._update(a)
            self._update(b)
            self._compute()
        return self.route(a)


def plan_route(grid: GlobalGrid, start=None) -> Route:
    """Shortest wall-avoiding route from scratch (ties: N, S, E, W)."""
    return DStarLite(grid).route(start)


def report_blocked(planner: DStarLite, a, b) -> Route:
    return planner.report_blocked(a, b)


def next_heading(route: Route, current) -> str:
    """Compass direction of the step after ``current`` on ``route``."""
    current = _cell(current)
    if route.cells and current == route.cells[-1]:
        raise AtGoal(f"{current} is the goal")
    try:
        i = route.cells.index(current)
    except ValueError:
        raise OffRoute(f"{current} is not on the route") from None
    nxt = route.cells[i + 1]
    step = (nxt[0] - current[0], nxt[1] - current[1])
    for name, d in HEADINGS.items():
        if d == step:
            return name
    raise OffRoute(f"route step {current}->{nxt} is not 4-adjacent")
