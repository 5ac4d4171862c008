"""Grid world: map/scenario parsing and world<->vertex coordinate transforms.

Coordinate convention: x = column, y = row, origin at the top-left corner of
the map file, so "up" decreases y. Angles follow the usual math convention
with theta = 0 pointing +x and theta = pi/2 pointing up (-y).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import NamedTuple

import numpy as np

PASSABLE_CHARS = frozenset(".G")
BLOCKED_CHARS = frozenset("@OTWS")


class MapError(ValueError):
    """Raised for malformed map/scenario files or invalid grid queries."""


class Vertex(NamedTuple):
    x: int
    y: int


class Action(IntEnum):
    RIGHT = 0
    UP = 1
    LEFT = 2
    DOWN = 3
    WAIT = 4


# (dx, dy) per action; UP decreases y (origin top-left).
ACTION_DELTAS = {
    Action.RIGHT: (1, 0),
    Action.UP: (0, -1),
    Action.LEFT: (-1, 0),
    Action.DOWN: (0, 1),
    Action.WAIT: (0, 0),
}

MOVE_ACTIONS = (Action.RIGHT, Action.UP, Action.LEFT, Action.DOWN)


@dataclass(frozen=True)
class GridMap:
    """4-connected grid with unit cells (1 cell = 1x1 m)."""

    width: int
    height: int
    passable: np.ndarray  # bool, shape (height, width), indexed [y, x]
    resolution: float = 1.0
    name: str = ""

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise MapError("map dimensions must be at least 1x1")
        if self.passable.shape != (self.height, self.width):
            raise MapError("passability matrix does not match declared dimensions")
        if not self.passable.any():
            raise MapError("no passable cells")
        self.passable.setflags(write=False)

    @property
    def num_cells(self) -> int:
        return self.width * self.height

    def in_bounds(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height

    def is_passable(self, x: int, y: int) -> bool:
        return self.in_bounds(x, y) and bool(self.passable[y, x])

    def index(self, v: Vertex) -> int:
        """Linearize a vertex as y * width + x."""
        return v.y * self.width + v.x

    def vertex(self, idx: int) -> Vertex:
        return Vertex(idx % self.width, idx // self.width)

    def passable_indices(self) -> np.ndarray:
        return np.flatnonzero(self.passable.ravel())

    def __eq__(self, other):
        if not isinstance(other, GridMap):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.resolution == other.resolution
            and np.array_equal(self.passable, other.passable)
        )


@dataclass(frozen=True)
class Scenario:
    """Ordered agent list of (start, goal) vertex pairs."""

    agents: tuple[tuple[Vertex, Vertex], ...] = field(default_factory=tuple)

    def __post_init__(self):
        starts = [a[0] for a in self.agents]
        goals = [a[1] for a in self.agents]
        if len(set(starts)) != len(starts):
            raise MapError("scenario has duplicate start vertices")
        if len(set(goals)) != len(goals):
            raise MapError("scenario has duplicate goal vertices")

    def __len__(self) -> int:
        return len(self.agents)


def parse_map(text: str, name: str = "") -> GridMap:
    """Parse an octile-format grid map ('.'/'G' passable, '@OTWS' blocked)."""
    lines = text.splitlines()
    if len(lines) < 4:
        raise MapError("map file truncated: expected 4 header lines")
    if lines[0].strip().lower() != "type octile":
        raise MapError(f"line 1: expected 'type octile', got {lines[0]!r}")
    try:
        height = int(lines[1].split()[1])
        width = int(lines[2].split()[1])
    except (IndexError, ValueError) as exc:
        raise MapError(f"malformed height/width header: {exc}") from exc
    if lines[3].strip().lower() != "map":
        raise MapError(f"line 4: expected 'map', got {lines[3]!r}")

    body = [ln for ln in lines[4:] if ln.strip() != ""]
    if len(body) != height:
        raise MapError(f"body has {len(body)} rows, header declares {height}")
    passable = np.zeros((height, width), dtype=bool)
    for y, row in enumerate(body):
        row = row.rstrip("\r")
        if len(row) != width:
            raise MapError(f"line {y + 5}: row has {len(row)} cells, header declares {width}")
        for x, ch in enumerate(row):
            if ch in PASSABLE_CHARS:
                passable[y, x] = True
            elif ch in BLOCKED_CHARS:
                passable[y, x] = False
            else:
                raise MapError(f"line {y + 5}, column {x + 1}: unknown cell character {ch!r}")
    return GridMap(width=width, height=height, passable=passable, name=name)


def serialize_map(grid: GridMap) -> str:
    """Emit the canonical octile text for a grid ('.' passable, '@' blocked)."""
    rows = ["".join("." if grid.passable[y, x] else "@" for x in range(grid.width))
            for y in range(grid.height)]
    header = ["type octile", f"height {grid.height}", f"width {grid.width}", "map"]
    return "\n".join(header + rows) + "\n"


def parse_scen(text: str, n: int, grid: GridMap | None = None) -> Scenario:
    """Parse the first n entries of a version-1 scenario file.

    Coordinates in the file are (column, row). Bounds are checked against the
    per-row declared map size; passability is checked when a grid is given.
    """
    lines = [ln for ln in text.splitlines() if ln.strip() != ""]
    if not lines or not lines[0].strip().lower().startswith("version"):
        raise MapError("scen file missing version header")
    entries = lines[1:]
    if n > len(entries):
        raise MapError(f"requested {n} agents but file has {len(entries)} entries")
    agents = []
    for i, line in enumerate(entries[:n]):
        fields = line.split("\t")
        if len(fields) == 1:
            fields = line.split()
        if len(fields) < 9:
            raise MapError(f"scen line {i + 2}: expected 9 fields, got {len(fields)}")
        try:
            mw, mh = int(fields[2]), int(fields[3])
            sx, sy, gx, gy = (int(f) for f in fields[4:8])
        except ValueError as exc:
            raise MapError(f"scen line {i + 2}: {exc}") from exc
        for (cx, cy), label in (((sx, sy), "start"), ((gx, gy), "goal")):
            if not (0 <= cx < mw and 0 <= cy < mh):
                raise MapError(f"scen line {i + 2}: {label} ({cx},{cy}) out of map bounds")
            if grid is not None and not grid.is_passable(cx, cy):
                raise MapError(f"scen line {i + 2}: {label} ({cx},{cy}) on a blocked cell")
        agents.append((Vertex(sx, sy), Vertex(gx, gy)))
    return Scenario(agents=tuple(agents))


def world_to_vertex(grid: GridMap, pos: tuple[float, float]) -> Vertex:
    """Map a metric position to its containing cell (floor by resolution)."""
    px, py = pos
    if not (0.0 <= px < grid.width * grid.resolution and 0.0 <= py < grid.height * grid.resolution):
        raise MapError(f"position ({px}, {py}) outside map extent")
    return Vertex(int(px // grid.resolution), int(py // grid.resolution))


def vertex_to_world(grid: GridMap, v: Vertex) -> tuple[float, float]:
    """Metric position of a cell center."""
    return ((v.x + 0.5) * grid.resolution, (v.y + 0.5) * grid.resolution)


def neighbors(grid: GridMap, v: Vertex) -> list[tuple[Action, Vertex]]:
    """Available transitions from v, in order Right, Up, Left, Down, Wait."""
    if not grid.is_passable(v.x, v.y):
        raise MapError(f"vertex {v} is blocked or out of bounds")
    out = []
    for a in MOVE_ACTIONS:
        dx, dy = ACTION_DELTAS[a]
        nx, ny = v.x + dx, v.y + dy
        if grid.is_passable(nx, ny):
            out.append((a, Vertex(nx, ny)))
    out.append((Action.WAIT, v))
    return out


def neighbor_table(grid: GridMap) -> np.ndarray:
    """Dense transition table: nbr[v_idx, action] = target index or -1."""
    n = grid.num_cells
    table = np.full((n, 5), -1, dtype=np.int32)
    flat = grid.passable.ravel()
    for idx in np.flatnonzero(flat):
        v = grid.vertex(int(idx))
        for a, u in neighbors(grid, v):
            table[idx, a] = grid.index(u)
    return table
