"""Uncontrollable agents: trajectory synthesis under three movement regimes
and continuous-space conflict counting against MAPF agents.

UAs follow shortest 8-connected grid paths at constant speed (diagonals cost
sqrt(2), no corner cutting) and vanish on arrival. Conflicts are contact
episodes: maximal intervals where an agent-UA distance stays below the sum of
their radii, found in closed form on piecewise-constant-velocity segments.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .lifelong import SimulationLog
from .solver import Solution
from .world import GridMap, Vertex, vertex_to_world

SQRT2 = math.sqrt(2.0)

DEFAULT_RADIUS = 0.3  # meters, per agent and per UA


class UAError(ValueError):
    pass


@dataclass(frozen=True)
class Area:
    """Axis-aligned rectangle of cells (inclusive bounds) for sampling."""

    name: str
    x0: int
    y0: int
    x1: int
    y1: int
    role: str  # "start" | "goal"
    weight: float = 1.0
    speed_multiplier: float = 1.0
    pair: str | None = None

    def cells(self, grid: GridMap) -> list[Vertex]:
        out = [Vertex(x, y)
               for y in range(max(self.y0, 0), min(self.y1, grid.height - 1) + 1)
               for x in range(max(self.x0, 0), min(self.x1, grid.width - 1) + 1)
               if grid.passable[y, x]]
        if not out:
            raise UAError(f"area {self.name!r} contains no passable cell")
        return out


@dataclass
class UAConfig:
    movement_type: str = "random"  # "random" | "directed" | "speed"
    areas: list[Area] = field(default_factory=list)
    base_speed: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.movement_type not in ("random", "directed", "speed"):
            raise UAError(f"unknown movement type {self.movement_type!r}")
        if self.movement_type in ("directed", "speed") and not any(
                a.role == "start" for a in self.areas):
            raise UAError("directed/speed regimes need at least one start area")
        if any(a.speed_multiplier <= 0 for a in self.areas):
            raise UAError("speed multipliers must be positive")

    def to_json(self) -> str:
        return json.dumps({
            "movement_type": self.movement_type,
            "areas": [asdict(a) for a in self.areas],
            "base_speed": self.base_speed,
            "seed": self.seed,
        }, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "UAConfig":
        doc = json.loads(text)
        areas = [Area(**a) for a in doc.get("areas", [])]
        return cls(movement_type=doc["movement_type"], areas=areas,
                   base_speed=float(doc.get("base_speed", 1.0)),
                   seed=int(doc.get("seed", 0)))


@dataclass
class UATrajectory:
    ua_id: str
    spawn_time: float
    waypoints: list[tuple[float, float, float]]  # (t, x, y), absolute times
    speed: float

    @property
    def end_time(self) -> float:
        return self.waypoints[-1][0]

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        w = np.asarray(self.waypoints)
        return w[:, 0], w[:, 1], w[:, 2]


# 8-connected moves with costs; diagonals must not cut blocked corners.
_UA_MOVES = [(1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0),
             (1, 1, SQRT2), (1, -1, SQRT2), (-1, 1, SQRT2), (-1, -1, SQRT2)]


class UAPlanner:
    """Shortest 8-connected paths, cached as one Dijkstra tree per goal."""

    def __init__(self, grid: GridMap):
        self.grid = grid
        self._cache: dict[Vertex, tuple[np.ndarray, np.ndarray]] = {}

    def _tree(self, goal: Vertex) -> tuple[np.ndarray, np.ndarray]:
        got = self._cache.get(goal)
        if got is not None:
            return got
        grid = self.grid
        n = grid.num_cells
        dist = np.full(n, np.inf)
        parent = np.full(n, -1, dtype=np.int64)
        g_idx = grid.index(goal)
        dist[g_idx] = 0.0
        pq = [(0.0, g_idx)]
        while pq:
            d, v = heapq.heappop(pq)
            if d > dist[v]:
                continue
            vx, vy = v % grid.width, v // grid.width
            for dx, dy, c in _UA_MOVES:
                nx, ny = vx + dx, vy + dy
                if not grid.is_passable(nx, ny):
                    continue
                if dx != 0 and dy != 0 and not (
                        grid.is_passable(vx + dx, vy) and grid.is_passable(vx, vy + dy)):
                    continue
                u = ny * grid.width + nx
                nd = d + c
                if nd < dist[u] - 1e-12:
                    dist[u] = nd
                    parent[u] = v
                    heapq.heappush(pq, (nd, u))
        self._cache[goal] = (dist, parent)
        return dist, parent

    def plan(self, start: Vertex, goal: Vertex, speed: float,
             spawn_time: float = 0.0, ua_id: str = "ua") -> UATrajectory:
        if speed <= 0.0:
            raise UAError("speed must be positive")
        grid = self.grid
        if not grid.is_passable(start.x, start.y) or not grid.is_passable(goal.x, goal.y):
            raise UAError("start/goal must be passable")
        dist, parent = self._tree(goal)
        s_idx = grid.index(start)
        if not math.isfinite(dist[s_idx]):
            raise UAError(f"goal {goal} unreachable from {start}")
        cells = [s_idx]
        while cells[-1] != grid.index(goal):
            cells.append(int(parent[cells[-1]]))
        waypoints = []
        t = float(spawn_time)
        prev = None
        for idx in cells:
            v = grid.vertex(idx)
            if prev is not None:
                step = SQRT2 if (v.x != prev.x and v.y != prev.y) else 1.0
                t += step * grid.resolution / speed
            wx, wy = vertex_to_world(grid, v)
            waypoints.append((t, wx, wy))
            prev = v
        return UATrajectory(ua_id=ua_id, spawn_time=float(spawn_time),
                            waypoints=waypoints, speed=speed)


def plan_ua_path(grid: GridMap, start: Vertex, goal: Vertex, speed: float = 1.0,
                 spawn_time: float = 0.0, ua_id: str = "ua") -> UATrajectory:
    return UAPlanner(grid).plan(start, goal, speed, spawn_time, ua_id)


def _sample_endpoints(grid: GridMap, cfg: UAConfig, rng) -> tuple[Vertex, Vertex, float]:
    if cfg.movement_type == "random":
        passable = grid.passable_indices()
        start = grid.vertex(int(passable[rng.integers(passable.size)]))
        goal = start
        while goal == start:
            goal = grid.vertex(int(passable[rng.integers(passable.size)]))
        return start, goal, cfg.base_speed
    starts = [a for a in cfg.areas if a.role == "start"]
    sw = np.array([a.weight for a in starts], dtype=float)
    s_area = starts[rng.choice(len(starts), p=sw / sw.sum())]
    goals = [a for a in cfg.areas if a.role == "goal"
             and (s_area.pair is None or a.pair == s_area.pair)]
    if not goals:
        raise UAError(f"no goal area matches start area {s_area.name!r}")
    gw = np.array([a.weight for a in goals], dtype=float)
    g_area = goals[rng.choice(len(goals), p=gw / gw.sum())]
    s_cells = s_area.cells(grid)
    g_cells = g_area.cells(grid)
    start = s_cells[rng.integers(len(s_cells))]
    goal = g_cells[rng.integers(len(g_cells))]
    speed = cfg.base_speed
    if cfg.movement_type == "speed":
        speed *= s_area.speed_multiplier
    return start, goal, speed


def _generate(grid: GridMap, cfg: UAConfig, spawn_times: list[float],
              salt: int) -> list[UATrajectory]:
    rng = np.random.default_rng((cfg.seed, salt))
    planner = UAPlanner(grid)
    out = []
    for i, spawn in enumerate(spawn_times):
        for _ in range(64):
            start, goal, speed = _sample_endpoints(grid, cfg, rng)
            try:
                traj = planner.plan(start, goal, speed, spawn, ua_id=f"ua{i:05d}")
                break
            except UAError:
                continue
        else:
            raise UAError("could not find a reachable start/goal pair")
        out.append(traj)
    return out


def generate_dataset(grid: GridMap, cfg: UAConfig, n: int = 10_000) -> list[UATrajectory]:
    """Historical trajectory set used to fit the motion map (all spawn at 0)."""
    if n < 1:
        raise UAError("need at least one trajectory")
    return _generate(grid, cfg, [0.0] * n, salt=0x0DA7A)


def generate_stream(grid: GridMap, cfg: UAConfig, mode: str = "lifelong",
                    sim_time: int = 2000, count: int = 100) -> list[UATrajectory]:
    """Execution-time UAs: 'oneshot' spawns `count` at t=0, 'lifelong' spawns
    one per timestep for sim_time steps."""
    if mode == "oneshot":
        spawns = [0.0] * count
    elif mode == "lifelong":
        spawns = [float(t) for t in range(sim_time)]
    else:
        raise UAError(f"unknown stream mode {mode!r}")
    return _generate(grid, cfg, spawns, salt=0xF10)


def uas_to_csv(uas: list[UATrajectory]) -> str:
    lines = ["traj_id,t,x,y"]
    for traj in uas:
        for t, x, y in traj.waypoints:
            lines.append(f"{traj.ua_id},{t!r},{x!r},{y!r}")
    return "\n".join(lines) + "\n"


def uas_from_csv(text: str) -> list[UATrajectory]:
    from .trajectories import load_trajectories

    out = []
    for traj in load_trajectories(text):
        wps = [(t, x, y) for t, x, y in traj.samples]
        out.append(UATrajectory(ua_id=traj.id, spawn_time=wps[0][0],
                                waypoints=wps, speed=0.0))
    return out


@dataclass
class AgentTrack:
    """Piecewise-linear MAPF agent motion (cell centers, unit timesteps)."""

    agent: int
    times: np.ndarray
    xs: np.ndarray
    ys: np.ndarray


def tracks_from_solution(grid: GridMap, solution: Solution, t_end: float) -> list[AgentTrack]:
    tracks = []
    for p in solution.paths:
        pts = [vertex_to_world(grid, v) for v in p.vertices]
        times = [float(p.start_time + k) for k in range(len(pts))]
        if times[-1] < t_end:  # rest at the goal afterwards
            times.append(float(t_end))
            pts.append(pts[-1])
        tracks.append(AgentTrack(p.agent, np.array(times),
                                 np.array([q[0] for q in pts]),
                                 np.array([q[1] for q in pts])))
    return tracks


def tracks_from_log(grid: GridMap, sim_log: SimulationLog) -> list[AgentTrack]:
    times = np.arange(len(sim_log.positions), dtype=float)
    tracks = []
    for a in range(sim_log.num_agents):
        pts = [vertex_to_world(grid, row[a]) for row in sim_log.positions]
        tracks.append(AgentTrack(a, times,
                                 np.array([q[0] for q in pts]),
                                 np.array([q[1] for q in pts])))
    return tracks


@dataclass
class ConflictEvent:
    agent: int
    ua_id: str
    t_start: float
    t_end: float
    min_distance: float


@dataclass
class ConflictReport:
    total: int = 0
    per_timestep: dict[int, int] = field(default_factory=dict)
    events: list[ConflictEvent] = field(default_factory=list)

    def rate(self, sim_time: float) -> float:
        return self.total / sim_time if sim_time > 0 else 0.0


def _pair_contact_intervals(track: AgentTrack, ua: UATrajectory, threshold: float):
    """Sub-threshold intervals of the distance between two piecewise-linear
    motions, exact per constant-velocity segment."""
    ut, ux, uy = ua.arrays()
    lo = max(float(track.times[0]), float(ut[0]))
    hi = min(float(track.times[-1]), float(ut[-1]))
    if hi <= lo:
        return []
    cuts = np.union1d(track.times, ut)
    cuts = cuts[(cuts >= lo) & (cuts <= hi)]
    if cuts[0] > lo:
        cuts = np.insert(cuts, 0, lo)
    if cuts[-1] < hi:
        cuts = np.append(cuts, hi)
    ax = np.interp(cuts, track.times, track.xs)
    ay = np.interp(cuts, track.times, track.ys)
    bx = np.interp(cuts, ut, ux)
    by = np.interp(cuts, ut, uy)
    px, py = ax - bx, ay - by

    intervals = []
    r2 = threshold * threshold
    for k in range(len(cuts) - 1):
        dt = cuts[k + 1] - cuts[k]
        if dt <= 0:
            continue
        vx = (px[k + 1] - px[k]) / dt
        vy = (py[k + 1] - py[k]) / dt
        a = vx * vx + vy * vy
        b = 2.0 * (px[k] * vx + py[k] * vy)
        c = px[k] * px[k] + py[k] * py[k] - r2
        if a < 1e-15:
            if c < 0.0:
                intervals.append((cuts[k], cuts[k + 1], math.sqrt(max(c + r2, 0.0))))
            continue
        disc = b * b - 4.0 * a * c
        if disc <= 0.0:
            continue
        root = math.sqrt(disc)
        lo_t = max((-b - root) / (2.0 * a), 0.0)
        hi_t = min((-b + root) / (2.0 * a), dt)
        if lo_t < hi_t:
            t_star = min(max(-b / (2.0 * a), lo_t), hi_t)
            dx, dy = px[k] + vx * t_star, py[k] + vy * t_star
            intervals.append((cuts[k] + lo_t, cuts[k] + hi_t, math.hypot(dx, dy)))
    return intervals


def _merge_episodes(intervals):
    """Merge touching contact intervals into maximal episodes."""
    episodes = []
    for lo, hi, dmin in intervals:
        if episodes and lo <= episodes[-1][1] + 1e-9:
            plo, phi, pd = episodes[-1]
            episodes[-1] = (plo, max(phi, hi), min(pd, dmin))
        else:
            episodes.append((lo, hi, dmin))
    return episodes


def count_conflicts(
    solution_or_log,
    uas: list[UATrajectory],
    grid: GridMap,
    radius_agent: float = DEFAULT_RADIUS,
    radius_ua: float = DEFAULT_RADIUS,
) -> ConflictReport:
    """Count agent-UA contact episodes (distance below the summed radii).

    Each (agent, UA) episode counts once, attributed to the timestep at which
    contact begins.
    """
    threshold = radius_agent + radius_ua
    if isinstance(solution_or_log, SimulationLog):
        tracks = tracks_from_log(grid, solution_or_log)
    elif isinstance(solution_or_log, Solution):
        t_end = max([ua.end_time for ua in uas], default=0.0)
        t_end = max(t_end, max(p.end_time for p in solution_or_log.paths))
        tracks = tracks_from_solution(grid, solution_or_log, t_end)
    else:
        tracks = list(solution_or_log)

    report = ConflictReport()
    for track in tracks:
        for ua in uas:
            intervals = _pair_contact_intervals(track, ua, threshold)
            for lo, hi, dmin in _merge_episodes(intervals):
                report.total += 1
                step = int(math.floor(lo))
                report.per_timestep[step] = report.per_timestep.get(step, 0) + 1
                report.events.append(ConflictEvent(
                    agent=track.agent, ua_id=ua.ua_id,
                    t_start=lo, t_end=hi, min_distance=dmin))
    report.events.sort(key=lambda e: (e.t_start, e.agent, e.ua_id))
    return report
