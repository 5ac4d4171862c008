"""Flow costs and the weighted guidance graph.

Each directed transition (v, a) gets weight omega = g_s + g_f where g_f is a
min-max-normalized Mahalanobis misalignment between the action's velocity and
the cell's learned velocity mixture, scaled by ln(observation count). Cells
without a model contribute zero flow cost, so an empty motion map reduces the
graph to uniform step costs.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .cliffmap import CliffMap, SWGMM
from .world import Action, GridMap, MOVE_ACTIONS, Vertex, neighbor_table

TWO_PI = 2.0 * math.pi

# Velocity (theta, rho) per move action: Right, Up, Left, Down at 1 m/s.
ACTION_VELOCITIES = {
    Action.RIGHT: (0.0, 1.0),
    Action.UP: (math.pi / 2.0, 1.0),
    Action.LEFT: (math.pi, 1.0),
    Action.DOWN: (3.0 * math.pi / 2.0, 1.0),
}


class GuidanceError(ValueError):
    pass


def action_velocity(a: Action) -> tuple[float, float]:
    """Velocity vector of a move action; Wait has no defined angle."""
    if a == Action.WAIT:
        raise GuidanceError("wait action has no defined movement angle")
    return ACTION_VELOCITIES[a]


def _mixture_distance(model: SWGMM, a_theta: float, a_rho: float) -> float:
    """Weight-averaged Mahalanobis distance between the mixture and (a_theta, a_rho).

    The angular difference is the shortest positive distance around the unit
    circle; the speed difference is mu_rho - a_rho.
    """
    total = 0.0
    for beta, d in model.components:
        dt = abs(d.mu_theta - a_theta)
        dt = min(dt, TWO_PI - dt)
        dr = d.mu_rho - a_rho
        s = d.sigma
        det = s[0, 0] * s[1, 1] - s[0, 1] * s[0, 1]
        quad = (s[1, 1] * dt * dt - 2.0 * s[0, 1] * dt * dr + s[0, 0] * dr * dr) / det
        total += beta * math.sqrt(max(quad, 0.0))
    return total


def _scaled(gamma: int, mix_dist: float, log_inside: bool) -> float:
    if gamma <= 0:
        return 0.0
    if log_inside:
        # alternative reading of the cost grouping, for experimentation only
        v = gamma * mix_dist
        return math.log(v) if v > 0.0 else 0.0
    return math.log(gamma) * mix_dist


def flow_cost_raw(
    a: Action, model: SWGMM, gamma: int, log_inside: bool = False
) -> float:
    """Raw (unnormalized) flow cost of taking move action a in a modeled cell."""
    theta, rho = action_velocity(a)
    return _scaled(gamma, _mixture_distance(model, theta, rho), log_inside)


def wait_cost(model: SWGMM, gamma: int, log_inside: bool = False) -> float:
    """Flow cost of waiting: mean over the four moves with speed set to zero."""
    dist = sum(
        _mixture_distance(model, ACTION_VELOCITIES[a][0], 0.0) for a in MOVE_ACTIONS
    ) / 4.0
    return _scaled(gamma, dist, log_inside)


def normalize_costs(raw: np.ndarray) -> np.ndarray:
    """Min-max normalize finite entries into [0, 1]; all-equal maps to 0."""
    finite = np.isfinite(raw)
    if not finite.any():
        raise GuidanceError("no transitions to normalize")
    vals = raw[finite]
    lo, hi = float(vals.min()), float(vals.max())
    out = np.full_like(raw, np.nan)
    if hi - lo <= 0.0:
        out[finite] = 0.0
    else:
        out[finite] = (raw[finite] - lo) / (hi - lo)
    return out


@dataclass
class GuidanceGraph:
    """Directed weighted transition structure over a grid's passable cells.

    omega[v_idx, action] holds the edge weight, +inf where the transition does
    not exist. nbr[v_idx, action] is the target cell index or -1.
    """

    grid: GridMap
    g_s: float
    omega: np.ndarray  # (num_cells, 5) float64
    nbr: np.ndarray  # (num_cells, 5) int32
    raw_flow: np.ndarray | None = None

    def incoming(self) -> list[list[tuple[int, float]]]:
        """Reverse adjacency over move edges, built once per graph."""
        cached = getattr(self, "_incoming", None)
        if cached is None:
            cached = [[] for _ in range(self.grid.num_cells)]
            for idx in self.grid.passable_indices():
                for a in MOVE_ACTIONS:
                    tgt = int(self.nbr[idx, a])
                    if tgt >= 0:
                        cached[tgt].append((int(idx), float(self.omega[idx, a])))
            object.__setattr__(self, "_incoming", cached)
        return cached

    def edge_weight(self, v: Vertex, a: Action) -> float:
        w = float(self.omega[self.grid.index(v), a])
        if not math.isfinite(w):
            raise GuidanceError(f"no transition ({v}, {a.name})")
        return w

    def edges(self):
        """Yield (source, action, target, weight) over all transitions."""
        grid = self.grid
        for idx in grid.passable_indices():
            v = grid.vertex(int(idx))
            for a in Action:
                tgt = int(self.nbr[idx, a])
                if tgt >= 0:
                    yield v, a, grid.vertex(tgt), float(self.omega[idx, a])

    def max_flow_ratio(self) -> float:
        """omega_2: max over edges of (omega_e - g_s) / g_s."""
        finite = self.omega[np.isfinite(self.omega)]
        return float((finite.max() - self.g_s) / self.g_s) if finite.size else 0.0


def build_guidance_graph(
    grid: GridMap,
    cliff: CliffMap | None = None,
    g_s: float = 1.0,
    log_inside: bool = False,
) -> GuidanceGraph:
    """Assemble the guidance graph: omega = g_s + normalized flow cost of the
    source cell's (vertex, action) pair. Move and wait costs share one
    min-max pool over all transitions of the map."""
    if g_s <= 0.0:
        raise GuidanceError("step cost must be positive")
    nbr = neighbor_table(grid)
    raw = np.full((grid.num_cells, 5), np.inf)
    valid = nbr >= 0
    raw[valid] = 0.0
    if cliff is not None and len(cliff):
        for v, (model, gamma) in cliff.cells.items():
            idx = grid.index(v)
            if not grid.passable[v.y, v.x]:
                continue
            for a in MOVE_ACTIONS:
                if nbr[idx, a] >= 0:
                    raw[idx, a] = flow_cost_raw(a, model, gamma, log_inside)
            raw[idx, Action.WAIT] = wait_cost(model, gamma, log_inside)
    masked = np.where(valid, raw, np.nan)
    normalized = normalize_costs(masked)
    omega = np.full((grid.num_cells, 5), np.inf)
    omega[valid] = g_s + normalized[valid]
    return GuidanceGraph(grid=grid, g_s=g_s, omega=omega, nbr=nbr,
                         raw_flow=np.where(valid, raw, np.nan))


@dataclass
class HeuristicTable:
    """Exact cost-to-go to one goal on the guidance graph (inf if unreachable)."""

    goal: Vertex
    h: np.ndarray  # (num_cells,) float64

    def value(self, idx: int) -> float:
        return float(self.h[idx])


def precompute_heuristic(gg: GuidanceGraph, goal: Vertex) -> HeuristicTable:
    """Single-source shortest paths on the edge-reversed guidance graph."""
    grid = gg.grid
    if not grid.is_passable(goal.x, goal.y):
        raise GuidanceError(f"goal {goal} is not passable")
    n = grid.num_cells
    incoming = gg.incoming()
    h = np.full(n, np.inf)
    goal_idx = grid.index(goal)
    h[goal_idx] = 0.0
    pq = [(0.0, goal_idx)]
    while pq:
        d, v = heapq.heappop(pq)
        if d > h[v]:
            continue
        for u, w in incoming[v]:
            nd = d + w
            if nd < h[u]:
                h[u] = nd
                heapq.heappush(pq, (nd, u))
    return HeuristicTable(goal=goal, h=h)


@dataclass
class AgentBound:
    agent: int
    cost: float
    reference_length: float
    bound: float
    slack: float

    @property
    def holds(self) -> bool:
        return self.cost <= self.bound + 1e-9


@dataclass
class BoundReport:
    """Check of the (omega1 + omega1*omega2) suboptimality bound.

    The verdict is taken at the solution level (sum of path costs against the
    summed reference lengths); per-agent rows are informational since conflict
    resolution may stretch an individual path beyond its own reference.
    """

    omega1: float
    omega2: float
    factor: float
    agents: list[AgentBound] = field(default_factory=list)
    total_cost: float = 0.0
    total_bound: float = 0.0

    @property
    def verdict(self) -> bool:
        return self.total_cost <= self.total_bound + 1e-9

    @property
    def total_slack(self) -> float:
        return self.total_bound - self.total_cost


def verify_suboptimality_bound(
    solution, omega1: float, omega2: float, shortest_lengths: dict[int, float]
) -> BoundReport:
    """Verify cost(path) <= (omega1 + omega1*omega2) * unit-cost reference.

    shortest_lengths maps agent id to its unit-step reference length (the
    agent's path cost in an optimal unit-cost solution).
    """
    if omega1 < 1.0:
        raise GuidanceError("omega1 must be >= 1")
    if omega2 < 0.0:
        raise GuidanceError("omega2 must be >= 0")
    factor = omega1 + omega1 * omega2
    paths = getattr(solution, "paths", solution)
    report = BoundReport(omega1=omega1, omega2=omega2, factor=factor)
    for path in paths:
        if path.agent not in shortest_lengths:
            raise GuidanceError(f"missing shortest length for agent {path.agent}")
        ref = float(shortest_lengths[path.agent])
        bound = factor * ref
        report.agents.append(AgentBound(
            agent=path.agent, cost=path.cost, reference_length=ref,
            bound=bound, slack=bound - path.cost))
        report.total_cost += path.cost
        report.total_bound += bound
    return report


def export_guidance_rows(gg: GuidanceGraph) -> list[tuple[int, int, str, float]]:
    """Flatten the graph to (x, y, action, omega) rows for inspection."""
    return [(v.x, v.y, a.name.lower(), w) for v, a, _, w in gg.edges()]
