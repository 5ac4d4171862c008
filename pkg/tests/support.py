"""Shared helpers and independent oracles for the test suite.

The oracles deliberately avoid the library's search code paths: joint-state
A* with rest-at-goal debt accounting, time-expanded Dijkstra, Floyd-Warshall
all-pairs distances, Riemann quadrature, and dense-sampled conflict episodes.
"""

from __future__ import annotations

import heapq
import itertools
import math
from collections import deque
from pathlib import Path

import numpy as np

from flowmapf.cliffmap import SWGMM, SWND, CliffMap
from flowmapf.world import Action, GridMap, MOVE_ACTIONS, Scenario, Vertex, neighbors

ASSETS = Path(__file__).resolve().parents[1] / "assets"


def grid_from_rows(rows: list[str]) -> GridMap:
    """Build a map from '.'/'@' row strings."""
    h, w = len(rows), len(rows[0])
    passable = np.array([[c == "." for c in row] for row in rows])
    return GridMap(width=w, height=h, passable=passable)


def empty_grid(w: int, h: int) -> GridMap:
    return GridMap(width=w, height=h, passable=np.ones((h, w), dtype=bool))


def random_grid(rng, w: int, h: int, p_block: float) -> GridMap:
    for _ in range(200):
        passable = rng.random((h, w)) > p_block
        if passable.sum() >= max(4, w * h // 3):
            try:
                return GridMap(width=w, height=h, passable=passable)
            except Exception:
                continue
    raise RuntimeError("could not sample a usable map")


def random_scenario(rng, grid: GridMap, k: int) -> Scenario | None:
    cells = [grid.vertex(int(i)) for i in grid.passable_indices()]
    if len(cells) < 2 * k:
        return None
    picks = rng.choice(len(cells), size=2 * k, replace=False)
    try:
        return Scenario(agents=tuple(
            (cells[picks[i]], cells[picks[k + i]]) for i in range(k)))
    except Exception:
        return None


def random_cliffmap(rng, grid: GridMap, p_model: float = 0.5) -> CliffMap:
    """Synthetic single-component models on a random subset of cells."""
    cells = {}
    for idx in grid.passable_indices():
        if rng.random() < p_model:
            v = grid.vertex(int(idx))
            mt = float(rng.uniform(0, 2 * math.pi))
            mr = float(rng.uniform(0.3, 1.5))
            sig = np.diag(rng.uniform(0.05, 0.6, 2))
            cells[v] = (SWGMM(((1.0, SWND(mt, mr, sig)),)), int(rng.integers(2, 200)))
    return CliffMap(cells=cells)


def bfs_distances(grid: GridMap, goal: Vertex) -> dict[Vertex, int]:
    dist = {goal: 0}
    dq = deque([goal])
    while dq:
        v = dq.popleft()
        for _, u in neighbors(grid, v):
            if u != v and u not in dist:
                dist[u] = dist[v] + 1
                dq.append(u)
    return dist


def oracle_joint_soc(grid: GridMap, scen: Scenario,
                     node_budget: int = 400_000) -> int | None:
    """Optimal sum-of-costs by A* over joint states.

    Waiting at the goal is free unless the agent later leaves, handled with a
    per-agent debt counter. Returns None if unsolvable or over budget.
    """
    starts = tuple(s for s, _ in scen.agents)
    goals = tuple(g for _, g in scen.agents)
    n = len(starts)
    dists = [bfs_distances(grid, g) for g in goals]
    if any(starts[k] not in dists[k] for k in range(n)):
        return None
    nbrs = {grid.vertex(int(i)): [u for _, u in neighbors(grid, grid.vertex(int(i)))]
            for i in grid.passable_indices()}

    def h(positions):
        return sum(dists[k][positions[k]] for k in range(n))

    start_state = (starts, (0,) * n)
    g_best = {start_state: 0}
    pq = [(h(starts), 0, start_state)]
    popped = 0
    while pq:
        f, g, state = heapq.heappop(pq)
        pos, waits = state
        if g > g_best.get(state, math.inf):
            continue
        if pos == goals:
            return g
        popped += 1
        if popped > node_budget:
            return None
        options = []
        for k in range(n):
            opts = []
            for u in nbrs[pos[k]]:
                if u == pos[k]:
                    c = 0 if pos[k] == goals[k] else 1
                    w2 = waits[k] + 1 if pos[k] == goals[k] else 0
                else:
                    c = (1 + waits[k]) if pos[k] == goals[k] else 1
                    w2 = 0
                opts.append((u, c, w2))
            options.append(opts)
        for combo in itertools.product(*options):
            new_pos = tuple(c[0] for c in combo)
            if len(set(new_pos)) != n:
                continue
            if any(new_pos[a] == pos[b] and new_pos[b] == pos[a]
                   for a in range(n) for b in range(a + 1, n) if pos[a] != pos[b]):
                continue
            new_state = (new_pos, tuple(c[2] for c in combo))
            ng = g + sum(c[1] for c in combo)
            if ng < g_best.get(new_state, math.inf):
                g_best[new_state] = ng
                heapq.heappush(pq, (ng + h(new_pos), ng, new_state))
    return None


def oracle_time_expanded(gg, start: Vertex, goal: Vertex, vset=(), eset=(),
                         t_cap: int | None = None) -> float | None:
    """Dijkstra over (vertex, time) on the guidance graph under constraints.

    vset holds (Vertex, t) forbidden occupancies; eset holds (u, v, t)
    forbidden transitions departing at t. Mirrors the solver's rest-at-goal
    acceptance rule but shares none of its code.
    """
    grid = gg.grid
    vset = {(grid.index(v), t) for v, t in vset}
    eset = {(grid.index(u), grid.index(v), t) for u, v, t in eset}
    max_ct = max([t for _, t in vset] + [t + 1 for _, _, t in eset], default=-1)
    if t_cap is None:
        t_cap = max_ct + grid.num_cells + 1
    goal_idx = grid.index(goal)
    goal_max_vc = max([t for v, t in vset if v == goal_idx], default=-1)
    start_idx = grid.index(start)
    if (start_idx, 0) in vset:
        return None
    dist = {(start_idx, 0): 0.0}
    pq = [(0.0, start_idx, 0)]
    while pq:
        d, v, t = heapq.heappop(pq)
        if d > dist.get((v, t), math.inf):
            continue
        if v == goal_idx and t >= goal_max_vc:
            return d
        if t >= t_cap:
            continue
        for a in range(5):
            u = int(gg.nbr[v, a])
            if u < 0:
                continue
            if (u, t + 1) in vset or (v, u, t) in eset:
                continue
            nd = d + float(gg.omega[v, a])
            if nd < dist.get((u, t + 1), math.inf) - 1e-12:
                dist[(u, t + 1)] = nd
                heapq.heappush(pq, (nd, u, t + 1))
    return None


def oracle_floyd_warshall(gg) -> np.ndarray:
    """All-pairs shortest distances over the guidance graph's move edges."""
    n = gg.grid.num_cells
    d = np.full((n, n), np.inf)
    np.fill_diagonal(d, 0.0)
    for idx in gg.grid.passable_indices():
        for a in MOVE_ACTIONS:
            tgt = int(gg.nbr[idx, a])
            if tgt >= 0:
                d[idx, tgt] = min(d[idx, tgt], float(gg.omega[idx, a]))
    for k in range(n):
        d = np.minimum(d, d[:, k:k + 1] + d[k:k + 1, :])
    return d


def oracle_mixture_integral(mix: SWGMM, n_theta: int = 720, n_rho: int = 600,
                            rho_hi: float = 6.0) -> float:
    """Riemann sum of the mixture density over [0, 2pi) x [0, rho_hi]."""
    from flowmapf.cliffmap import _log_winding_density

    thetas = (np.arange(n_theta) + 0.5) * (2 * math.pi / n_theta)
    rhos = (np.arange(n_rho) + 0.5) * (rho_hi / n_rho)
    tt, rr = np.meshgrid(thetas, rhos, indexing="ij")
    tt, rr = tt.ravel(), rr.ravel()
    dens = np.zeros_like(tt)
    for beta, d in mix.components:
        dens += beta * np.exp(_log_winding_density(tt, rr, d.mu_theta, d.mu_rho,
                                                   d.sigma, 2))
    return float(dens.sum() * (2 * math.pi / n_theta) * (rho_hi / n_rho))


def oracle_conflict_episodes(track, ua, threshold: float,
                             samples_per_step: int = 100) -> list[tuple[float, float]]:
    """Contact episodes by dense sampling of the pair distance."""
    ut = ua.arrays()[0]
    lo = max(float(track.times[0]), float(ut[0]))
    hi = min(float(track.times[-1]), float(ut[-1]))
    if hi <= lo:
        return []
    n = max(2, int(round((hi - lo) * samples_per_step)) + 1)
    ts = np.linspace(lo, hi, n)
    ax = np.interp(ts, track.times, track.xs)
    ay = np.interp(ts, track.times, track.ys)
    uts, uxs, uys = ua.arrays()
    bx = np.interp(ts, uts, uxs)
    by = np.interp(ts, uts, uys)
    inside = np.hypot(ax - bx, ay - by) < threshold
    episodes = []
    start = None
    for k, flag in enumerate(inside):
        if flag and start is None:
            start = ts[k]
        elif not flag and start is not None:
            episodes.append((start, ts[k - 1]))
            start = None
    if start is not None:
        episodes.append((start, ts[-1]))
    return episodes
