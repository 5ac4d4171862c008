"""Bounded-suboptimal space-time A* on the guidance graph.

Focal search: nodes with f <= omega1 * f_min form the focal list, expanded by
fewest prospective conflicts against other agents' paths. The returned f_min
is a valid lower bound on the constrained optimum, so the path cost is
certified within omega1 of optimal.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass

from ..guidance import GuidanceGraph, HeuristicTable
from ..world import Action, Vertex
from .types import Constraint, TimedPath

INF = math.inf


@dataclass
class PlanResult:
    path: TimedPath | None
    f_min: float
    expanded: int
    reason: str | None = None

    @property
    def ok(self) -> bool:
        return self.path is not None


class ConflictAvoidance:
    """Occupancy of other agents' paths, for the focal conflict count."""

    def __init__(self, gg: GuidanceGraph, paths: list[TimedPath], pad: bool = True):
        self.vertex_occ: dict[tuple[int, int], int] = {}
        self.edge_occ: dict[tuple[int, int, int], int] = {}
        self.rest: dict[int, list[int]] = {}
        grid = gg.grid
        for p in paths:
            idxs = [grid.index(v) for v in p.vertices]
            t = p.start_time
            for k, v in enumerate(idxs):
                key = (v, t + k)
                self.vertex_occ[key] = self.vertex_occ.get(key, 0) + 1
            for k in range(len(idxs) - 1):
                key = (idxs[k], idxs[k + 1], t + k)
                self.edge_occ[key] = self.edge_occ.get(key, 0) + 1
            if pad and idxs:
                self.rest.setdefault(idxs[-1], []).append(p.end_time)

    def count_vertex(self, v: int, t: int) -> int:
        c = self.vertex_occ.get((v, t), 0)
        for end in self.rest.get(v, ()):
            if t > end:
                c += 1
        return c

    def count_move(self, u: int, v: int, t_dep: int) -> int:
        """Conflicts of moving u -> v departing at t_dep: target vertex plus swap."""
        c = self.count_vertex(v, t_dep + 1)
        c += self.edge_occ.get((v, u, t_dep), 0)
        return c


def split_constraints(
    constraints: list[Constraint], agent: int, grid
) -> tuple[set, set]:
    """Index-space (vertex, edge) constraint sets applying to one agent."""
    vset, eset = set(), set()
    for c in constraints:
        if c.agent != agent:
            continue
        if c.kind == "vertex":
            vset.add((grid.index(c.loc[0]), c.t))
        else:
            vertex_a, vertex_b = c.loc
            eset.add((grid.index(vertex_a), grid.index(vertex_b), c.t))
    return vset, eset


def multi_goal_heuristic(
    tables: list[HeuristicTable], goals_idx: list[int]
) -> tuple[list, list[float]]:
    """Per-goal h arrays plus suffix sums of the inter-goal leg distances."""
    arrays = [t.h for t in tables]
    n = len(goals_idx)
    suffix = [0.0] * n
    for i in range(n - 2, -1, -1):
        leg = float(arrays[i + 1][goals_idx[i]])
        suffix[i] = leg + suffix[i + 1]
    return arrays, suffix


def astar_plan(
    gg: GuidanceGraph,
    start_idx: int,
    goals_idx: list[int],
    h_arrays: list,
    h_suffix: list[float],
    vset: set,
    eset: set,
    cat: ConflictAvoidance | None = None,
    omega1: float = 1.0,
    horizon: int | None = None,
    agent: int = 0,
    deadline: float | None = None,
    node_limit: int = 1_000_000,
) -> PlanResult:
    """Plan through goals_idx in order.

    In windowed mode (horizon set) the path ends exactly at the horizon and
    the remaining cost is estimated by the heuristic; expanding a state also
    offers a rest-in-place completion so idle agents stay put instead of
    drifting through cost ties.
    """
    omega = gg.omega
    nbr = gg.nbr
    n_goals = len(goals_idx)

    def h_of(v: int, gi: int) -> float:
        if gi >= n_goals:
            return 0.0
        return float(h_arrays[gi][v]) + h_suffix[gi]

    gi0 = 0
    while gi0 < n_goals and start_idx == goals_idx[gi0]:
        gi0 += 1
    h0 = h_of(start_idx, gi0)
    if not math.isfinite(h0):
        return PlanResult(None, INF, 0, "goal unreachable")

    vc_max: dict[int, int] = {}
    for (vv, tt) in vset:
        vc_max[vv] = max(vc_max.get(vv, -1), tt)

    windowed = horizon is not None
    if windowed:
        t_cap = horizon
    else:
        max_ct = max([t for (_, t) in vset] + [t + 1 for (_, _, t) in eset], default=-1)
        t_cap = max_ct + gg.grid.num_cells * max(1, n_goals) + 1
        goal_idx = goals_idx[-1]
        goal_max_vc = vc_max.get(goal_idx, -1)

    start_key = (start_idx, 0, gi0)
    g_map = {start_key: 0.0}
    conf_map = {start_key: 0}
    parent: dict = {start_key: None}
    closed: set = set()

    def focal_rank(nconf: int, g: float, f: float):
        # one-shot: favor depth (larger g); windowed: favor progress (lower f),
        # otherwise wait-padded windows (large g, no progress) win ties
        return (nconf, f, -g) if windowed else (nconf, -g, f)

    counter = 0
    # entries: (f, -g_total, tie, key, g_base, waits); waits=None for states,
    # an integer for rest-to-horizon completions anchored at key
    open_heap = [(h0, 0.0, counter, start_key, 0.0, None)]
    focal_heap = [(*focal_rank(0, 0.0, h0), counter, start_key, 0.0, None)]
    focal_bound = omega1 * h0
    f_min = h0
    expanded = 0

    def entry_live(key, g_base, waits) -> bool:
        if g_map.get(key, INF) != g_base:
            return False
        return waits is not None or key not in closed

    def reconstruct(key, g, est, extra_waits: int = 0) -> TimedPath:
        chain = []
        k = key
        while k is not None:
            chain.append(k)
            k = parent[k][0] if parent[k] else None
        chain.reverse()
        grid = gg.grid
        vertices = [grid.vertex(k[0]) for k in chain]
        actions = [parent[k][1] for k in chain[1:]]
        for _ in range(extra_waits):
            vertices.append(vertices[-1])
            actions.append(Action.WAIT)
        return TimedPath(agent=agent, vertices=vertices, actions=actions,
                         cost=g, est_remaining=est)

    while open_heap or focal_heap:
        # clean OPEN top; it defines the certified lower bound
        while open_heap:
            f, _, _, key, g_base, waits = open_heap[0]
            if not entry_live(key, g_base, waits):
                heapq.heappop(open_heap)
                continue
            break
        if open_heap:
            f_min = max(f_min, open_heap[0][0])
            new_bound = omega1 * f_min
            if new_bound > focal_bound:
                for f, neg_g, tie, key, g_base, waits in open_heap:
                    if focal_bound < f <= new_bound and entry_live(key, g_base, waits):
                        nconf = conf_map.get(key, 0)
                        heapq.heappush(focal_heap,
                                       (*focal_rank(nconf, -neg_g, f), tie, key, g_base, waits))
                focal_bound = new_bound
        current = None
        while focal_heap:
            k0, k1, k2, tie, key, g_base, waits = heapq.heappop(focal_heap)
            if entry_live(key, g_base, waits):
                current = (key, g_base, waits)
                break
        if current is None:
            if not open_heap:
                break
            continue
        key, g, waits = current
        v, t, gi = key
        if waits is not None:  # rest-in-place completion of a windowed search
            g_end = g + waits * float(omega[v, Action.WAIT])
            return PlanResult(reconstruct(key, g_end, h_of(v, gi), extra_waits=waits),
                              f_min, expanded)
        if windowed:
            if t >= horizon:
                return PlanResult(reconstruct(key, g, h_of(v, gi)), f_min, expanded)
        else:
            if v == goal_idx and gi >= n_goals and t >= goal_max_vc:
                return PlanResult(reconstruct(key, g, 0.0), f_min, expanded)
        closed.add(key)
        expanded += 1
        if expanded > node_limit:
            return PlanResult(None, f_min, expanded, "node limit")
        if deadline is not None and expanded % 128 == 0 and time.perf_counter() > deadline:
            return PlanResult(None, f_min, expanded, "timeout")
        if t >= t_cap:
            continue

        base_conf = conf_map.get(key, 0)
        if windowed and vc_max.get(v, -1) <= t:
            rest = horizon - t
            g_end = g + rest * float(omega[v, Action.WAIT])
            f_end = g_end + h_of(v, gi)
            counter += 1
            heapq.heappush(open_heap, (f_end, -g_end, counter, key, g, rest))
            if f_end <= focal_bound:
                heapq.heappush(focal_heap,
                               (*focal_rank(base_conf, g_end, f_end), counter, key, g, rest))
        for a in range(5):
            u = int(nbr[v, a])
            if u < 0:
                continue
            t2 = t + 1
            if (u, t2) in vset or (v, u, t) in eset:
                continue
            gi2 = gi
            while gi2 < n_goals and u == goals_idx[gi2]:
                gi2 += 1
            hu = h_of(u, gi2)
            if not math.isfinite(hu):
                continue
            key2 = (u, t2, gi2)
            g2 = g + float(omega[v, a])
            old = g_map.get(key2, INF)
            if g2 >= old - 1e-12:
                continue
            closed.discard(key2)  # reopening keeps the lower bound sound
            g_map[key2] = g2
            parent[key2] = (key, Action(a))
            if cat is not None:
                step_conf = cat.count_vertex(u, t2) if a == Action.WAIT \
                    else cat.count_move(v, u, t)
            else:
                step_conf = 0
            nconf2 = base_conf + step_conf
            conf_map[key2] = nconf2
            counter += 1
            f2 = g2 + hu
            heapq.heappush(open_heap, (f2, -g2, counter, key2, g2, None))
            if f2 <= focal_bound:
                heapq.heappush(focal_heap,
                               (*focal_rank(nconf2, g2, f2), counter, key2, g2, None))
    return PlanResult(None, f_min, expanded, "no path")


def spacetime_astar(
    gg: GuidanceGraph,
    start: Vertex,
    goal: Vertex,
    constraints: list[Constraint] = (),
    heuristic: HeuristicTable | None = None,
    omega1: float = 1.0,
    horizon: int | None = None,
    cat: ConflictAvoidance | None = None,
    agent: int = 0,
    deadline: float | None = None,
    node_limit: int = 1_000_000,
) -> PlanResult:
    """Single-goal space-time A* under CBS constraints.

    The path cost is certified <= omega1 times the constrained optimum; with
    a horizon the goal condition relaxes to surviving the window.
    """
    from ..guidance import precompute_heuristic

    grid = gg.grid
    if heuristic is None:
        heuristic = precompute_heuristic(gg, goal)
    vset, eset = split_constraints(list(constraints), agent, grid)
    goals_idx = [grid.index(goal)]
    h_arrays, h_suffix = multi_goal_heuristic([heuristic], goals_idx)
    return astar_plan(
        gg, grid.index(start), goals_idx, h_arrays, h_suffix, vset, eset,
        cat=cat, omega1=omega1, horizon=horizon, agent=agent,
        deadline=deadline, node_limit=node_limit)
