"""Safe-interval path planning on the guidance graph.

Each vertex's timeline is split into maximal safe intervals between timed
occupancies. Because edge weights are non-uniform, a later-but-cheaper
arrival can beat an earlier one, so per (vertex, interval) we keep a Pareto
frontier over (arrival time, cost): state (t1, g1) dominates (t2, g2) iff
t1 <= t2 and g1 plus the cost of waiting until t2 does not exceed g2.
"""

from __future__ import annotations

import heapq
import math
import time
from bisect import bisect_right

from ..guidance import GuidanceGraph, HeuristicTable
from ..world import Action, Vertex
from .lowlevel import ConflictAvoidance, PlanResult, multi_goal_heuristic
from .types import TimedPath

INF = math.inf


class SafeIntervals:
    """Per-vertex maximal safe intervals [lo, hi] (hi inclusive, may be inf)."""

    def __init__(self, blocked: dict[int, list[int]]):
        self._blocked = blocked
        self._cache: dict[int, tuple[list[tuple[int, float]], list[int]]] = {}

    @classmethod
    def from_vertex_set(cls, vset: set) -> "SafeIntervals":
        blocked: dict[int, list[int]] = {}
        for v, t in vset:
            blocked.setdefault(v, []).append(t)
        for v in blocked:
            blocked[v] = sorted(set(blocked[v]))
        return cls(blocked)

    def intervals(self, v: int) -> tuple[list[tuple[int, float]], list[int]]:
        got = self._cache.get(v)
        if got is not None:
            return got
        ts = self._blocked.get(v)
        if not ts:
            result = ([(0, INF)], [0])
        else:
            ivs = []
            lo = 0
            for b in ts:
                if b > lo:
                    ivs.append((lo, b - 1))
                lo = b + 1
            ivs.append((lo, INF))
            result = (ivs, [iv[0] for iv in ivs])
        self._cache[v] = result
        return result

    def locate(self, v: int, t: int) -> int | None:
        """Index of the interval containing t, or None if t is blocked."""
        ivs, starts = self.intervals(v)
        i = bisect_right(starts, t) - 1
        if i < 0:
            return None
        lo, hi = ivs[i]
        return i if lo <= t <= hi else None


def sipp_plan(
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
    omega = gg.omega
    nbr = gg.nbr
    grid = gg.grid
    n_goals = len(goals_idx)
    intervals = SafeIntervals.from_vertex_set(vset)

    def h_of(v: int, gi: int) -> float:
        if gi >= n_goals:
            return 0.0
        return float(h_arrays[gi][v]) + h_suffix[gi]

    if horizon is None:
        max_ct = max([t for (_, t) in vset] + [t + 1 for (_, _, t) in eset], default=-1)
        t_cap = max_ct + grid.num_cells * max(1, n_goals) + 1
        goal_idx = goals_idx[-1]
    else:
        t_cap = horizon

    gi0 = 0
    while gi0 < n_goals and start_idx == goals_idx[gi0]:
        gi0 += 1
    i0 = intervals.locate(start_idx, 0)
    if i0 is None:
        return PlanResult(None, INF, 0, "start blocked at t=0")
    h0 = h_of(start_idx, gi0)
    if not math.isfinite(h0):
        return PlanResult(None, INF, 0, "goal unreachable")

    # entries[eid] = (v, interval_idx, gi, t, g, nconf)
    entries: list[tuple] = []
    parent: list = []
    alive: list[bool] = []
    frontier: dict[tuple[int, int, int], list[int]] = {}

    def add_entry(v, ivx, gi, t, g, nconf, par) -> int | None:
        """Insert unless Pareto-dominated; retire entries the new one dominates."""
        key = (v, ivx, gi)
        w_wait = float(omega[v, Action.WAIT])
        eids = frontier.setdefault(key, [])
        for eid in eids:
            t1, g1 = entries[eid][3], entries[eid][4]
            if t1 <= t and g1 + (t - t1) * w_wait <= g + 1e-9:
                return None
        eid_new = len(entries)
        entries.append((v, ivx, gi, t, g, nconf))
        parent.append(par)
        alive.append(True)
        keep = [eid_new]
        for eid in eids:
            t1, g1 = entries[eid][3], entries[eid][4]
            if t <= t1 and g + (t1 - t) * w_wait <= g1 + 1e-9:
                alive[eid] = False
            else:
                keep.append(eid)
        frontier[key] = keep
        return eid_new

    windowed = horizon is not None

    def focal_rank(nconf: int, g: float, f: float):
        # one-shot: favor depth (larger g); windowed: favor progress (lower f)
        return (nconf, f, -g) if windowed else (nconf, -g, f)

    counter = 0
    open_heap: list = []
    focal_heap: list = []

    eid0 = add_entry(start_idx, i0, gi0, 0, 0.0, 0, None)
    open_heap.append((h0, 0.0, counter, "state", eid0))
    focal_heap.append((*focal_rank(0, 0.0, h0), counter, "state", eid0))
    focal_bound = omega1 * h0
    f_min = h0
    expanded = 0

    def entry_valid(kind: str, eid: int) -> bool:
        return kind == "done" or alive[eid]

    def reconstruct(eid: int, extra_waits: int, g: float, est: float) -> TimedPath:
        hops = []
        cur = eid
        while cur is not None:
            hops.append(cur)
            cur = parent[cur][0] if parent[cur] is not None else None
        hops.reverse()
        vertices = [grid.vertex(entries[hops[0]][0])]
        actions: list[Action] = []
        for k in range(1, len(hops)):
            pv, pt = entries[hops[k - 1]][0], entries[hops[k - 1]][3]
            cv, ct = entries[hops[k]][0], entries[hops[k]][3]
            act = parent[hops[k]][1]
            for _ in range(ct - 1 - pt):
                vertices.append(grid.vertex(pv))
                actions.append(Action.WAIT)
            vertices.append(grid.vertex(cv))
            actions.append(act)
        for _ in range(extra_waits):
            vertices.append(vertices[-1])
            actions.append(Action.WAIT)
        return TimedPath(agent=agent, vertices=vertices, actions=actions,
                         cost=g, est_remaining=est)

    while open_heap or focal_heap:
        while open_heap:
            f = open_heap[0][0]
            kind, eid = open_heap[0][3], open_heap[0][4]
            if not entry_valid(kind, eid):
                heapq.heappop(open_heap)
                continue
            break
        if open_heap:
            f_min = max(f_min, open_heap[0][0])
            new_bound = omega1 * f_min
            if new_bound > focal_bound:
                for item in open_heap:
                    f = item[0]
                    if focal_bound < f <= new_bound and entry_valid(item[3], item[4]):
                        eid = item[4]
                        nconf_i = entries[eid][5]
                        g_i = -item[1]
                        if item[3] == "done":
                            heapq.heappush(focal_heap, (*focal_rank(nconf_i, g_i, f),
                                                        item[2], "done", eid, item[5], item[6]))
                        else:
                            heapq.heappush(focal_heap, (*focal_rank(nconf_i, g_i, f),
                                                        item[2], "state", eid))
                focal_bound = new_bound
        current = None
        while focal_heap:
            item = heapq.heappop(focal_heap)
            if entry_valid(item[4], item[5]):
                current = item
                break
        if current is None:
            if not open_heap:
                break
            continue
        kind, eid = current[4], current[5]
        v, ivx, gi, t, g, nconf = entries[eid]

        if kind == "done":
            waits, g_end = current[6], current[7]
            return PlanResult(reconstruct(eid, waits, g_end, h_of(v, gi)),
                              f_min, expanded)

        ivs, _ = intervals.intervals(v)
        lo, hi = ivs[ivx]

        if horizon is None:
            if v == goal_idx and gi >= n_goals and hi == INF:
                return PlanResult(reconstruct(eid, 0, g, 0.0), f_min, expanded)
        elif hi >= horizon:
            waits = horizon - t
            g_end = g + waits * float(omega[v, Action.WAIT])
            f_end = g_end + h_of(v, gi)
            counter += 1
            heapq.heappush(open_heap, (f_end, -g_end, counter, "done", eid, waits, g_end))
            if f_end <= focal_bound:
                heapq.heappush(focal_heap, (*focal_rank(nconf, g_end, f_end),
                                            counter, "done", eid, waits, g_end))

        alive[eid] = False  # expanded; stays in frontier for domination checks
        expanded += 1
        if expanded > node_limit:
            return PlanResult(None, f_min, expanded, "node limit")
        if deadline is not None and expanded % 128 == 0 and time.perf_counter() > deadline:
            return PlanResult(None, f_min, expanded, "timeout")

        w_wait = float(omega[v, Action.WAIT])
        for a in range(4):
            u = int(nbr[v, a])
            if u < 0:
                continue
            u_ivs, _ = intervals.intervals(u)
            for jvx, (ulo, uhi) in enumerate(u_ivs):
                t2_min = max(t + 1, ulo)
                t2_max = min(hi + 1, uhi, t_cap)
                if t2_min > t2_max:
                    continue
                t2 = t2_min
                while t2 <= t2_max and (v, u, t2 - 1) in eset:
                    t2 += 1
                if t2 > t2_max:
                    continue
                waits = t2 - 1 - t
                g2 = g + waits * w_wait + float(omega[v, a])
                gi2 = gi
                while gi2 < n_goals and u == goals_idx[gi2]:
                    gi2 += 1
                hu = h_of(u, gi2)
                if not math.isfinite(hu):
                    continue
                if cat is not None:
                    step_conf = sum(cat.count_vertex(v, tau) for tau in range(t + 1, t2)) \
                        + cat.count_move(v, u, t2 - 1)
                else:
                    step_conf = 0
                eid2 = add_entry(u, jvx, gi2, t2, g2, nconf + step_conf,
                                 (eid, Action(a)))
                if eid2 is None:
                    continue
                counter += 1
                f2 = g2 + hu
                heapq.heappush(open_heap, (f2, -g2, counter, "state", eid2))
                if f2 <= focal_bound:
                    heapq.heappush(focal_heap, (*focal_rank(nconf + step_conf, g2, f2),
                                                counter, "state", eid2))
    return PlanResult(None, f_min, expanded, "no path")


def sipp(
    gg: GuidanceGraph,
    start: Vertex,
    goal: Vertex,
    obstacles: list[tuple[Vertex, int]] = (),
    heuristic: HeuristicTable | None = None,
    omega1: float = 1.0,
    horizon: int | None = None,
    cat: ConflictAvoidance | None = None,
    agent: int = 0,
    deadline: float | None = None,
    node_limit: int = 1_000_000,
) -> PlanResult:
    """Single-goal SIPP around timed vertex occupancies.

    Matches spacetime_astar's optimal costs for identical inputs.
    """
    from ..guidance import precompute_heuristic

    grid = gg.grid
    if heuristic is None:
        heuristic = precompute_heuristic(gg, goal)
    vset = {(grid.index(v), t) for v, t in obstacles}
    goals_idx = [grid.index(goal)]
    h_arrays, h_suffix = multi_goal_heuristic([heuristic], goals_idx)
    return sipp_plan(
        gg, grid.index(start), goals_idx, h_arrays, h_suffix, vset, set(),
        cat=cat, omega1=omega1, horizon=horizon, agent=agent,
        deadline=deadline, node_limit=node_limit)
