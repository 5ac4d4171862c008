"""Conflict-based search with bounded-suboptimal focal lists (ECBS-style).

The high level keeps OPEN ordered by each node's sum of low-level lower
bounds; nodes whose solution cost is within omega1 of the best lower bound
form the focal list, expanded by fewest conflicts. Guarantees solution cost
<= omega1 * optimal sum-of-costs on the guidance graph.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field

from ..guidance import GuidanceGraph, HeuristicTable, precompute_heuristic
from ..world import Scenario, Vertex
from .lowlevel import ConflictAvoidance, astar_plan, multi_goal_heuristic, split_constraints
from .sipp import sipp_plan
from .types import (AgentConflict, Constraint, Solution, SolveFailure,
                    SolverStats, TimedPath, detect_conflicts)


@dataclass
class CBSConfig:
    omega1: float = 1.0
    time_limit: float = 5.0
    horizon: int | None = None
    low_level: str = "astar"  # "astar" | "sipp"
    node_limit: int = 200_000
    ll_node_limit: int = 1_000_000


class HeuristicCache:
    """Guidance-graph distance tables keyed by goal vertex, shared across solves."""

    def __init__(self, gg: GuidanceGraph):
        self.gg = gg
        self._tables: dict[Vertex, HeuristicTable] = {}

    def table(self, goal: Vertex) -> HeuristicTable:
        tab = self._tables.get(goal)
        if tab is None:
            tab = precompute_heuristic(self.gg, goal)
            self._tables[goal] = tab
        return tab


@dataclass
class _Node:
    paths: list[TimedPath]
    lbs: list[float]
    cost: float = 0.0
    lb_sum: float = 0.0
    conflicts: list[AgentConflict] = field(default_factory=list)
    parent: "_Node | None" = None
    new_constraint: Constraint | None = None
    closed: bool = False

    def constraints_for(self, agent: int) -> list[Constraint]:
        out = []
        node = self
        while node is not None:
            c = node.new_constraint
            if c is not None and c.agent == agent:
                out.append(c)
            node = node.parent
        return out


def _branch_constraints(conflict: AgentConflict) -> list[Constraint]:
    i, j = conflict.agents
    if conflict.kind == "vertex":
        (v,) = conflict.loc
        return [Constraint("vertex", i, (v,), conflict.t),
                Constraint("vertex", j, (v,), conflict.t)]
    u, v = conflict.loc
    return [Constraint("edge", i, (u, v), conflict.t),
            Constraint("edge", j, (v, u), conflict.t)]


def cbs_solve_multi(
    gg: GuidanceGraph,
    agent_specs: list[tuple[Vertex, list[Vertex]]],
    cfg: CBSConfig,
    cache: HeuristicCache | None = None,
) -> Solution | SolveFailure:
    """Solve for agents given as (start, goal sequence); the public cbs_solve
    wraps single-goal scenarios, the lifelong loop passes windowed sequences."""
    t_start = time.perf_counter()
    deadline = t_start + cfg.time_limit
    if cache is None:
        cache = HeuristicCache(gg)
    grid = gg.grid
    stats = SolverStats()
    pad = cfg.horizon is None
    plan_fn = sipp_plan if cfg.low_level == "sipp" else astar_plan
    if cfg.low_level not in ("astar", "sipp"):
        raise ValueError(f"unknown low-level solver {cfg.low_level!r}")

    per_agent_h: list[tuple[list, list[float], list[int]]] = []
    for start, goals in agent_specs:
        goals_idx = [grid.index(g) for g in goals]
        tables = [cache.table(g) for g in goals]
        h_arrays, h_suffix = multi_goal_heuristic(tables, goals_idx)
        per_agent_h.append((h_arrays, h_suffix, goals_idx))

    def replan(agent: int, node_constraints: list[Constraint], other_paths):
        h_arrays, h_suffix, goals_idx = per_agent_h[agent]
        vset, eset = split_constraints(node_constraints, agent, grid)
        cat = ConflictAvoidance(gg, other_paths, pad=pad)
        result = plan_fn(
            gg, grid.index(agent_specs[agent][0]), goals_idx, h_arrays, h_suffix,
            vset, eset, cat=cat, omega1=cfg.omega1, horizon=cfg.horizon,
            agent=agent, deadline=deadline, node_limit=cfg.ll_node_limit)
        stats.ll_expanded += result.expanded
        return result

    # root: plan each agent against the already-planned ones
    root_paths: list[TimedPath] = []
    root_lbs: list[float] = []
    for agent in range(len(agent_specs)):
        result = replan(agent, [], root_paths)
        if not result.ok:
            stats.runtime = time.perf_counter() - t_start
            reason = "timeout" if result.reason == "timeout" else "infeasible"
            return SolveFailure(reason=reason, stats=stats,
                                best_paths=root_paths or None)
        root_paths.append(result.path)
        root_lbs.append(result.f_min)

    def make_node(paths, lbs, parent, new_constraint) -> _Node:
        node = _Node(paths=paths, lbs=lbs, parent=parent, new_constraint=new_constraint)
        node.cost = sum(p.cost + p.est_remaining for p in paths)
        node.lb_sum = sum(lbs)
        node.conflicts = detect_conflicts(paths, pad=pad)
        return node

    root = make_node(root_paths, root_lbs, None, None)
    stats.hl_generated = 1

    counter = 0
    open_heap = [(root.lb_sum, counter, root)]
    focal_heap = [(len(root.conflicts), root.cost, counter, root)]
    focal_bound = cfg.omega1 * root.lb_sum
    best_node = root

    while open_heap:
        while open_heap and open_heap[0][2].closed:
            heapq.heappop(open_heap)
        if not open_heap:
            break
        lb = open_heap[0][0]
        stats.lower_bound = max(stats.lower_bound, lb)
        new_bound = cfg.omega1 * stats.lower_bound
        if new_bound > focal_bound:
            for lb_i, tie, node in open_heap:
                if not node.closed and focal_bound < node.cost <= new_bound:
                    heapq.heappush(focal_heap, (len(node.conflicts), node.cost, tie, node))
            focal_bound = new_bound
        node = None
        while focal_heap:
            nconf, cost, tie, cand = heapq.heappop(focal_heap)
            if not cand.closed:
                node = cand
                break
        if node is None:
            continue
        node.closed = True
        stats.hl_expanded += 1
        if (len(node.conflicts), node.cost) < (len(best_node.conflicts), best_node.cost):
            best_node = node

        if not node.conflicts:
            stats.runtime = time.perf_counter() - t_start
            sol = Solution(paths=list(node.paths), stats=stats)
            sol.stats.lower_bound = stats.lower_bound
            return sol
        if time.perf_counter() > deadline:
            stats.runtime = time.perf_counter() - t_start
            return SolveFailure(reason="timeout", stats=stats, best_paths=best_node.paths)
        if stats.hl_expanded > cfg.node_limit:
            stats.runtime = time.perf_counter() - t_start
            return SolveFailure(reason="timeout", stats=stats, best_paths=best_node.paths)

        conflict = node.conflicts[0]
        children = []
        for constraint in _branch_constraints(conflict):
            agent = constraint.agent
            node_constraints = node.constraints_for(agent) + [constraint]
            others = [p for k, p in enumerate(node.paths) if k != agent]
            result = replan(agent, node_constraints, others)
            if result.reason == "timeout":
                stats.runtime = time.perf_counter() - t_start
                return SolveFailure(reason="timeout", stats=stats, best_paths=best_node.paths)
            if not result.ok:
                continue  # this branch is infeasible
            paths = list(node.paths)
            paths[agent] = result.path
            lbs = list(node.lbs)
            lbs[agent] = max(lbs[agent], result.f_min)
            child = make_node(paths, lbs, node, constraint)
            # bypass: adopt an equal-cost path with fewer conflicts, no branching
            if (child.cost <= node.cost + 1e-9
                    and len(child.conflicts) < len(node.conflicts)):
                child.new_constraint = None  # keeps the parent's constraint set
                children = [child]
                break
            children.append(child)
        for child in children:
            counter += 1
            stats.hl_generated += 1
            heapq.heappush(open_heap, (child.lb_sum, counter, child))
            if child.cost <= focal_bound:
                heapq.heappush(focal_heap, (len(child.conflicts), child.cost, counter, child))

    stats.runtime = time.perf_counter() - t_start
    return SolveFailure(reason="infeasible", stats=stats, best_paths=best_node.paths)


def cbs_solve(
    gg: GuidanceGraph,
    scenario: Scenario,
    cfg: CBSConfig = CBSConfig(),
    cache: HeuristicCache | None = None,
) -> Solution | SolveFailure:
    """One-shot bounded-suboptimal MAPF solve (sum of costs on the guidance graph)."""
    specs = [(start, [goal]) for start, goal in scenario.agents]
    return cbs_solve_multi(gg, specs, cfg, cache=cache)
