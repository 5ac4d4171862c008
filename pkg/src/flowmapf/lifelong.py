"""Rolling-horizon lifelong MAPF: replan every h steps, resolve conflicts
within a window w, renew goals on arrival, freeze conflicting agents when an
iteration cannot be solved in time."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .guidance import GuidanceGraph
from .solver import CBSConfig, HeuristicCache, TimedPath, cbs_solve_multi, detect_conflicts
from .world import Action, GridMap, Vertex

log = logging.getLogger(__name__)


class SimulationError(ValueError):
    pass


@dataclass
class TaskQueue:
    """Deterministic per-agent goal streams; both solver variants consume the
    identical queue for a given (map, agent count, seed). An explicit finite
    queue can be supplied instead, in which case goal() returns None once an
    agent's tasks are exhausted."""

    grid: GridMap
    num_agents: int
    seed: int = 0
    starts: list[Vertex] = field(default_factory=list)
    explicit: list[list[Vertex]] | None = None

    def __post_init__(self):
        passable = self.grid.passable_indices()
        if passable.size == 0:
            raise SimulationError("map has no passable cells")
        if self.num_agents < 1:
            raise SimulationError("need at least one agent")
        if self.num_agents > passable.size:
            raise SimulationError("more agents than passable cells")
        if not self.starts:
            rng = np.random.default_rng((self.seed, 0x5747))
            chosen = rng.choice(passable, size=self.num_agents, replace=False)
            self.starts = [self.grid.vertex(int(i)) for i in chosen]
        for s in self.starts:
            if not self.grid.is_passable(s.x, s.y):
                raise SimulationError(f"start {s} not passable")
        if self.explicit is not None:
            for goals in self.explicit:
                for g in goals:
                    if not self.grid.is_passable(g.x, g.y):
                        raise SimulationError(f"goal {g} not passable")
        self._passable = passable
        self._rngs = [np.random.default_rng((self.seed, 0x60A1, a))
                      for a in range(self.num_agents)]
        self._goals: list[list[Vertex]] = [[] for _ in range(self.num_agents)]

    def goal(self, agent: int, k: int) -> Vertex | None:
        """k-th goal of an agent, generated on demand (prefix-deterministic)."""
        if self.explicit is not None:
            goals = self.explicit[agent]
            return goals[k] if k < len(goals) else None
        goals = self._goals[agent]
        rng = self._rngs[agent]
        while len(goals) <= k:
            prev = goals[-1] if goals else self.starts[agent]
            v = prev
            for _ in range(64):  # resample to avoid a zero-length task
                idx = int(self._passable[rng.integers(self._passable.size)])
                v = self.grid.vertex(idx)
                if v != prev:
                    break
            goals.append(v)
        return goals[k]

    def materialize(self, per_agent: int) -> list[list[Vertex]]:
        return [[self.goal(a, k) for k in range(per_agent)]
                for a in range(self.num_agents)]


def generate_task_queue(grid: GridMap, agents: int, seed: int) -> TaskQueue:
    return TaskQueue(grid=grid, num_agents=agents, seed=seed)


@dataclass
class SimulationConfig:
    sim_time: int = 2000
    replan_period: int = 20  # h: execute this many steps per iteration
    horizon: int = 40  # w: resolve conflicts this far ahead
    omega1: float = 1.5
    time_limit: float = 5.0  # per-iteration solver budget, seconds
    low_level: str = "sipp"

    def __post_init__(self):
        if self.replan_period > self.horizon:
            raise SimulationError("replan period must not exceed the horizon")
        if self.sim_time < self.replan_period:
            raise SimulationError("simulation shorter than one replan period")


@dataclass
class IterationRecord:
    t: int
    runtime: float
    feasible: bool
    frozen: tuple[int, ...] = ()
    hl_expanded: int = 0
    ll_expanded: int = 0


@dataclass
class Completion:
    t: int
    agent: int
    task_index: int
    goal: Vertex


@dataclass
class SimulationLog:
    num_agents: int
    sim_time: int
    positions: list[list[Vertex]] = field(default_factory=list)  # [t][agent]
    iterations: list[IterationRecord] = field(default_factory=list)
    completions: list[Completion] = field(default_factory=list)

    def to_jsonl(self) -> str:
        lines = []
        for rec in self.iterations:
            lines.append(json.dumps({
                "type": "iteration", "t": rec.t, "runtime": rec.runtime,
                "feasible": rec.feasible, "frozen": list(rec.frozen),
                "hl_expanded": rec.hl_expanded, "ll_expanded": rec.ll_expanded,
            }, sort_keys=True))
        for t, row in enumerate(self.positions):
            lines.append(json.dumps({
                "type": "step", "t": t,
                "positions": [[v.x, v.y] for v in row],
            }, sort_keys=True))
        for c in self.completions:
            lines.append(json.dumps({
                "type": "task", "t": c.t, "agent": c.agent,
                "task_index": c.task_index, "goal": [c.goal.x, c.goal.y],
            }, sort_keys=True))
        return "\n".join(lines) + "\n"


@dataclass
class Metrics:
    throughput: float
    mean_iteration_runtime: float
    tasks_completed: int
    infeasible_iterations: int
    ua_conflicts_per_timestep: float | None = None


def _wait_path(agent: int, pos: Vertex, length: int) -> TimedPath:
    return TimedPath(agent=agent, vertices=[pos] * (length + 1),
                     actions=[Action.WAIT] * length)


def _freeze_conflicting(paths: list[TimedPath], positions: list[Vertex],
                        window: int) -> tuple[list[TimedPath], tuple[int, ...]]:
    """Freeze every agent involved in a conflict; kept paths must also avoid
    frozen agents' cells, so freezing iterates to a fixpoint."""
    frozen: set[int] = set()
    for c in detect_conflicts(paths, pad=False):
        frozen.update(c.agents)
    changed = True
    while changed:
        changed = False
        frozen_cells = {positions[a] for a in frozen}
        for p in paths:
            if p.agent in frozen:
                continue
            if any(p.position(t) in frozen_cells for t in range(window + 1)):
                frozen.add(p.agent)
                changed = True
    out = [_wait_path(p.agent, positions[p.agent], window) if p.agent in frozen else p
           for p in paths]
    return out, tuple(sorted(frozen))


def rhcr_run(
    gg: GuidanceGraph,
    queue: TaskQueue,
    cfg: SimulationConfig,
    cache: HeuristicCache | None = None,
) -> SimulationLog:
    """Execute the lifelong simulation; never raises on infeasible iterations."""
    if cache is None:
        cache = HeuristicCache(gg)
    n = queue.num_agents
    positions = list(queue.starts)
    pending = [0] * n  # index of each agent's current goal
    log_out = SimulationLog(num_agents=n, sim_time=cfg.sim_time)
    log_out.positions.append(list(positions))

    lookahead = cfg.horizon + 2
    t = 0
    while t < cfg.sim_time:
        steps = min(cfg.replan_period, cfg.sim_time - t)
        specs = []
        for a in range(n):
            goals = []
            for k in range(lookahead):
                g = queue.goal(a, pending[a] + k)
                if g is None:
                    break
                goals.append(g)
            specs.append((positions[a], goals))
        solver_cfg = CBSConfig(omega1=cfg.omega1, time_limit=cfg.time_limit,
                               horizon=cfg.horizon, low_level=cfg.low_level)
        # heuristic tables count as precomputation, not solving time
        for _, goals in specs:
            for g in goals:
                cache.table(g)
        t0 = time.perf_counter()
        result = cbs_solve_multi(gg, specs, solver_cfg, cache=cache)
        runtime = time.perf_counter() - t0
        if result.ok:
            paths = result.paths
            frozen: tuple[int, ...] = ()
            feasible = True
        else:
            best = result.best_paths or []
            by_agent = {p.agent: p for p in best}
            paths = [by_agent.get(a, _wait_path(a, positions[a], cfg.horizon))
                     for a in range(n)]
            paths, frozen = _freeze_conflicting(paths, positions, cfg.horizon)
            feasible = False
            runtime = cfg.time_limit  # infeasible iterations count at the limit
            log.info("t=%d: infeasible iteration, froze agents %s", t, frozen)
        log_out.iterations.append(IterationRecord(
            t=t, runtime=runtime, feasible=feasible, frozen=frozen,
            hl_expanded=result.stats.hl_expanded,
            ll_expanded=result.stats.ll_expanded))

        for k in range(1, steps + 1):
            for a in range(n):
                positions[a] = paths[a].position(k)
                current_goal = queue.goal(a, pending[a])
                if current_goal is not None and positions[a] == current_goal:
                    log_out.completions.append(Completion(
                        t=t + k, agent=a, task_index=pending[a], goal=positions[a]))
                    pending[a] += 1
            log_out.positions.append(list(positions))
        t += steps
    return log_out


def compute_metrics(sim_log: SimulationLog, ua_conflict_count: int | None = None) -> Metrics:
    runtimes = [rec.runtime for rec in sim_log.iterations]
    mean_rt = sum(runtimes) / len(runtimes) if runtimes else 0.0
    completed = len(sim_log.completions)
    return Metrics(
        throughput=completed / sim_log.sim_time,
        mean_iteration_runtime=mean_rt,
        tasks_completed=completed,
        infeasible_iterations=sum(1 for r in sim_log.iterations if not r.feasible),
        ua_conflicts_per_timestep=(
            ua_conflict_count / sim_log.sim_time
            if ua_conflict_count is not None else None),
    )


def log_from_jsonl(text: str) -> SimulationLog:
    """Rebuild a SimulationLog from its JSONL export."""
    steps: dict[int, list[Vertex]] = {}
    iterations = []
    completions = []
    for line in text.splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        if rec["type"] == "step":
            steps[rec["t"]] = [Vertex(x, y) for x, y in rec["positions"]]
        elif rec["type"] == "iteration":
            iterations.append(IterationRecord(
                t=rec["t"], runtime=rec["runtime"], feasible=rec["feasible"],
                frozen=tuple(rec.get("frozen", [])),
                hl_expanded=rec.get("hl_expanded", 0),
                ll_expanded=rec.get("ll_expanded", 0)))
        elif rec["type"] == "task":
            completions.append(Completion(
                t=rec["t"], agent=rec["agent"], task_index=rec["task_index"],
                goal=Vertex(*rec["goal"])))
    positions = [steps[t] for t in sorted(steps)]
    num_agents = len(positions[0]) if positions else 0
    out = SimulationLog(num_agents=num_agents, sim_time=len(positions) - 1,
                        positions=positions, iterations=iterations,
                        completions=sorted(completions, key=lambda c: (c.t, c.agent)))
    return out
