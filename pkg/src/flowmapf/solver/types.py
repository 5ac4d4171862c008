"""Shared solver data types: timed paths, constraints, conflicts, solutions."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

from ..world import Action, Vertex


class Constraint(NamedTuple):
    """CBS constraint. Vertex: agent may not occupy loc at time t.
    Edge: agent may not move loc[0] -> loc[1] departing at time t."""

    kind: str  # "vertex" | "edge"
    agent: int
    loc: tuple
    t: int


class AgentConflict(NamedTuple):
    """Vertex: both agents at loc at time t.
    Edge: agents swap along loc = (u, v) between t and t+1 (t = departure)."""

    kind: str
    agents: tuple[int, int]
    loc: tuple
    t: int


@dataclass
class TimedPath:
    """Per-timestep vertices v_t for t = start_time .. start_time + len(actions)."""

    agent: int
    vertices: list[Vertex]
    actions: list[Action]
    cost: float = 0.0  # guidance-graph cost of the recorded actions
    unit_cost: int = 0  # number of actions (unit step cost)
    est_remaining: float = 0.0  # windowed mode: heuristic cost-to-go at the cut
    start_time: int = 0

    def __post_init__(self):
        if len(self.vertices) != len(self.actions) + 1:
            raise ValueError("vertices must be one longer than actions")
        self.unit_cost = len(self.actions)

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def end_time(self) -> int:
        return self.start_time + len(self.actions)

    def position(self, t: int) -> Vertex:
        """Vertex at absolute time t, resting at the endpoints outside the span."""
        k = min(max(t - self.start_time, 0), len(self.vertices) - 1)
        return self.vertices[k]

    def to_dict(self) -> dict:
        return {
            "agent": self.agent,
            "start_time": self.start_time,
            "vertices": [[v.x, v.y] for v in self.vertices],
            "actions": [a.name.lower() for a in self.actions],
            "cost": self.cost,
            "unit_cost": self.unit_cost,
            "est_remaining": self.est_remaining,
        }


@dataclass
class SolverStats:
    hl_expanded: int = 0
    hl_generated: int = 0
    ll_expanded: int = 0
    runtime: float = 0.0
    lower_bound: float = 0.0


@dataclass
class Solution:
    """Conflict-free paths plus cost accounting on the guidance graph."""

    paths: list[TimedPath]
    total_cost: float = 0.0
    total_unit_cost: int = 0
    stats: SolverStats = field(default_factory=SolverStats)
    ok: bool = True

    def __post_init__(self):
        self.total_cost = sum(p.cost + p.est_remaining for p in self.paths)
        self.total_unit_cost = sum(p.unit_cost for p in self.paths)

    def to_dict(self, include_runtime: bool = False) -> dict:
        doc = {
            "agents": [p.to_dict() for p in self.paths],
            "total_cost": self.total_cost,
            "total_unit_cost": self.total_unit_cost,
            "stats": {
                "hl_expanded": self.stats.hl_expanded,
                "hl_generated": self.stats.hl_generated,
                "ll_expanded": self.stats.ll_expanded,
                "lower_bound": self.stats.lower_bound,
            },
        }
        if include_runtime:
            doc["stats"]["runtime"] = self.stats.runtime
        return doc


@dataclass
class SolveFailure:
    reason: str  # "timeout" | "infeasible"
    stats: SolverStats = field(default_factory=SolverStats)
    best_paths: list[TimedPath] | None = None
    ok: bool = False


def detect_conflicts(paths: list[TimedPath], pad: bool = True) -> list[AgentConflict]:
    """All vertex and edge conflicts between path pairs, in increasing time.

    With pad=True (one-shot convention) shorter paths rest at their final
    vertex; with pad=False (windowed convention) a path only occupies its own
    span. Edge conflicts carry the departure timestep.
    """
    out: list[AgentConflict] = []
    if len(paths) < 2:
        return out
    t_lo = min(p.start_time for p in paths)
    t_hi = max(p.end_time for p in paths)

    def occupants(t: int):
        for p in paths:
            if pad or t <= p.end_time:
                yield p.agent, p.position(t)

    prev = dict(occupants(t_lo))
    occ: dict = {}
    for agent, v in prev.items():
        occ.setdefault(v, []).append(agent)
    for v, agents in occ.items():
        for x in range(len(agents)):
            for y in range(x + 1, len(agents)):
                out.append(AgentConflict("vertex", (agents[x], agents[y]), (v,), t_lo))
    for t in range(t_lo + 1, t_hi + 1):
        cur = dict(occupants(t))
        occ = {}
        for agent, v in cur.items():
            occ.setdefault(v, []).append(agent)
        for v, agents in occ.items():
            for x in range(len(agents)):
                for y in range(x + 1, len(agents)):
                    out.append(AgentConflict("vertex", (agents[x], agents[y]), (v,), t))
        moves = {}
        for agent, v in cur.items():
            pv = prev.get(agent)
            if pv is not None and pv != v:
                moves[(pv, v)] = agent
        for (pv, v), agent in moves.items():
            other = moves.get((v, pv))
            if other is not None and other > agent:
                out.append(AgentConflict("edge", (agent, other), (pv, v), t - 1))
        prev = cur
    out.sort(key=lambda c: (c.t, 0 if c.kind == "vertex" else 1, c.agents))
    return out


def solution_from_dict(doc: dict) -> Solution:
    """Rebuild a Solution from its JSON document (inverse of to_dict)."""
    from ..world import Action, Vertex

    paths = []
    for a in doc["agents"]:
        vertices = [Vertex(x, y) for x, y in a["vertices"]]
        actions = [Action[name.upper()] for name in a["actions"]]
        paths.append(TimedPath(
            agent=a["agent"], vertices=vertices, actions=actions,
            cost=a["cost"], est_remaining=a.get("est_remaining", 0.0),
            start_time=a.get("start_time", 0)))
    stats = SolverStats(
        hl_expanded=doc["stats"].get("hl_expanded", 0),
        hl_generated=doc["stats"].get("hl_generated", 0),
        ll_expanded=doc["stats"].get("ll_expanded", 0),
        runtime=doc["stats"].get("runtime", 0.0),
        lower_bound=doc["stats"].get("lower_bound", 0.0))
    return Solution(paths=paths, stats=stats)
