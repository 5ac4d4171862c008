"""Bounded-suboptimal MAPF solving on guidance graphs."""

from .types import (AgentConflict, Constraint, Solution, SolveFailure,
                    SolverStats, TimedPath, detect_conflicts, solution_from_dict)
from .lowlevel import ConflictAvoidance, PlanResult, spacetime_astar
from .sipp import SafeIntervals, sipp
from .cbs import CBSConfig, HeuristicCache, cbs_solve, cbs_solve_multi

__all__ = [
    "AgentConflict", "CBSConfig", "ConflictAvoidance", "Constraint",
    "HeuristicCache", "PlanResult", "SafeIntervals", "Solution",
    "SolveFailure", "SolverStats", "TimedPath", "cbs_solve",
    "solution_from_dict",
    "cbs_solve_multi", "detect_conflicts", "sipp", "spacetime_astar",
]
