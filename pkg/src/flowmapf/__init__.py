"""Flow-aware multi-agent path finding.

Learns per-cell velocity mixtures from trajectories of uncontrollable agents,
turns them into guidance-graph edge weights, and solves one-shot and lifelong
MAPF problems on the weighted graph with bounded-suboptimal search.
"""

from .world import Action, GridMap, Scenario, Vertex, neighbors, parse_map, parse_scen
from .trajectories import bin_observations, extract_velocities, load_trajectories
from .cliffmap import (CliffMap, FitConfig, SWGMM, SWND, build_cliffmap,
                       fit_swgmm, load_cliffmap, save_cliffmap, swgmm_density,
                       swnd_density)
from .guidance import (GuidanceGraph, HeuristicTable, action_velocity,
                       build_guidance_graph, flow_cost_raw, normalize_costs,
                       precompute_heuristic, verify_suboptimality_bound, wait_cost)
from .solver import (CBSConfig, Solution, SolveFailure, TimedPath, cbs_solve,
                     detect_conflicts, sipp, spacetime_astar)
from .lifelong import (Metrics, SimulationConfig, SimulationLog, compute_metrics,
                       generate_task_queue, rhcr_run)
from .uasim import (ConflictReport, UAConfig, UATrajectory, count_conflicts,
                    generate_dataset, generate_stream, plan_ua_path)

__version__ = "0.1.0"
