"""Command-line entry point: fit motion maps, solve, simulate, benchmark.

Exit codes: 0 on success (including experiment-level timeouts), 1 on runtime
failure, 2 on configuration or parse errors. All randomness flows from config
seeds; measured runtimes are the only non-deterministic outputs.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import cliffmap as cm
from . import guidance as gd
from . import lifelong as ll
from . import trajectories as tj
from . import uasim as ua
from .solver import CBSConfig, cbs_solve, solution_from_dict
from .world import MapError, parse_map, parse_scen


class ConfigError(ValueError):
    pass


def _out_path(p: str) -> Path:
    root = os.environ.get("FLOWMAPF_OUT", ".")
    path = Path(p)
    return path if path.is_absolute() else Path(root) / path


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _load_map(path: str):
    return parse_map(_read(path), name=Path(path).stem)


def _load_cliff(path: str | None, grid) -> cm.CliffMap | None:
    if path is None:
        return None
    cmap = cm.load_cliffmap(_read(path))
    if cmap.resolution != grid.resolution:
        raise ConfigError("cliffmap resolution does not match the map")
    return cmap


def _fit_config(args) -> cm.FitConfig:
    return cm.FitConfig(
        max_components=args.max_components, min_observations=args.min_obs,
        seed=args.fit_seed, resample_dt=args.dt)


def cmd_fit_mod(args) -> int:
    grid = _load_map(args.map)
    text = _read(args.trajectories)
    cfg = _fit_config(args)
    dataset = tj.load_trajectories(text)
    binned = tj.bin_observations(dataset, grid, dt=cfg.resample_dt)
    digest = hashlib.sha256(text.encode()).hexdigest()
    cmap = cm.build_cliffmap(binned, cfg, map_name=grid.name, dataset_hash=digest)
    _write(_out_path(args.out), cm.save_cliffmap(cmap))
    if not cmap.cells:
        print("warning: no cell reached the observation threshold; map is modelless")
    print(f"fitted {len(cmap.cells)} cells "
          f"(coverage {cmap.coverage:.3f}, {binned.dropped} observations dropped)")
    return 0


def cmd_guidance_export(args) -> int:
    grid = _load_map(args.map)
    cliff = _load_cliff(args.cliffmap, grid)
    gg = gd.build_guidance_graph(grid, cliff, g_s=args.gs)
    rows = gd.export_guidance_rows(gg)
    if args.out_json:
        doc = [{"x": x, "y": y, "action": a, "omega": w} for x, y, a, w in rows]
        _write(_out_path(args.out_json), json.dumps(doc, indent=0, sort_keys=True))
    if args.out_csv:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["x", "y", "action", "omega"])
        writer.writerows(rows)
        _write(_out_path(args.out_csv), buf.getvalue())
    if args.svg:
        _render_guidance_svg(gg, _out_path(args.svg))
    print(f"exported {len(rows)} transitions "
          f"(omega in [{min(r[3] for r in rows):.3f}, {max(r[3] for r in rows):.3f}])")
    return 0


def cmd_solve(args) -> int:
    grid = _load_map(args.map)
    scen = parse_scen(_read(args.scen), args.agents, grid)
    cliff = _load_cliff(args.cliffmap, grid)
    gg = gd.build_guidance_graph(grid, cliff, g_s=args.gs)
    cfg = CBSConfig(omega1=args.omega1, time_limit=args.time_limit,
                    low_level=args.low_level)
    result = cbs_solve(gg, scen, cfg)
    out_dir = _out_path(args.out)
    solved = result.ok
    if solved:
        _write(out_dir / "solution.json",
               json.dumps(result.to_dict(include_runtime=False), indent=1, sort_keys=True))
        print(f"solved: cost={result.total_cost:.4f} "
              f"unit={result.total_unit_cost} runtime={result.stats.runtime:.3f}s")
    else:
        print(f"not solved ({result.reason}) after {result.stats.runtime:.3f}s")
    row = {
        "map": grid.name, "agents": len(scen), "variant":
            "flow-aware" if args.cliffmap else "baseline",
        "omega1": args.omega1, "solved": solved,
        "cost": result.total_cost if solved else "",
        "unit_cost": result.total_unit_cost if solved else "",
        "runtime": round(result.stats.runtime, 6),
        "hl_expanded": result.stats.hl_expanded,
        "ll_expanded": result.stats.ll_expanded,
    }
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(row))
    writer.writeheader()
    writer.writerow(row)
    _write(out_dir / "stats.csv", buf.getvalue())
    return 0


def cmd_lifelong(args) -> int:
    grid = _load_map(args.map)
    cliff = _load_cliff(args.cliffmap, grid)
    gg = gd.build_guidance_graph(grid, cliff, g_s=args.gs)
    sim_cfg = ll.SimulationConfig(
        sim_time=args.sim_time, replan_period=args.replan, horizon=args.horizon,
        omega1=args.omega1, time_limit=args.time_limit, low_level=args.low_level)
    queue = ll.generate_task_queue(grid, args.agents, args.task_seed)
    sim_log = ll.rhcr_run(gg, queue, sim_cfg)
    out_dir = _out_path(args.out)
    _write(out_dir / "log.jsonl", sim_log.to_jsonl())

    ua_count = None
    if args.ua_config:
        ua_cfg = ua.UAConfig.from_json(_read(args.ua_config))
        stream = ua.generate_stream(grid, ua_cfg, "lifelong", sim_time=args.sim_time)
        _write(out_dir / "uas.csv", ua.uas_to_csv(stream))
        report = ua.count_conflicts(sim_log, stream, grid,
                                    radius_agent=args.radius, radius_ua=args.radius)
        ua_count = report.total
        _write(out_dir / "conflicts.json", json.dumps({
            "total": report.total,
            "per_timestep": {str(k): v for k, v in sorted(report.per_timestep.items())},
            "events": [{"agent": e.agent, "ua": e.ua_id, "t": round(e.t_start, 6),
                        "min_distance": round(e.min_distance, 6)}
                       for e in report.events],
        }, indent=1, sort_keys=True))
    metrics = ll.compute_metrics(sim_log, ua_count)
    _write(out_dir / "metrics.json", json.dumps({
        "throughput": metrics.throughput,
        "mean_iteration_runtime": metrics.mean_iteration_runtime,
        "tasks_completed": metrics.tasks_completed,
        "infeasible_iterations": metrics.infeasible_iterations,
        "ua_conflicts_per_timestep": metrics.ua_conflicts_per_timestep,
    }, indent=1, sort_keys=True))
    print(f"throughput={metrics.throughput:.4f} "
          f"mean_runtime={metrics.mean_iteration_runtime:.3f}s "
          f"ua_conflicts/ts={metrics.ua_conflicts_per_timestep}")
    return 0


def cmd_gen_uas(args) -> int:
    grid = _load_map(args.map)
    cfg = ua.UAConfig.from_json(_read(args.ua_config))
    if args.mode == "dataset":
        trajs = ua.generate_dataset(grid, cfg, n=args.n)
    else:
        trajs = ua.generate_stream(grid, cfg, args.mode,
                                   sim_time=args.sim_time, count=args.count)
    _write(_out_path(args.out), ua.uas_to_csv(trajs))
    print(f"wrote {len(trajs)} trajectories")
    return 0


def cmd_eval_conflicts(args) -> int:
    grid = _load_map(args.map)
    uas = ua.uas_from_csv(_read(args.uas))
    if args.solution:
        subject = solution_from_dict(json.loads(_read(args.solution)))
    elif args.log:
        subject = ll.log_from_jsonl(_read(args.log))
    else:
        raise ConfigError("need --solution or --log")
    report = ua.count_conflicts(subject, uas, grid,
                                radius_agent=args.radius, radius_ua=args.radius)
    doc = {
        "total": report.total,
        "per_timestep": {str(k): v for k, v in sorted(report.per_timestep.items())},
        "events": [{"agent": e.agent, "ua": e.ua_id, "t": round(e.t_start, 6),
                    "t_end": round(e.t_end, 6),
                    "min_distance": round(e.min_distance, 6)}
                   for e in report.events],
    }
    _write(_out_path(args.out), json.dumps(doc, indent=1, sort_keys=True))
    print(f"{report.total} conflicts")
    return 0


def _bench_one(job: dict) -> dict:
    """One (map, variant, seed) lifelong run; executed in a worker process."""
    grid = parse_map(job["map_text"], name=job["map_name"])
    cliff = cm.load_cliffmap(job["cliff_doc"]) if job["cliff_doc"] else None
    gg = gd.build_guidance_graph(grid, cliff, g_s=job["gs"])
    sim_cfg = ll.SimulationConfig(**job["sim"])
    queue = ll.generate_task_queue(grid, job["agents"], job["task_seed"])
    sim_log = ll.rhcr_run(gg, queue, sim_cfg)
    ua_cfg = ua.UAConfig.from_json(job["ua_json"])
    ua_cfg.seed = job["ua_seed"]
    stream = ua.generate_stream(grid, ua_cfg, "lifelong", sim_time=sim_cfg.sim_time)
    report = ua.count_conflicts(sim_log, stream, grid,
                                radius_agent=job["radius"], radius_ua=job["radius"])
    metrics = ll.compute_metrics(sim_log, report.total)
    return {
        "map": job["map_name"], "variant": job["variant"], "seed": job["seed"],
        "throughput": metrics.throughput,
        "mean_runtime": metrics.mean_iteration_runtime,
        "ua_conflicts_per_ts": metrics.ua_conflicts_per_timestep,
        "tasks_completed": metrics.tasks_completed,
        "infeasible_iterations": metrics.infeasible_iterations,
    }


def run_bench(config: dict, out_dir: Path, jobs: int = 0) -> list[dict]:
    maps = config.get("maps", [])
    variants = config.get("variants", ["baseline", "flow-aware"])
    seeds = config.get("seeds", [0])
    if not maps or not variants:
        raise ConfigError("bench config needs maps and variants")
    for m in maps:
        if not Path(m).exists():
            raise ConfigError(f"map file {m} does not exist")
    sim = dict(config.get("sim", {}))
    agents = int(config.get("agents", 10))
    gs = float(config.get("gs", 1.0))
    radius = float(config.get("radius", ua.DEFAULT_RADIUS))
    fit_cfg = cm.FitConfig(**config.get("fit", {}))
    dataset_n = int(config.get("dataset_size", 10_000))
    ua_doc = config.get("ua", {"movement_type": "random", "areas": [], "seed": 0})

    job_list = []
    for map_path in maps:
        map_text = _read(map_path)
        grid = parse_map(map_text, name=Path(map_path).stem)
        ua_cfg = ua.UAConfig.from_json(json.dumps(ua_doc))
        cliff_doc = None
        if any(v != "baseline" for v in variants):
            dataset = ua.generate_dataset(grid, ua_cfg, n=dataset_n)
            csv_text = ua.uas_to_csv(dataset)
            binned = tj.bin_observations(tj.load_trajectories(csv_text), grid,
                                         dt=fit_cfg.resample_dt)
            digest = hashlib.sha256(csv_text.encode()).hexdigest()
            cmap = cm.build_cliffmap(binned, fit_cfg, map_name=grid.name,
                                     dataset_hash=digest)
            cliff_doc = cm.save_cliffmap(cmap)
        for variant in variants:
            for seed in seeds:
                job_list.append({
                    "map_text": map_text, "map_name": grid.name,
                    "cliff_doc": cliff_doc if variant != "baseline" else None,
                    "variant": variant, "seed": seed, "task_seed": seed,
                    "ua_seed": 1_000_003 + seed, "agents": agents, "gs": gs,
                    "sim": sim, "radius": radius, "ua_json": json.dumps(ua_doc),
                })

    workers = jobs or os.cpu_count() or 1
    rows: list[dict] = []
    if workers > 1 and len(job_list) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for row in pool.map(_bench_one, job_list):
                rows.append(row)
    else:
        rows = [_bench_one(j) for j in job_list]
    rows.sort(key=lambda r: (r["map"], r["variant"], r["seed"]))

    aggregates = []
    keys = sorted({(r["map"], r["variant"]) for r in rows})
    for map_name, variant in keys:
        sel = [r for r in rows if r["map"] == map_name and r["variant"] == variant]
        agg = {"map": map_name, "variant": variant, "runs": len(sel)}
        for metric in ("throughput", "mean_runtime", "ua_conflicts_per_ts"):
            vals = [r[metric] for r in sel]
            agg[f"{metric}_mean"] = statistics.fmean(vals)
            agg[f"{metric}_std"] = statistics.pstdev(vals) if len(vals) > 1 else 0.0
        aggregates.append(agg)

    fieldnames = list(rows[0])
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fieldnames)
    writer.writeheader()
    writer.writerows(rows)
    _write(out_dir / "report.csv", buf.getvalue())
    _write(out_dir / "report.json", json.dumps(
        {"rows": rows, "aggregates": aggregates}, indent=1, sort_keys=True))
    _render_bench_svgs(aggregates, out_dir)
    return rows


def cmd_bench(args) -> int:
    config = json.loads(_read(args.config))
    rows = run_bench(config, _out_path(args.out), jobs=args.jobs)
    print(f"completed {len(rows)} runs")
    return 0


def _mpl():
    import matplotlib
    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "flowmapf"
    import matplotlib.pyplot as plt
    return plt


def _save_svg(fig, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})


def _render_guidance_svg(gg, path: Path):
    """Map overlay: obstacles plus per-cell arrows along the cheapest move."""
    plt = _mpl()
    grid = gg.grid
    fig, ax = plt.subplots(figsize=(6, 6 * grid.height / max(grid.width, 1)))
    ax.imshow(~grid.passable, cmap="gray_r", origin="upper",
              extent=(0, grid.width, grid.height, 0))
    deltas = {0: (1, 0), 1: (0, -1), 2: (-1, 0), 3: (0, 1)}
    xs, ys, us, vs, cs = [], [], [], [], []
    for idx in grid.passable_indices():
        v = grid.vertex(int(idx))
        moves = [(gg.omega[idx, a], a) for a in range(4) if gg.nbr[idx, a] >= 0]
        if not moves:
            continue
        w, a = min(moves)
        flow = float(gg.omega[idx, 4]) - gg.g_s  # wait cost as intensity
        if flow <= 1e-12:
            continue
        dx, dy = deltas[a]
        xs.append(v.x + 0.5)
        ys.append(v.y + 0.5)
        us.append(dx)
        vs.append(-dy)
        cs.append(flow)
    if xs:
        ax.quiver(xs, ys, us, vs, cs, cmap="viridis", angles="xy",
                  scale_units="xy", scale=1.6, width=0.004)
    ax.set_title("guidance graph: cheapest move per cell (color = wait cost)")
    ax.set_xlim(0, grid.width)
    ax.set_ylim(grid.height, 0)
    _save_svg(fig, path)
    plt.close(fig)


def _render_bench_svgs(aggregates: list[dict], out_dir: Path):
    plt = _mpl()
    metrics = [("ua_conflicts_per_ts", "UA conflicts per timestep"),
               ("throughput", "throughput (tasks/timestep)"),
               ("mean_runtime", "mean iteration runtime (s)")]
    maps = sorted({a["map"] for a in aggregates})
    variants = sorted({a["variant"] for a in aggregates})
    for metric, label in metrics:
        fig, ax = plt.subplots(figsize=(1.8 + 1.4 * len(maps), 3.6))
        width = 0.8 / max(len(variants), 1)
        for i, variant in enumerate(variants):
            xs, ys, es = [], [], []
            for k, map_name in enumerate(maps):
                sel = [a for a in aggregates
                       if a["map"] == map_name and a["variant"] == variant]
                if sel:
                    xs.append(k + i * width)
                    ys.append(sel[0][f"{metric}_mean"])
                    es.append(sel[0][f"{metric}_std"])
            ax.bar(xs, ys, width=width, yerr=es, label=variant, capsize=2)
        ax.set_xticks([k + width * (len(variants) - 1) / 2 for k in range(len(maps))])
        ax.set_xticklabels(maps, rotation=20, ha="right", fontsize=8)
        ax.set_ylabel(label)
        ax.legend(fontsize=8)
        fig.tight_layout()
        _save_svg(fig, out_dir / f"{metric}.svg")
        plt.close(fig)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowmapf",
        description="flow-aware multi-agent path finding toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit-mod", help="fit a motion map from a trajectory CSV")
    p.add_argument("--trajectories", required=True)
    p.add_argument("--map", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dt", type=float, default=1.0)
    p.add_argument("--min-obs", type=int, default=10)
    p.add_argument("--max-components", type=int, default=5)
    p.add_argument("--fit-seed", type=int, default=0)
    p.set_defaults(func=cmd_fit_mod)

    p = sub.add_parser("guidance-export", help="export guidance-graph edge weights")
    p.add_argument("--map", required=True)
    p.add_argument("--cliffmap")
    p.add_argument("--gs", type=float, default=1.0)
    p.add_argument("--out-json")
    p.add_argument("--out-csv")
    p.add_argument("--svg")
    p.set_defaults(func=cmd_guidance_export)

    p = sub.add_parser("solve", help="one-shot MAPF solve on a scenario")
    p.add_argument("--map", required=True)
    p.add_argument("--scen", required=True)
    p.add_argument("--agents", type=int, required=True)
    p.add_argument("--cliffmap")
    p.add_argument("--gs", type=float, default=1.0)
    p.add_argument("--omega1", type=float, default=1.2)
    p.add_argument("--time-limit", type=float, default=5.0)
    p.add_argument("--low-level", choices=["astar", "sipp"], default="astar")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("lifelong", help="rolling-horizon lifelong simulation")
    p.add_argument("--map", required=True)
    p.add_argument("--agents", type=int, required=True)
    p.add_argument("--cliffmap")
    p.add_argument("--gs", type=float, default=1.0)
    p.add_argument("--sim-time", type=int, default=2000)
    p.add_argument("--replan", type=int, default=20)
    p.add_argument("--horizon", type=int, default=40)
    p.add_argument("--omega1", type=float, default=1.5)
    p.add_argument("--time-limit", type=float, default=5.0)
    p.add_argument("--low-level", choices=["astar", "sipp"], default="sipp")
    p.add_argument("--task-seed", type=int, default=0)
    p.add_argument("--ua-config")
    p.add_argument("--radius", type=float, default=ua.DEFAULT_RADIUS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_lifelong)

    p = sub.add_parser("gen-uas", help="generate UA trajectory CSVs")
    p.add_argument("--map", required=True)
    p.add_argument("--ua-config", required=True)
    p.add_argument("--mode", choices=["dataset", "oneshot", "lifelong"],
                   default="dataset")
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--sim-time", type=int, default=2000)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_uas)

    p = sub.add_parser("eval-conflicts", help="count agent-UA conflicts")
    p.add_argument("--map", required=True)
    p.add_argument("--uas", required=True)
    p.add_argument("--solution")
    p.add_argument("--log")
    p.add_argument("--radius", type=float, default=ua.DEFAULT_RADIUS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval_conflicts)

    p = sub.add_parser("bench", help="run an experiment grid and aggregate")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=0)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, MapError, tj.TrajectoryError, cm.ModelError,
            ua.UAError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
