"""Trajectory ingestion: CSV loading, velocity extraction, per-cell binning.

Velocities are (theta, rho) with theta in [0, 2pi) measured in the math
convention (theta = pi/2 points up, i.e. decreasing map y).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

from .world import GridMap, MapError, world_to_vertex

TWO_PI = 2.0 * math.pi

CSV_COLUMNS = ("traj_id", "t", "x", "y")


class TrajectoryError(ValueError):
    """Raised for malformed trajectory data."""


def wrap_angle(theta: float) -> float:
    """Wrap an angle into [0, 2pi)."""
    w = math.fmod(theta, TWO_PI)
    if w < 0.0:
        w += TWO_PI
    return w if w < TWO_PI else 0.0


@dataclass(frozen=True)
class Trajectory:
    id: str
    samples: tuple[tuple[float, float, float], ...]  # (t, x, y)

    def __post_init__(self):
        for (t0, _, _), (t1, _, _) in zip(self.samples, self.samples[1:]):
            if t1 <= t0:
                raise TrajectoryError(f"trajectory {self.id!r}: timestamps not strictly increasing")

    @property
    def usable(self) -> bool:
        """Whether velocities can be extracted (needs at least 2 samples)."""
        return len(self.samples) >= 2


@dataclass(frozen=True)
class VelocityObservation:
    pos: tuple[float, float]  # meters
    theta: float  # radians in [0, 2pi)
    rho: float  # m/s


@dataclass
class CellObservations:
    """Per-cell (theta, rho) observations keyed by linear cell index."""

    grid: GridMap
    cells: dict[int, list[tuple[float, float]]] = field(default_factory=dict)
    dropped: int = 0

    def gamma(self, idx: int) -> int:
        return len(self.cells.get(idx, ()))

    @property
    def total(self) -> int:
        return sum(len(v) for v in self.cells.values())


def load_trajectories(source: str | io.TextIOBase) -> list[Trajectory]:
    """Load a trajectory CSV (header traj_id,t,x,y) into trajectories sorted by id.

    Rows of each id must appear in strictly increasing t order; a duplicate or
    decreasing timestamp is an error naming the offending id.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise TrajectoryError("empty trajectory CSV") from None
    header = [h.strip() for h in header]
    if tuple(header[:4]) != CSV_COLUMNS:
        raise TrajectoryError(f"expected columns {','.join(CSV_COLUMNS)}, got {','.join(header)}")

    by_id: dict[str, list[tuple[float, float, float]]] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) < 4:
            raise TrajectoryError(f"line {lineno}: expected 4 fields, got {len(row)}")
        tid = row[0]
        try:
            t, x, y = float(row[1]), float(row[2]), float(row[3])
        except ValueError as exc:
            raise TrajectoryError(f"line {lineno}: {exc}") from exc
        samples = by_id.setdefault(tid, [])
        if samples and t <= samples[-1][0]:
            raise TrajectoryError(f"trajectory {tid!r}: non-monotonic timestamp at line {lineno}")
        samples.append((t, x, y))
    return [Trajectory(tid, tuple(by_id[tid])) for tid in sorted(by_id)]


def resample(traj: Trajectory, dt: float) -> list[tuple[float, float, float]]:
    """Linearly interpolate a trajectory at fixed spacing dt from its first sample."""
    if dt <= 0.0:
        raise TrajectoryError("resampling dt must be positive")
    ts = [s[0] for s in traj.samples]
    t0, t_end = ts[0], ts[-1]
    count = int((t_end - t0) / dt + 1e-9) + 1
    out = []
    seg = 0
    for k in range(count):
        t = t0 + k * dt
        while seg + 1 < len(ts) - 1 and ts[seg + 1] <= t:
            seg += 1
        ta, xa, ya = traj.samples[seg]
        tb, xb, yb = traj.samples[seg + 1]
        u = (t - ta) / (tb - ta)
        u = min(max(u, 0.0), 1.0)
        out.append((t, xa + u * (xb - xa), ya + u * (yb - ya)))
    return out


def extract_velocities(traj: Trajectory, dt: float = 1.0) -> list[VelocityObservation]:
    """Forward-difference velocities on the dt-resampled trajectory.

    Each observation is anchored at its segment's start position. A zero
    displacement yields (theta=0, rho=0) by convention and is kept.
    """
    if not traj.usable:
        raise TrajectoryError(f"trajectory {traj.id!r} has fewer than 2 samples")
    points = resample(traj, dt)
    obs = []
    for (t0, x0, y0), (_, x1, y1) in zip(points, points[1:]):
        dx, dy = x1 - x0, y1 - y0
        rho = math.hypot(dx, dy) / dt
        # map y grows downward; flip dy so theta=pi/2 means "up"
        theta = wrap_angle(math.atan2(-dy, dx)) if rho > 0.0 else 0.0
        obs.append(VelocityObservation(pos=(x0, y0), theta=theta, rho=rho))
    return obs


def bin_observations(
    dataset: list[Trajectory], grid: GridMap, dt: float = 1.0
) -> CellObservations:
    """Assign extracted velocities to grid cells; out-of-map or blocked-cell
    observations are dropped (counted, not fatal)."""
    table = CellObservations(grid=grid)
    for traj in dataset:
        if not traj.usable:
            continue
        for ob in extract_velocities(traj, dt):
            try:
                v = world_to_vertex(grid, ob.pos)
            except MapError:
                table.dropped += 1
                continue
            if not grid.passable[v.y, v.x]:
                table.dropped += 1
                continue
            table.cells.setdefault(grid.index(v), []).append((ob.theta, ob.rho))
    return table
