"""Semi-wrapped Gaussian mixtures over velocity (theta, rho) and per-cell maps.

A semi-wrapped normal wraps the angular dimension around the unit circle by
summing 2*pi-shifted copies of a bivariate normal; the winding sum is
truncated at a configurable number of terms. Mixtures of these model the
multimodal motion patterns observed at each grid cell.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .trajectories import CellObservations, wrap_angle
from .world import GridMap, Vertex

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi

SCHEMA_VERSION = 1


class ModelError(ValueError):
    """Invalid mixture parameters or a failed density evaluation."""


class FitError(RuntimeError):
    """EM fitting could not produce a model."""


class InsufficientObservations(FitError):
    """Fewer observations than the configured fitting threshold."""


@dataclass(frozen=True)
class SWND:
    """Semi-wrapped normal with mean (mu_theta, mu_rho) and 2x2 covariance."""

    mu_theta: float
    mu_rho: float
    sigma: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.sigma, dtype=float)
        if s.shape != (2, 2):
            raise ModelError("covariance must be 2x2")
        if abs(s[0, 1] - s[1, 0]) > 1e-9:
            raise ModelError("covariance must be symmetric")
        eig = np.linalg.eigvalsh(s)
        if eig.min() <= 0.0:
            raise ModelError(f"covariance not positive definite (eigenvalues {eig})")
        if not 0.0 <= self.mu_theta < TWO_PI:
            raise ModelError(f"mu_theta {self.mu_theta} outside [0, 2pi)")
        if self.mu_rho < 0.0:
            raise ModelError(f"mu_rho {self.mu_rho} negative")
        object.__setattr__(self, "sigma", s)
        s.setflags(write=False)


@dataclass(frozen=True)
class SWGMM:
    """Weighted mixture of semi-wrapped normals; weights sum to one."""

    components: tuple[tuple[float, SWND], ...]

    def __post_init__(self):
        if not self.components:
            raise ModelError("mixture needs at least one component")
        betas = [b for b, _ in self.components]
        if any(b < 0.0 or b > 1.0 for b in betas):
            raise ModelError("mixture weights must lie in [0, 1]")
        if abs(sum(betas) - 1.0) > 1e-9:
            raise ModelError(f"mixture weights sum to {sum(betas)}, expected 1")

    def __len__(self) -> int:
        return len(self.components)


def _log_winding_density(
    theta: np.ndarray, rho: np.ndarray, mu_theta: float, mu_rho: float,
    sigma: np.ndarray, windings: int,
) -> np.ndarray:
    """log sum_{|m|<=windings} N([theta + 2pi m, rho]; mu, sigma), elementwise."""
    a, b, c = sigma[0, 0], sigma[0, 1], sigma[1, 1]
    det = a * c - b * b
    if det <= 0.0:
        raise ModelError("singular covariance")
    i00, i01, i11 = c / det, -b / det, a / det
    log_norm = -math.log(TWO_PI) - 0.5 * math.log(det)
    m = np.arange(-windings, windings + 1, dtype=float)
    dt = theta[:, None] + TWO_PI * m[None, :] - mu_theta  # (n, M)
    dr = rho[:, None] - mu_rho  # (n, 1)
    quad = i00 * dt * dt + 2.0 * i01 * dt * dr + i11 * dr * dr
    lp = log_norm - 0.5 * quad
    peak = lp.max(axis=1)
    return peak + np.log(np.exp(lp - peak[:, None]).sum(axis=1))


def swnd_density(dist: SWND, u: tuple[float, float], windings: int = 2) -> float:
    """Density of a semi-wrapped normal at u = (theta, rho)."""
    theta = np.array([wrap_angle(u[0])])
    rho = np.array([float(u[1])])
    logd = _log_winding_density(theta, rho, dist.mu_theta, dist.mu_rho,
                                dist.sigma, windings)
    return float(np.exp(logd[0]))


def swgmm_density(mix: SWGMM, u: tuple[float, float], windings: int = 2) -> float:
    """Density of the mixture at u = (theta, rho)."""
    return sum(beta * swnd_density(d, u, windings) for beta, d in mix.components)


@dataclass(frozen=True)
class FitConfig:
    max_components: int = 5
    min_observations: int = 10
    min_variance: float = 1e-3
    windings: int = 2
    max_iter: int = 50
    tol: float = 1e-6
    seed: int = 0
    resample_dt: float = 1.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        return cls(**d)


@dataclass
class FitInfo:
    """Diagnostics for one fit: per-J BIC values and the winning LL trace."""

    n_obs: int
    chosen_j: int
    bic: dict[int, float]
    ll_trace: list[float]


def _kmeanspp_init(theta, rho, j, rng):
    """k-means++ seeding on the (cos, sin, rho) embedding; hard assignment."""
    emb = np.column_stack([np.cos(theta), np.sin(theta), rho])
    n = emb.shape[0]
    centers = [emb[rng.integers(n)]]
    for _ in range(j - 1):
        d2 = np.min([np.sum((emb - c) ** 2, axis=1) for c in centers], axis=0)
        total = d2.sum()
        if total <= 0.0:
            return None  # fewer distinct points than components
        centers.append(emb[rng.choice(n, p=d2 / total)])
    d2 = np.stack([np.sum((emb - c) ** 2, axis=1) for c in centers])
    assign = d2.argmin(axis=0)
    resp = np.zeros((n, j))
    resp[np.arange(n), assign] = 1.0
    if (resp.sum(axis=0) == 0).any():
        return None
    return resp


def _floor_sigma(s11: float, s12: float, s22: float, cfg: FitConfig) -> np.ndarray:
    s11 = max(s11, cfg.min_variance)
    s22 = max(s22, cfg.min_variance)
    cap = 0.99 * math.sqrt(s11 * s22)
    s12 = min(max(s12, -cap), cap)
    return np.array([[s11, s12], [s12, s22]])


def _init_params(theta, rho, resp, cfg: FitConfig):
    """Moment estimates per hard cluster (circular mean, wrapped residuals)."""
    weights = resp.sum(axis=0)
    betas = weights / resp.shape[0]
    mts, mrs, sigmas = [], [], []
    for jj in range(resp.shape[1]):
        r = resp[:, jj]
        w = weights[jj]
        mt = wrap_angle(math.atan2(float(r @ np.sin(theta)), float(r @ np.cos(theta))))
        mr = max(0.0, float(r @ rho) / w)
        dt = np.mod(theta - mt + math.pi, TWO_PI) - math.pi
        dr = rho - mr
        sig = _floor_sigma(float(r @ (dt * dt)) / w, float(r @ (dt * dr)) / w,
                           float(r @ (dr * dr)) / w, cfg)
        mts.append(mt)
        mrs.append(mr)
        sigmas.append(sig)
    return list(betas), mts, mrs, sigmas


def _em(theta, rho, j, cfg: FitConfig, rng):
    """Run EM with j components; returns (params, ll_trace) or None on failure.

    Both the mixture index and the winding number are latent, so the M-step
    takes winding-weighted moments of the unwrapped samples; this keeps the
    likelihood ascent exact. The angular mean is re-wrapped into [0, 2pi)
    afterwards, which leaves the wrapped density unchanged.
    """
    resp = _kmeanspp_init(theta, rho, j, rng)
    if resp is None:
        return None
    betas, mts, mrs, sigmas = _init_params(theta, rho, resp, cfg)
    n = theta.shape[0]
    m = np.arange(-cfg.windings, cfg.windings + 1, dtype=float)
    unwrapped = theta[:, None] + TWO_PI * m[None, :]  # (n, M)
    ll_trace: list[float] = []
    params_prev = None
    for _ in range(cfg.max_iter):
        j_eff = len(betas)
        logp_m = np.empty((n, j_eff, m.size))
        for jj in range(j_eff):
            s = sigmas[jj]
            det = s[0, 0] * s[1, 1] - s[0, 1] * s[0, 1]
            i00, i01, i11 = s[1, 1] / det, -s[0, 1] / det, s[0, 0] / det
            dt = unwrapped - mts[jj]
            dr = (rho - mrs[jj])[:, None]
            logp_m[:, jj, :] = (math.log(max(betas[jj], 1e-300))
                                - math.log(TWO_PI) - 0.5 * math.log(det)
                                - 0.5 * (i00 * dt * dt + 2.0 * i01 * dt * dr
                                         + i11 * dr * dr))
        flat = logp_m.reshape(n, -1)
        peak = flat.max(axis=1)
        lse = peak + np.log(np.exp(flat - peak[:, None]).sum(axis=1))
        ll = float(lse.sum())
        if ll_trace and ll < ll_trace[-1] - 1e-7 * (1.0 + abs(ll_trace[-1])):
            # covariance flooring can break the ascent; keep the last iterate
            betas, mts, mrs, sigmas = params_prev
            break
        converged = bool(ll_trace) and abs(ll - ll_trace[-1]) <= cfg.tol * (1.0 + abs(ll))
        ll_trace.append(ll)
        w_all = np.exp(logp_m - lse[:, None, None])  # resp over (component, winding)
        weights = w_all.sum(axis=(0, 2))  # (J,)
        if weights.min() < 1e-9 * n:
            return None  # degenerate component; caller refits with fewer
        if converged:
            break
        params_prev = (list(betas), list(mts), list(mrs), list(sigmas))
        for jj in range(j_eff):
            wj = float(weights[jj])
            wm = w_all[:, jj, :]  # (n, M)
            r = wm.sum(axis=1)  # (n,)
            mt_unwrapped = float((wm * unwrapped).sum()) / wj
            mr = max(0.0, float(r @ rho) / wj)
            dt = unwrapped - mt_unwrapped
            dr = rho - mr
            s11 = float((wm * dt * dt).sum()) / wj
            s12 = float(((wm * dt).sum(axis=1) @ dr)) / wj
            s22 = float(r @ (dr * dr)) / wj
            betas[jj] = wj / n
            mts[jj] = wrap_angle(mt_unwrapped)
            mrs[jj] = mr
            sigmas[jj] = _floor_sigma(s11, s12, s22, cfg)
    params = [(float(b), mt, mr, sig) for b, mt, mr, sig in zip(betas, mts, mrs, sigmas)]
    return params, ll_trace


def fit_swgmm_with_info(
    obs: list[tuple[float, float]], cfg: FitConfig = FitConfig()
) -> tuple[SWGMM, FitInfo]:
    """Fit a mixture by EM, selecting the component count with BIC."""
    if len(obs) < cfg.min_observations:
        raise InsufficientObservations(
            f"{len(obs)} observations, {cfg.min_observations} required")
    arr = np.asarray(obs, dtype=float)
    theta = np.mod(arr[:, 0], TWO_PI)
    rho = arr[:, 1]
    n = theta.shape[0]

    best = None  # (bic, j, params, trace)
    bics: dict[int, float] = {}
    for j in range(1, cfg.max_components + 1):
        rng = np.random.default_rng((cfg.seed, j))
        result = None
        jj = j
        while jj >= 1 and result is None:
            result = _em(theta, rho, jj, cfg, rng)
            if result is None:
                jj -= 1
        if result is None:
            continue
        params, trace = result
        k = 6 * len(params) - 1
        bic = k * math.log(n) - 2.0 * trace[-1]
        bics[j] = bic
        if best is None or bic < best[0] - 1e-12:
            best = (bic, j, params, trace)
    if best is None:
        raise FitError("EM failed for every component count")
    _, j, params, trace = best
    total = sum(p[0] for p in params)
    components = tuple(
        (b / total, SWND(mu_theta=mt, mu_rho=mr, sigma=sig))
        for b, mt, mr, sig in params)
    return SWGMM(components=components), FitInfo(
        n_obs=n, chosen_j=len(components), bic=bics, ll_trace=trace)


def fit_swgmm(obs: list[tuple[float, float]], cfg: FitConfig = FitConfig()) -> SWGMM:
    return fit_swgmm_with_info(obs, cfg)[0]


@dataclass
class CliffMap:
    """Per-cell velocity mixtures with observation counts; immutable after build."""

    map_name: str = ""
    resolution: float = 1.0
    cells: dict[Vertex, tuple[SWGMM, int]] = field(default_factory=dict)
    fit_config: FitConfig = field(default_factory=FitConfig)
    dataset_hash: str = ""
    coverage: float = 0.0

    def model_at(self, v: Vertex) -> tuple[SWGMM, int] | None:
        return self.cells.get(v)

    def __len__(self) -> int:
        return len(self.cells)


def empty_cliffmap(map_name: str = "") -> CliffMap:
    """A map with no models anywhere; guidance built from it is the baseline."""
    return CliffMap(map_name=map_name)


def build_cliffmap(
    binned: CellObservations,
    cfg: FitConfig = FitConfig(),
    map_name: str = "",
    dataset_hash: str = "",
) -> CliffMap:
    """Fit one mixture per cell holding at least cfg.min_observations samples.

    Cells with fewer observations stay modelless; individual fit failures are
    logged and leave that cell modelless as well.
    """
    grid = binned.grid
    cells: dict[Vertex, tuple[SWGMM, int]] = {}
    failures = 0
    for idx in sorted(binned.cells):
        obs = binned.cells[idx]
        if len(obs) < cfg.min_observations:
            continue
        v = grid.vertex(idx)
        try:
            model = fit_swgmm(obs, cfg)
        except FitError as exc:
            failures += 1
            log.warning("cell %s: fit failed (%s); leaving modelless", v, exc)
            continue
        cells[v] = (model, len(obs))
    if failures:
        log.warning("%d cells left modelless due to fit failures", failures)
    n_passable = int(grid.passable.sum())
    return CliffMap(
        map_name=map_name or grid.name,
        resolution=grid.resolution,
        cells=cells,
        fit_config=cfg,
        dataset_hash=dataset_hash,
        coverage=len(cells) / n_passable if n_passable else 0.0,
    )


def save_cliffmap(cmap: CliffMap) -> str:
    """Serialize to the JSON document format (schema version 1)."""
    cell_docs = []
    for v in sorted(cmap.cells, key=lambda v: (v.y, v.x)):
        model, gamma = cmap.cells[v]
        comps = [{
            "beta": beta,
            "mu_theta": d.mu_theta,
            "mu_rho": d.mu_rho,
            "sigma": [d.sigma[0, 0], d.sigma[0, 1], d.sigma[1, 1]],
        } for beta, d in model.components]
        cell_docs.append({"x": v.x, "y": v.y, "gamma": gamma, "components": comps})
    doc = {
        "schema_version": SCHEMA_VERSION,
        "map_name": cmap.map_name,
        "resolution": cmap.resolution,
        "cells": cell_docs,
        "fit_config": cmap.fit_config.to_dict(),
        "dataset_hash": cmap.dataset_hash,
        "coverage": cmap.coverage,
    }
    return json.dumps(doc, indent=1, sort_keys=True)


def load_cliffmap(document: str) -> CliffMap:
    """Parse and validate a CLiFF-map JSON document."""
    doc = json.loads(document)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ModelError(f"unsupported schema version {doc.get('schema_version')}")
    cells: dict[Vertex, tuple[SWGMM, int]] = {}
    for cd in doc["cells"]:
        gamma = int(cd["gamma"])
        if gamma < 1:
            raise ModelError(f"cell ({cd['x']},{cd['y']}): gamma {gamma} < 1")
        comps = []
        for c in cd["components"]:
            s11, s12, s22 = c["sigma"]
            dist = SWND(
                mu_theta=float(c["mu_theta"]),
                mu_rho=float(c["mu_rho"]),
                sigma=np.array([[s11, s12], [s12, s22]], dtype=float),
            )
            comps.append((float(c["beta"]), dist))
        cells[Vertex(int(cd["x"]), int(cd["y"]))] = (SWGMM(tuple(comps)), gamma)
    return CliffMap(
        map_name=doc.get("map_name", ""),
        resolution=float(doc.get("resolution", 1.0)),
        cells=cells,
        fit_config=FitConfig.from_dict(doc["fit_config"]),
        dataset_hash=doc.get("dataset_hash", ""),
        coverage=float(doc.get("coverage", 0.0)),
    )
