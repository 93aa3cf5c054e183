"""Constant-velocity tracking scenarios and Monte Carlo evaluation.

A target moves in a straight line in the plane with Gaussian process noise;
position measurements are contaminated by a configurable heavy-tailed family.
Each Monte Carlo run derives its random streams from (master seed, run index,
stream role) through a splittable counter scheme, so runs are order
independent and adding filters never perturbs the noise realisations.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .filters import (
    GaussianBelief,
    StateSpaceModel,
    StepFailure,
    VbConfig,
    filter_step,
    kalman_step,
)
from .noise import NoiseFamily, sample_measurement_noise, true_covariance

DEFAULT_LOSS_THRESHOLD = 500.0
DEFAULT_MIN_FRACTION = 0.95
DEFAULT_WARMUP = 10


def constant_velocity_model(dt: float = 1.0, q_factor: float = 0.1) -> StateSpaceModel:
    """Planar constant-velocity model: state (x, y, vx, vy), position observed."""
    eye2 = np.eye(2)
    zero2 = np.zeros((2, 2))
    f = np.block([[eye2, dt * eye2], [zero2, eye2]])
    h = np.block([eye2, zero2])
    q_nominal = np.block(
        [
            [dt**3 / 3.0 * eye2, dt**2 / 2.0 * eye2],
            [dt**2 / 2.0 * eye2, dt * eye2],
        ]
    )
    return StateSpaceModel(f=f, h=h, q=q_factor * q_nominal)


@dataclass(frozen=True)
class FilterSetup:
    """One filter in the benchmark bank.

    kind 'kf' runs a plain Kalman filter with the nominal scale matrix,
    'kftncm' a plain Kalman filter with the true stationary noise covariance
    (skipped when that covariance does not exist), and 'vb' the
    variational-Bayes robust filter with the given assumed family.
    """

    name: str
    kind: str  # 'kf' | 'kftncm' | 'vb'
    family: NoiseFamily | None = None
    vb: VbConfig | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("kf", "kftncm", "vb"):
            raise ValueError(f"unknown filter kind {self.kind!r}")
        if self.kind == "vb" and (self.family is None or self.vb is None):
            raise ValueError("vb filters need an assumed family and a VbConfig")


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    noise: NoiseFamily
    filters: tuple[FilterSetup, ...]
    duration: int = 100
    dt: float = 1.0
    q_factor: float = 0.1
    x0: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 10.0, 10.0]))
    p0: np.ndarray = field(default_factory=lambda: np.diag([25.0, 25.0, 2.0, 2.0]))
    mc_runs: int = 20
    master_seed: int = 0
    loss_threshold: float = DEFAULT_LOSS_THRESHOLD
    min_fraction: float = DEFAULT_MIN_FRACTION
    warmup: int = DEFAULT_WARMUP

    def __post_init__(self) -> None:
        if self.duration < 1:
            raise ValueError("duration must be >= 1")
        if self.mc_runs < 1:
            raise ValueError("mc_runs must be >= 1")

    def model(self) -> StateSpaceModel:
        return constant_velocity_model(self.dt, self.q_factor)


@dataclass
class RunResult:
    """Per-run error traces and diagnostics for one filter."""

    pos_sq_err: np.ndarray  # squared position error per step, nan once stopped
    vel_sq_err: np.ndarray
    steps_completed: int
    step_failed: bool
    nonfinite: bool
    wall_time: float
    iterations: np.ndarray
    fallback_iters: np.ndarray


# shape-parameter grids of the benchmark sweeps
SGAS_ALPHA_GRID = (0.3, 0.5, 0.7, 0.9, 1.1, 1.3, 1.5, 1.7, 1.85)
ST_DOF_GRID = (0.3, 0.5, 0.7, 0.9, 1.2, 1.7, 2.5, 3.5, 6.0)
GM_U_GRID = (5.0, 10.0, 1e2, 1e3, 1e4, 1e5, 1e6, 1e7, 1e8)


def _stream(master_seed: int, run_index: int, role: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(run_index, role)))


def _psd_sqrt(a: np.ndarray) -> np.ndarray:
    """Matrix square root for PSD a; tolerates zero and rank-deficient inputs."""
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(a)
        return vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None)))


def simulate_track(
    cfg: ScenarioConfig, run_index: int, master_seed: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """True states (T, n) and measurements (T, m) for one run.

    The initial state is drawn from N(x0, P0); the same stream then supplies
    process noise and measurement noise step by step.
    """
    seed = cfg.master_seed if master_seed is None else master_seed
    rng = _stream(seed, run_index, 0)
    model = cfg.model()
    n = model.n
    chol_p0 = _psd_sqrt(cfg.p0)
    chol_q = _psd_sqrt(model.q)
    x = cfg.x0 + chol_p0 @ rng.standard_normal(n)
    states = np.empty((cfg.duration, n))
    measurements = np.empty((cfg.duration, model.m))
    for k in range(cfg.duration):
        x = model.f @ x + chol_q @ rng.standard_normal(n)
        states[k] = x
        measurements[k] = model.h @ x + sample_measurement_noise(cfg.noise, rng)
    return states, measurements


def _run_one_filter(
    cfg: ScenarioConfig,
    setup: FilterSetup,
    states: np.ndarray,
    measurements: np.ndarray,
    rng: np.random.Generator,
) -> RunResult:
    model = cfg.model()
    t_steps = cfg.duration
    pos_sq = np.full(t_steps, np.nan)
    vel_sq = np.full(t_steps, np.nan)
    iters = np.zeros(t_steps)
    fb_iters = np.zeros(t_steps)
    belief = GaussianBelief(mean=cfg.x0.copy(), cov=cfg.p0.copy())
    failed = False
    nonfinite = False
    steps = 0
    start = time.perf_counter()
    if setup.kind == "kftncm":
        fixed_r = true_covariance(cfg.noise)
        if fixed_r is None:
            raise ValueError("kftncm is not applicable: true covariance does not exist")
    elif setup.kind == "kf":
        fixed_r = np.asarray(cfg.noise.scale_matrix, dtype=float)
    for k in range(t_steps):
        z = measurements[k]
        try:
            if setup.kind == "vb":
                belief, report = filter_step(model, belief, z, setup.family, setup.vb, rng)
                iters[k] = report.iterations
                fb_iters[k] = report.fallback_iters
            else:
                belief = kalman_step(model, belief, z, fixed_r)
        except StepFailure:
            failed = True
            break
        if not np.all(np.isfinite(belief.mean)):
            nonfinite = True
            break
        err = belief.mean - states[k]
        pos_sq[k] = float(err[0] ** 2 + err[1] ** 2)
        vel_sq[k] = float(err[2] ** 2 + err[3] ** 2)
        steps = k + 1
    return RunResult(
        pos_sq_err=pos_sq,
        vel_sq_err=vel_sq,
        steps_completed=steps,
        step_failed=failed,
        nonfinite=nonfinite,
        wall_time=time.perf_counter() - start,
        iterations=iters,
        fallback_iters=fb_iters,
    )


def _run_index(cfg: ScenarioConfig, run_index: int) -> dict[str, RunResult]:
    states, measurements = simulate_track(cfg, run_index)
    out: dict[str, RunResult] = {}
    for slot, setup in enumerate(cfg.filters):
        if setup.kind == "kftncm" and true_covariance(cfg.noise) is None:
            continue
        rng = _stream(cfg.master_seed, run_index, 1 + slot)
        out[setup.name] = _run_one_filter(cfg, setup, states, measurements, rng)
    return out


def run_lost(result: RunResult, loss_threshold: float, warmup: int = DEFAULT_WARMUP) -> bool:
    """Loss criterion: non-finite estimate, signalled step failure, or a
    position error beyond the threshold at any step after the warm-up."""
    if result.step_failed or result.nonfinite:
        return True
    err = result.pos_sq_err[warmup:]
    err = err[np.isfinite(err)]
    return bool(err.size and np.sqrt(np.max(err)) > loss_threshold)


def effectiveness(
    results: list[RunResult],
    loss_threshold: float = DEFAULT_LOSS_THRESHOLD,
    min_fraction: float = DEFAULT_MIN_FRACTION,
    warmup: int = DEFAULT_WARMUP,
) -> bool:
    """A cell is effective when at least min_fraction of its runs are not lost."""
    if not results:
        raise ValueError("effectiveness needs at least one run")
    kept = sum(not run_lost(r, loss_threshold, warmup) for r in results)
    return kept / len(results) >= min_fraction


@dataclass
class FilterReport:
    name: str
    applicable: bool
    results: list[RunResult] = field(default_factory=list)

    def surviving(self, loss_threshold: float, warmup: int) -> list[RunResult]:
        return [r for r in self.results if not run_lost(r, loss_threshold, warmup)]


@dataclass
class MonteCarloReport:
    cfg: ScenarioConfig
    filters: dict[str, FilterReport]

    def step_rmse(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        """Across-run RMSE per step over surviving runs (nan where empty)."""
        rep = self.filters[name]
        kept = rep.surviving(self.cfg.loss_threshold, self.cfg.warmup)
        t_steps = self.cfg.duration
        if not kept:
            return np.full(t_steps, np.nan), np.full(t_steps, np.nan)
        pos = np.vstack([r.pos_sq_err for r in kept])
        vel = np.vstack([r.vel_sq_err for r in kept])
        with np.errstate(invalid="ignore"):
            return np.sqrt(np.nanmean(pos, axis=0)), np.sqrt(np.nanmean(vel, axis=0))

    def summary(self, name: str) -> dict:
        """Time-averaged metrics for one filter, excluding the warm-up steps."""
        rep = self.filters[name]
        cfg = self.cfg
        if not rep.applicable:
            return {"name": name, "applicable": False}
        kept = rep.surviving(cfg.loss_threshold, cfg.warmup)
        pos_rmse_t, vel_rmse_t = self.step_rmse(name)
        tail = slice(cfg.warmup, None)

        def tail_rmse(attr: str) -> float:
            if not kept or cfg.duration <= cfg.warmup:
                return float("nan")
            stacked = np.concatenate([getattr(r, attr)[tail] for r in kept])
            if not np.any(np.isfinite(stacked)):
                return float("nan")
            with np.errstate(invalid="ignore"):
                return float(np.sqrt(np.nanmean(stacked)))

        pos_rmse = tail_rmse("pos_sq_err")
        vel_rmse = tail_rmse("vel_sq_err")
        total_iters = sum(float(np.sum(r.iterations)) for r in rep.results)
        total_fb = sum(float(np.sum(r.fallback_iters)) for r in rep.results)
        avg_iters = (
            total_iters / sum(r.steps_completed for r in rep.results)
            if total_iters > 0 and any(r.steps_completed for r in rep.results)
            else 0.0
        )
        return {
            "name": name,
            "applicable": True,
            "pos_rmse": pos_rmse,
            "vel_rmse": vel_rmse,
            "pos_rmse_time": pos_rmse_t,
            "vel_rmse_time": vel_rmse_t,
            "avg_iters": avg_iters,
            "avg_time_s": float(np.mean([r.wall_time for r in rep.results])),
            "fallback_ratio": total_fb / total_iters if total_iters > 0 else float("nan"),
            "lost_runs": sum(run_lost(r, cfg.loss_threshold, cfg.warmup) for r in rep.results),
            "effective": effectiveness(
                rep.results, cfg.loss_threshold, cfg.min_fraction, cfg.warmup
            ),
        }


def _worker_count() -> int:
    env = os.environ.get("RKF_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_monte_carlo(cfg: ScenarioConfig, workers: int | None = None) -> MonteCarloReport:
    """All runs for all configured filters; aggregation is deterministic given
    the master seed regardless of execution order or worker count."""
    if workers is None:
        workers = _worker_count()
    filters = {
        s.name: FilterReport(
            name=s.name,
            applicable=not (s.kind == "kftncm" and true_covariance(cfg.noise) is None),
        )
        for s in cfg.filters
    }
    indices = range(cfg.mc_runs)
    if workers > 1 and cfg.mc_runs > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_run = list(pool.map(_run_index, [cfg] * cfg.mc_runs, indices))
    else:
        per_run = [_run_index(cfg, i) for i in indices]
    for run_results in per_run:  # already ordered by run index
        for name, result in run_results.items():
            filters[name].results.append(result)
    return MonteCarloReport(cfg=cfg, filters=filters)
