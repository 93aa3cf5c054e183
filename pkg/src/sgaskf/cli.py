"""Command-line harness: estimator sweeps, tracking benchmarks, sampler checks.

Subcommands
    scale-sweep   single-shot scale-function estimates over an eta grid
    track         Monte Carlo tracking benchmark, CSV (and optional SVG) output
    stable-check  distributional diagnostics of the mixing-law sampler
    version       print the package version

All CSV files are UTF-8 with a header row; numeric cells use round-trip
precision.  RKF_THREADS caps Monte Carlo worker processes.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from .estimators import (
    DegenerateEtaError,
    EstimatorFailure,
    GammaSeriesConfig,
    ScalePosterior,
    estimate_glq,
    estimate_gs,
    estimate_hybrid,
    estimate_is,
    laguerre_rule,
)
from .filters import EstimatorSpec, VbConfig
from .noise import NoiseFamily
from .stable import mixing_law, sample_positive_stable
from .tracking import FilterSetup, ScenarioConfig, run_monte_carlo

FILTER_NAMES = (
    "kf",
    "kftncm",
    "rkf-sgas-is",
    "rkf-sgas-glq",
    "rkf-sgas-gsis",
    "rkf-sgas-gsgl",
    "rstkf",
    "rkf-sl",
    "rkf-vg",
)

NOISE_KINDS = {
    "gaussian": "gaussian",
    "gm": "gaussian_mixture",
    "sgas": "sgas",
    "st": "student_t",
    "slash": "slash",
    "vg": "variance_gamma",
}

PAPER_R_SCALE = 10.0


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        return repr(x)
    return str(x)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(c) for c in row) for row in rows)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# scale-sweep
# ---------------------------------------------------------------------------

def _sweep_point(method: str, post: ScalePosterior, n: int, order: int, gs_cfg, rng):
    """Return (value, method_used, gs_terms); value None means no estimate."""
    if method == "is":
        out = estimate_is(post, n, rng)
    elif method == "glq":
        out = estimate_glq(post, laguerre_rule(order))
    elif method == "gs":
        out = estimate_gs(post, gs_cfg)
        if out is None:
            return None, "diverged", gs_cfg.cap_xi
    else:
        out = estimate_hybrid(method, post, gs_cfg, n, laguerre_rule(order), rng)
    return out.value, out.method_used, out.gs_terms_used


def cmd_scale_sweep(args) -> int:
    try:
        eta_grid = [float(v) for v in args.eta_grid.split(",") if v.strip()]
    except ValueError:
        print(f"error: --eta-grid must be comma-separated floats: {args.eta_grid!r}", file=sys.stderr)
        return 2
    if not eta_grid:
        print("error: --eta-grid is empty", file=sys.stderr)
        return 2
    if not 0.0 < args.alpha < 2.0:
        print(f"error: --alpha must be in (0, 2) for estimator sweeps, got {args.alpha}", file=sys.stderr)
        return 2
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    gs_cfg = GammaSeriesConfig(cap_xi=args.cap_xi, eps1=args.eps1, tau1=args.tau1)
    n_or_l = args.n if args.method in ("is", "gsis") else args.l
    rows = []
    for eta in eta_grid:
        rng = np.random.default_rng(np.random.SeedSequence(args.seed, spawn_key=(hash(eta) % 2**32,)))
        post = ScalePosterior(eta=eta, m=args.m, law=mixing_law(args.alpha))
        t0 = time.perf_counter_ns()
        try:
            value, used, gs_terms = _sweep_point(args.method, post, args.n, args.l, gs_cfg, rng)
        except (DegenerateEtaError, EstimatorFailure):
            value, used, gs_terms = None, "failed", None
        wall = time.perf_counter_ns() - t0
        rows.append([args.alpha, eta, args.m, args.method, n_or_l, value, used, gs_terms, wall])
    _write_csv(
        out_dir / "scale_sweep.csv",
        ["alpha", "eta", "m", "method", "n_or_l", "value", "method_used", "gs_terms", "wall_ns"],
        rows,
    )
    return 0


# ---------------------------------------------------------------------------
# track
# ---------------------------------------------------------------------------

# Offline maximum-likelihood surrogates for the benchmark filters' assumed
# Student-t parameters under mismatched noise, mirroring the upstream protocol
# of fitting each filter's distribution to noise samples before filtering.
# Keys are the generating shape; values are (dof, scale factor relative to the
# true scale matrix).  Calibrated once from 40k seeded samples per cell.
_T_FIT_UNDER_SGAS = {
    0.3: (0.2121, 0.01371),
    0.5: (0.3913, 0.1413),
    0.7: (0.6037, 0.3116),
    0.9: (0.8491, 0.445),
    1.1: (1.173, 0.5562),
    1.3: (1.594, 0.6212),
    1.5: (2.164, 0.6847),
    1.7: (3.193, 0.7415),
    1.85: (5.08, 0.8004),
}
_T_FIT_UNDER_GM = {
    1.0: (200.0, 0.9936),
    5.0: (7.026, 0.9867),
    10.0: (3.743, 0.8882),
    1e2: (1.577, 0.6858),
    1e3: (1.062, 0.5496),
    1e4: (0.8295, 0.4698),
    1e5: (0.6846, 0.4079),
    1e6: (0.607, 0.3588),
    1e7: (0.5382, 0.325),
    1e8: (0.4855, 0.3117),
}
# Quantile-based (McCulloch fractile) stable fits for the assumed alpha of the
# stable-family filters under mixture noise; monotonised in U because the
# fractile estimator is unreliable once the outlier component dominates the
# extreme percentiles.
_SGAS_FIT_UNDER_GM = {
    1.0: (1.99, 0.99),
    5.0: (1.84, 1.14),
    10.0: (1.78, 1.17),
    1e2: (1.53, 1.24),
    1e3: (1.42, 1.22),
    1e4: (1.30, 1.26),
    1e5: (1.26, 1.24),
    1e6: (1.25, 1.25),
    1e7: (1.25, 1.25),
    1e8: (1.25, 1.25),
}


def _interp_fit(table: dict[float, tuple[float, float]], x: float, log_x: bool) -> tuple[float, float]:
    keys = sorted(table)
    xs = [math.log10(k) if log_x else k for k in keys]
    q = math.log10(x) if log_x else x
    dof = float(np.interp(q, xs, [table[k][0] for k in keys]))
    factor = float(np.interp(q, xs, [table[k][1] for k in keys]))
    return dof, factor


def default_filter_params(name: str, noise: NoiseFamily) -> tuple[float, float]:
    """Assumed (shape, scale factor) when the config does not pin them.

    Matched families take the true parameters.  Mismatched benchmark filters
    take the calibrated t-fit surrogates above; the stable-family filters lack
    an in-scope fitting route, so under non-stable noise they fall back to a
    fixed mildly heavy alpha with the true scale matrix.
    """
    if name.startswith("rkf-sgas"):
        if noise.kind == "sgas":
            return noise.shape, 1.0
        if noise.kind == "student_t":
            return min(noise.shape, 1.85), 1.0
        if noise.kind == "gaussian_mixture":
            return _interp_fit(_SGAS_FIT_UNDER_GM, noise.outlier_scale, log_x=True)
        if noise.kind == "gaussian":
            return _SGAS_FIT_UNDER_GM[1.0]
        return 1.5, 1.0
    matched = {"rstkf": "student_t", "rkf-sl": "slash", "rkf-vg": "variance_gamma"}[name]
    if noise.kind == matched:
        return noise.shape, 1.0
    if noise.kind == "sgas":
        return _interp_fit(_T_FIT_UNDER_SGAS, noise.shape, log_x=False)
    if noise.kind == "gaussian_mixture":
        return _interp_fit(_T_FIT_UNDER_GM, noise.outlier_scale, log_x=True)
    if noise.kind == "gaussian":
        return _T_FIT_UNDER_GM[1.0]
    if noise.kind == "student_t":
        return noise.shape, 1.0  # same tail index and scale role
    return 5.0, 1.0


def _filter_setup(entry: dict, noise: NoiseFamily, vb_kw: dict, gs_cfg: GammaSeriesConfig) -> FilterSetup:
    name = entry["name"]
    if name not in FILTER_NAMES:
        raise KeyError(name)
    if name in ("kf", "kftncm"):
        return FilterSetup(name=name, kind=name)
    shape_default, factor_default = default_filter_params(name, noise)
    shape = float(entry.get("shape", shape_default))
    factor = float(entry.get("scale_factor", factor_default))
    n_particles = int(entry.get("particles", 100))
    order = int(entry.get("order", 2))
    family_kind = {
        "rstkf": "student_t",
        "rkf-sl": "slash",
        "rkf-vg": "variance_gamma",
    }.get(name, "sgas")
    family = NoiseFamily(
        kind=family_kind, scale_matrix=factor * np.asarray(noise.scale_matrix), shape=shape
    )
    if name.startswith("rkf-sgas"):
        est_kind = name.split("-")[-1]
        spec = EstimatorSpec(kind=est_kind, n_particles=n_particles, order=order, gs=gs_cfg)
    else:
        spec = EstimatorSpec(kind="closed_form")
    return FilterSetup(name=name, kind="vb", family=family, vb=VbConfig(estimator=spec, **vb_kw))


def scenario_from_dict(cfg: dict) -> ScenarioConfig:
    noise_cfg = cfg.get("noise", {})
    kind = NOISE_KINDS.get(noise_cfg.get("kind", "gm"), noise_cfg.get("kind", "gaussian_mixture"))
    r_scale = float(noise_cfg.get("r_scale", PAPER_R_SCALE))
    m = int(noise_cfg.get("dim", 2))
    shape = float(noise_cfg.get("shape", 100.0))
    kwargs = {}
    if kind == "gaussian_mixture":
        kwargs = {"outlier_scale": shape, "outlier_prob": float(noise_cfg.get("outlier_prob", 0.1))}
        shape = 1.0
    noise = NoiseFamily(kind=kind, scale_matrix=r_scale * np.eye(m), shape=shape, **kwargs)
    vb_dict = cfg.get("vb", {})
    vb_kw = {
        "max_iters": int(vb_dict.get("max_iters", 50)),
        "eps2": float(vb_dict.get("eps2", 1e-2)),
        "tau2": int(vb_dict.get("tau2", 4)),
    }
    gs_dict = cfg.get("gs", {})
    gs_cfg = GammaSeriesConfig(
        cap_xi=int(gs_dict.get("cap_xi", 30)),
        eps1=float(gs_dict.get("eps1", 1e-2)),
        tau1=int(gs_dict.get("tau1", 4)),
    )
    entries = cfg.get("filters") or [{"name": n} for n in
                                     ("kf", "kftncm", "rkf-sgas-gsis", "rstkf", "rkf-sl", "rkf-vg")]
    filters = tuple(_filter_setup(e, noise, vb_kw, gs_cfg) for e in entries)
    return ScenarioConfig(
        noise=noise,
        filters=filters,
        duration=int(cfg.get("duration", 100)),
        dt=float(cfg.get("dt", 1.0)),
        q_factor=float(cfg.get("q_factor", 0.1)),
        mc_runs=int(cfg.get("mc_runs", 20)),
        master_seed=int(cfg.get("seed", 0)),
        loss_threshold=float(cfg.get("loss_threshold", 500.0)),
        min_fraction=float(cfg.get("min_fraction", 0.95)),
        warmup=int(cfg.get("warmup", 10)),
    )


def _noise_shape_param(noise: NoiseFamily) -> float:
    return noise.outlier_scale if noise.kind == "gaussian_mixture" else noise.shape


def _plot_rmse(report, path: Path, which: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "sgaskf"
    fig, ax = plt.subplots(figsize=(7, 4))
    steps = np.arange(1, report.cfg.duration + 1)
    for name in report.filters:
        summary = report.summary(name)
        if not summary["applicable"]:
            continue
        series = summary["pos_rmse_time"] if which == "pos" else summary["vel_rmse_time"]
        ax.plot(steps, series, label=name)
    ax.set_xlabel("step")
    ax.set_ylabel(f"{which} RMSE")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_track(args) -> int:
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            print(f"error: cannot read config: {exc}", file=sys.stderr)
            return 2
        except json.JSONDecodeError as exc:
            print(
                f"error: config parse failure at line {exc.lineno}, column {exc.colno}: {exc.msg}",
                file=sys.stderr,
            )
            return 2
    else:
        raw = {"noise": {"kind": args.noise, "shape": args.shape}}
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.paper_scale:
        raw["duration"] = 300
        raw["mc_runs"] = 100
    try:
        cfg = scenario_from_dict(raw)
    except KeyError as exc:
        print(
            f"error: unknown filter name {exc.args[0]!r}; valid names: {', '.join(FILTER_NAMES)}",
            file=sys.stderr,
        )
        return 2
    except (ValueError, TypeError) as exc:
        print(f"error: bad config: {exc}", file=sys.stderr)
        return 2

    report = run_monte_carlo(cfg, workers=args.workers)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    shape_param = _noise_shape_param(cfg.noise)

    time_rows = []
    for name in report.filters:
        summary = report.summary(name)
        if not summary["applicable"]:
            continue
        pos_t, vel_t = summary["pos_rmse_time"], summary["vel_rmse_time"]
        for k in range(cfg.duration):
            time_rows.append([k + 1, name, float(pos_t[k]), float(vel_t[k])])
    _write_csv(out_dir / "rmse_time.csv", ["step", "filter", "pos_rmse", "vel_rmse"], time_rows)

    summary_rows = []
    for name in report.filters:
        summary = report.summary(name)
        if not summary["applicable"]:
            summary_rows.append([name, shape_param, None, None, None, None, None, "na"])
            continue
        is_hybrid = name in ("rkf-sgas-gsis", "rkf-sgas-gsgl")
        summary_rows.append(
            [
                name,
                shape_param,
                summary["pos_rmse"],
                summary["vel_rmse"],
                summary["avg_iters"],
                summary["avg_time_s"] if args.timing else None,
                summary["fallback_ratio"] if is_hybrid else None,
                "true" if summary["effective"] else "false",
            ]
        )
    _write_csv(
        out_dir / "summary.csv",
        ["filter", "shape_param", "pos_rmse", "vel_rmse", "avg_iters", "avg_time_s",
         "fallback_ratio", "effective"],
        summary_rows,
    )
    if args.plots:
        _plot_rmse(report, out_dir / "rmse_pos_time.svg", "pos")
        _plot_rmse(report, out_dir / "rmse_vel_time.svg", "vel")
    return 0


# ---------------------------------------------------------------------------
# stable-check
# ---------------------------------------------------------------------------

def cmd_stable_check(args) -> int:
    alpha = args.alpha
    if not 0.0 < alpha <= 2.0:
        print(f"error: alpha must be in (0, 2], got {alpha}", file=sys.stderr)
        return 2
    if alpha == 2.0:
        print("alpha = 2: mixing law is the point mass at 1 (degenerate branch); nothing to test")
        return 0
    rng = np.random.default_rng(args.seed)
    law = mixing_law(alpha)
    y = sample_positive_stable(law, args.samples, rng)
    ok = True
    for s in (0.5, 1.0, 2.0):
        vals = np.exp(-s * y)
        se = vals.std(ddof=1) / math.sqrt(len(vals))
        z = (vals.mean() - math.exp(-(s ** law.alpha1))) / se
        status = "ok" if abs(z) < 3.0 else "FAIL"
        print(f"laplace s={s}: z = {z:+.2f} ({status})")
        ok = ok and abs(z) < 3.0
    if alpha == 1.0:
        ks = stats.kstest(y, stats.levy(loc=0.0, scale=0.5).cdf)
        status = "ok" if ks.pvalue > 0.01 else "FAIL"
        print(f"ks vs levy(0, 1/2): p = {ks.pvalue:.4f} ({status})")
        ok = ok and ks.pvalue > 0.01
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgaskf", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sweep = sub.add_parser("scale-sweep", help="single-shot scale-function estimates")
    sweep.add_argument("--alpha", type=float, required=True)
    sweep.add_argument("--eta-grid", type=str, required=True, help="comma-separated eta values")
    sweep.add_argument("--m", type=int, default=2)
    sweep.add_argument("--method", choices=("is", "glq", "gs", "gsis", "gsgl"), required=True)
    sweep.add_argument("--n", type=int, default=100, help="IS particle count")
    sweep.add_argument("--l", type=int, default=2, help="Laguerre order")
    sweep.add_argument("--cap-xi", type=int, default=30)
    sweep.add_argument("--eps1", type=float, default=1e-2)
    sweep.add_argument("--tau1", type=int, default=4)
    sweep.add_argument("--seed", type=int, default=0)
    sweep.add_argument("--out", type=str, default=".")
    sweep.set_defaults(func=cmd_scale_sweep)

    track = sub.add_parser("track", help="Monte Carlo tracking benchmark")
    track.add_argument("--config", type=str, default=None, help="JSON scenario config")
    track.add_argument("--out", type=str, default=".")
    track.add_argument("--seed", type=int, default=None)
    track.add_argument("--paper-scale", action="store_true", help="300 steps, 100 runs")
    track.add_argument("--noise", choices=tuple(NOISE_KINDS), default="gm",
                       help="preset noise family when no config file is given")
    track.add_argument("--shape", type=float, default=100.0,
                       help="preset shape parameter (alpha, dof, or U)")
    track.add_argument("--plots", action="store_true", help="emit SVG line charts")
    track.add_argument("--timing", action="store_true",
                       help="fill avg_time_s with measured wall time (not reproducible)")
    track.add_argument("--workers", type=int, default=None)
    track.set_defaults(func=cmd_track)

    check = sub.add_parser("stable-check", help="sampler diagnostics")
    check.add_argument("--alpha", type=float, required=True)
    check.add_argument("--seed", type=int, default=0)
    check.add_argument("--samples", type=int, default=10**5)
    check.set_defaults(func=cmd_stable_check)

    ver = sub.add_parser("version", help="print version")
    ver.set_defaults(func=lambda args: print(__version__) or 0)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
