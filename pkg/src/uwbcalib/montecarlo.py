"""Monte Carlo driver.

Two experiments:

* ``pipeline``: every grid cell overrides ``sigma_r``/``sigma_i``/``sigma_u``
  and runs the configured modes on the same simulated data per trial.
* ``init``: initializer-only study.  Windows are built from truth poses
  along the trajectory, corrupted as in
  :func:`uwbcalib.sim.localization_errors` with the injected variance
  reported to the solver, and the robust and plain least-squares
  initializers are scored by anchor RMSE.

Trial ``i`` uses seed ``base_seed + i`` for its scenario, so one trial with
the base seed reproduces a single ``calibrate`` run.  Results are collected in
trial order, so the report does not depend on the number of workers.
"""
from __future__ import annotations

import copy
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .config import RunConfig
from .initializer import (InitEntry, InitWindow, InsufficientMeasurementsError,
                          SingularGeometryError, SolverOptions, ls_initialize, robust_initialize)
from .pipeline import TrialMetrics, run_modes
from .sim import attitude_eval, localization_errors, trajectory_eval
from .state import IMU_DIM, RobotState, Rotation3
from .uwb import RangingMeasurement, TagExtrinsics

THREADS_ENV = "UWBCALIB_THREADS"
SUMMARY_KEYS = ("prmse", "ormse", "mean_anchor_err")


def worker_count():
    """Worker processes from ``UWBCALIB_THREADS`` (default 1)."""
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return min(n, os.cpu_count() or 1)


def cell_config(cfg: RunConfig, cell) -> RunConfig:
    out = copy.deepcopy(cfg)
    for name in ("sigma_r", "sigma_i", "sigma_u"):
        v = getattr(cell, name)
        if v is not None:
            setattr(out.scenario, name, float(v))
    return out


def cell_label(cfg: RunConfig):
    sc = cfg.scenario
    return {"sigma_r": sc.sigma_r, "sigma_i": sc.sigma_i, "sigma_u": sc.sigma_u}


# ---------------------------------------------------------------------------
# trials


def pipeline_trial(cfg: RunConfig, seed: int, modes):
    c = copy.deepcopy(cfg)
    c.scenario.seed = int(seed)
    res = run_modes(c, modes=modes, keep_trace=False)
    return {m: res[m].metrics.to_dict() for m in modes}


def init_window_poses(cfg: RunConfig, spacing=True):
    """Truth poses ``(t, R, p)`` at the range epochs of the initialization
    period, at most ``montecarlo.init_window`` of them.  With ``spacing`` an
    epoch is kept only once the body moved ``range_spacing`` since the last
    kept one."""
    sc = cfg.scenario
    t = np.arange(0.5 / sc.uwb_rate, max(sc.init_duration, 1.0 / sc.uwb_rate), 1.0 / sc.uwb_rate)
    p, _ = trajectory_eval(sc.trajectory, t)
    R = attitude_eval(sc.trajectory, t)
    keep, last = [], None
    for i in range(len(t)):
        if not spacing or last is None or np.linalg.norm(p[i] - last) >= sc.range_spacing:
            keep.append(i)
            last = p[i]
        if len(keep) >= cfg.montecarlo.init_window:
            break
    return t[keep], R[keep], p[keep]


def init_trial(cfg: RunConfig, seed: int, poses=None):
    """Score both initializers on one set of windows; anchor RMSE per solver."""
    sc = cfg.scenario
    t, R, p = poses if poses is not None else init_window_poses(cfg)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 3]))
    ext = TagExtrinsics(np.asarray(sc.tag_offset, dtype=float))
    tags = p + R @ ext.p_T
    n = len(t)
    err, var = localization_errors(n, sc.sigma_r, sc.sigma_r_model, rng)
    base = np.zeros(IMU_DIM)
    base[0:3] = sc.noise.init_attitude ** 2
    base[12:15] = sc.noise.init_position ** 2
    robots, covs = [], []
    for k in range(n):
        robots.append(RobotState(Rotation3.from_matrix(R[k]), np.zeros(3), np.zeros(3),
                                 np.zeros(3), p[k] + err[k], float(t[k])))
        P = np.diag(base)
        P[12:15, 12:15] += var[k] * np.eye(3)
        covs.append(P)
    opts = SolverOptions(range_std=sc.noise.range_std, max_iter=cfg.solver.max_iter,
                         step_tol=cfg.solver.step_tol, max_halvings=cfg.solver.max_halvings,
                         whiten=cfg.solver.whiten, guess=cfg.solver.initial_guess)
    errs = {"ri": [], "lsi": []}
    for aid, a in enumerate(sc.anchors):
        pa = np.asarray(a.position, dtype=float)
        rho = np.linalg.norm(tags - pa, axis=1)
        d = a.beta * (rho + rng.normal(0.0, sc.noise.range_std, n)) + a.gamma
        w = InitWindow(aid, [InitEntry(robots[k], covs[k], RangingMeasurement(aid, float(d[k]),
                                                                              float(t[k])))
                             for k in range(n)], min(cfg.filter.min_window, n))
        for name, solve in (("ri", robust_initialize), ("lsi", ls_initialize)):
            try:
                res = solve(w, ext, opts)
                ok = res.status != "singular"
            except (SingularGeometryError, InsufficientMeasurementsError):
                ok = False
            errs[name].append(float(np.linalg.norm(res.p_a - pa)) if ok else float("nan"))
    return {name: float(np.sqrt(np.mean(np.square(e)))) for name, e in errs.items()}


def _run_pipeline_task(args):
    cfg, seed, modes = args
    return pipeline_trial(cfg, seed, modes)


def _run_init_task(args):
    cfg, seed, poses = args
    return init_trial(cfg, seed, poses)


def _map(fn, tasks, workers):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


# ---------------------------------------------------------------------------
# aggregation


def summarize(values):
    x = np.asarray([v for v in values if v is not None and np.isfinite(v)], dtype=float)
    if x.size == 0:
        return {"mean": None, "median": None, "std": None, "n": 0}
    return {"mean": float(np.mean(x)), "median": float(np.median(x)),
            "std": float(np.std(x)), "n": int(x.size)}


def win_rate(a, b):
    """Fraction of trials where ``a < b``; a failed side loses."""
    wins = []
    for x, y in zip(a, b):
        fx = x is not None and np.isfinite(x)
        fy = y is not None and np.isfinite(y)
        wins.append(fx and (not fy or x < y))
    return float(np.mean(wins)) if wins else None


def _metric(d, key):
    if d["status"] != "ok":
        return None
    if key == "mean_anchor_err":
        return TrialMetrics.from_dict(d).mean_anchor_err
    return d[key]


def _pipeline_cell(label, trials, modes, seeds):
    per_mode = {}
    for m in modes:
        rows = [tr[m] for tr in trials]
        per_mode[m] = {
            "trials": rows,
            "failures": sum(r["status"] != "ok" for r in rows),
            "summary": {k: summarize([_metric(r, k) for r in rows]) for k in SUMMARY_KEYS},
        }
    wins = {}
    for i, a in enumerate(modes):
        for b in modes[i + 1:]:
            for x, y in ((a, b), (b, a)):
                wins[f"{x} < {y}"] = {
                    k: win_rate([_metric(r, k) for r in per_mode[x]["trials"]],
                                [_metric(r, k) for r in per_mode[y]["trials"]])
                    for k in ("prmse", "mean_anchor_err")}
    return {**label, "seeds": seeds, "modes": per_mode, "win_rates": wins}


def _init_cell(label, trials, seeds):
    rmse = {k: [tr[k] for tr in trials] for k in ("ri", "lsi")}
    return {**label, "seeds": seeds,
            "rmse": rmse,
            "failures": {k: int(sum(not np.isfinite(v) for v in vals))
                         for k, vals in rmse.items()},
            "summary": {k: summarize(v) for k, v in rmse.items()},
            "win_rates": {"ri < lsi": win_rate(rmse["ri"], rmse["lsi"]),
                          "lsi < ri": win_rate(rmse["lsi"], rmse["ri"])}}


def run_montecarlo(cfg: RunConfig, trials=None, workers=None):
    """Run the configured experiment over the grid; returns the report dict."""
    mc = cfg.montecarlo
    trials = int(trials if trials is not None else mc.trials)
    if trials < 1:
        raise ValueError("trials must be at least 1")
    workers = worker_count() if workers is None else int(workers)
    base = int(cfg.scenario.seed)
    seeds = [base + i for i in range(trials)]
    cells = [cell_config(cfg, c) for c in mc.grid]
    report = {"experiment": mc.experiment, "seed": base, "trials": trials, "cells": []}
    if mc.experiment == "init":
        poses = init_window_poses(cfg)
        report["window_size"] = int(len(poses[0]))
        tasks = [(c, s, poses) for c in cells for s in seeds]
        flat = _map(_run_init_task, tasks, workers)
        for i, c in enumerate(cells):
            report["cells"].append(_init_cell(cell_label(c), flat[i * trials:(i + 1) * trials],
                                              seeds))
        return report
    modes = list(mc.modes)
    report["modes"] = modes
    tasks = [(c, s, modes) for c in cells for s in seeds]
    flat = _map(_run_pipeline_task, tasks, workers)
    for i, c in enumerate(cells):
        report["cells"].append(_pipeline_cell(cell_label(c), flat[i * trials:(i + 1) * trials],
                                              modes, seeds))
    return report


# ---------------------------------------------------------------------------
# flat tables


def cell_rows(report):
    """One row per (cell, trial, mode) for the per-cell CSV."""
    rows = []
    for ci, cell in enumerate(report["cells"]):
        label = {"cell": ci, "sigma_r": cell["sigma_r"], "sigma_i": cell["sigma_i"],
                 "sigma_u": cell["sigma_u"]}
        if report["experiment"] == "init":
            for ti, seed in enumerate(cell["seeds"]):
                for name in ("ri", "lsi"):
                    rows.append({**label, "trial": ti, "seed": seed, "mode": name,
                                 "status": "ok" if np.isfinite(_nan(cell["rmse"][name][ti]))
                                 else "singular",
                                 "anchor_rmse": cell["rmse"][name][ti]})
            continue
        for ti, seed in enumerate(cell["seeds"]):
            for m, pm in cell["modes"].items():
                r = pm["trials"][ti]
                row = {**label, "trial": ti, "seed": seed, "mode": m, "status": r["status"],
                       "prmse": r["prmse"], "ormse": r["ormse"],
                       "mean_anchor_err": _metric(r, "mean_anchor_err"),
                       "uwb_updates": r["uwb_updates"]}
                for j, e in enumerate(r["anchor_pos_err"]):
                    row[f"a{j}_err"] = e
                for j, e in enumerate(r["anchor_nees"]):
                    row[f"a{j}_nees"] = e
                rows.append(row)
    return rows


def cell_fields(report):
    if report["experiment"] == "init":
        return ["cell", "sigma_r", "sigma_i", "sigma_u", "trial", "seed", "mode", "status",
                "anchor_rmse"]
    n = 0
    for cell in report["cells"]:
        for pm in cell["modes"].values():
            for r in pm["trials"]:
                n = max(n, len(r["anchor_pos_err"]))
    return (["cell", "sigma_r", "sigma_i", "sigma_u", "trial", "seed", "mode", "status",
             "prmse", "ormse", "mean_anchor_err", "uwb_updates"]
            + [f"a{j}_err" for j in range(n)] + [f"a{j}_nees" for j in range(n)])


def _nan(x):
    return float("nan") if x is None else x


def win_table(report):
    """Human-readable win-rate table."""
    lines = []
    if report["experiment"] == "init":
        lines.append(f"{'sigma_r':>8} {'RI rmse':>10} {'LSI rmse':>10} {'RI wins':>8}")
        for c in report["cells"]:
            s = c["summary"]
            lines.append(f"{c['sigma_r']:>8.3g} {_fmt(s['ri']['mean']):>10} "
                         f"{_fmt(s['lsi']['mean']):>10} {_fmt(c['win_rates']['ri < lsi']):>8}")
        return "\n".join(lines)
    lines.append(f"{'sigma_r':>7} {'sigma_i':>7} {'sigma_u':>7}  {'comparison':<22} "
                 f"{'anchor':>7} {'prmse':>7}")
    for c in report["cells"]:
        for name, w in c["win_rates"].items():
            lines.append(f"{c['sigma_r']:>7.3g} {c['sigma_i']:>7.3g} {c['sigma_u']:>7.3g}  "
                         f"{name:<22} {_fmt(w['mean_anchor_err']):>7} {_fmt(w['prmse']):>7}")
    return "\n".join(lines)


def _fmt(x):
    return "-" if x is None else f"{x:.3f}"
