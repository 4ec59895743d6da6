"""Command-line entry point: ``uwbcalib <command> [options]``.

Exit codes: 0 success, 1 runtime failure, 2 malformed configuration,
3 degenerate initialization geometry.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import (MODES, ConfigError, RunConfig, config_schema, config_to_dict, load_config,
                     validate_config)
from .fim import general_gaussian_fim
from .initializer import InitEntry, InitWindow
from .io import dumps_json, write_csv, write_json
from .montecarlo import (cell_fields, cell_rows, init_window_poses, run_montecarlo, win_table,
                         worker_count)
from .pipeline import run_pipeline, trace_fields
from .sim import generate
from .state import IMU_DIM, RobotState, Rotation3
from .uwb import RangingMeasurement, TagExtrinsics

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_SINGULAR = 0, 1, 2, 3


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.scenario.seed = args.seed
    if getattr(args, "mode", None) is not None:
        cfg.mode = args.mode
    if getattr(args, "out", None) is not None:
        cfg.out = args.out
    if getattr(args, "trials", None) is not None:
        cfg.montecarlo.trials = args.trials
    if args.command == "montecarlo" and getattr(args, "mode", None) is not None:
        cfg.montecarlo.modes = [args.mode]
    return validate_config(cfg)


# ---------------------------------------------------------------------------
# simulate


def _vec_cols(prefix, names="xyz"):
    return [f"{prefix}{c}" for c in names]


def cmd_simulate(cfg: RunConfig, args):
    data = generate(cfg.scenario)
    out = Path(cfg.out)
    truth_fields = ["t", *_vec_cols("p"), *_vec_cols("q", "wxyz"), *_vec_cols("v"),
                    *_vec_cols("bg"), *_vec_cols("ba")]
    rows = []
    for k in range(len(data.t)):
        q = Rotation3.from_matrix(data.R[k]).q
        rows.append(dict(zip(truth_fields, [data.t[k], *data.p[k], *q, *data.v[k],
                                            *data.bg[k], *data.ba[k]])))
    write_csv(out / "truth.csv", truth_fields, rows)
    imu_fields = ["t", *_vec_cols("gyro_"), *_vec_cols("accel_")]
    write_csv(out / "imu.csv", imu_fields,
              [dict(zip(imu_fields, [s.t, *s.gyro, *s.accel])) for s in data.imu])
    cam_rows = [{"t": o.t, "landmark_id": o.landmark_id, "u": o.uv[0], "v": o.uv[1]}
                for k in sorted(data.frames) for o in data.frames[k]]
    write_csv(out / "camera.csv", ["t", "landmark_id", "u", "v"], cam_rows)
    rng_rows = [{"t": m.t, "anchor_id": m.anchor_id, "distance": m.distance}
                for k in sorted(data.ranges) for m in data.ranges[k]]
    write_csv(out / "ranges.csv", ["t", "anchor_id", "distance"], rng_rows)
    write_csv(out / "landmarks.csv", ["landmark_id", "x", "y", "z"],
              [{"landmark_id": i, "x": l[0], "y": l[1], "z": l[2]}
               for i, l in enumerate(data.landmarks)])
    write_csv(out / "anchors.csv", ["anchor_id", "px", "py", "pz", "beta", "gamma"],
              [{"anchor_id": a.anchor_id, "px": a.p_a[0], "py": a.p_a[1], "pz": a.p_a[2],
                "beta": a.beta, "gamma": a.gamma} for a in data.anchors])
    write_json(out / "config.json", config_to_dict(cfg))
    print(f"simulated {data.t[-1]:.1f} s: {len(data.imu)} IMU samples, {len(data.frames)} "
          f"camera frames, {len(rng_rows)} ranges -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# calibrate


def calibration_summary(cfg: RunConfig, result, data):
    m = result.metrics
    anchors = []
    for a in result.state.anchors:
        tr = data.anchors[a.anchor_id]
        anchors.append({"anchor_id": a.anchor_id, "p_a": a.p_a, "beta": a.beta,
                        "gamma": a.gamma, "true_p_a": tr.p_a,
                        "pos_err": float(np.linalg.norm(a.p_a - tr.p_a))})
    summary = {"mode": m.mode, "seed": m.seed, "status": m.status, "metrics": m.to_dict(),
               "anchors": anchors}
    degenerate = [f for f in m.flags if f in ("static", "collinear", "planar", "planar-z")]
    if degenerate:
        summary["degenerate"] = degenerate[0]
    return summary


def cmd_calibrate(cfg: RunConfig, args):
    data = generate(cfg.scenario)
    result = run_pipeline(cfg, data, cfg.mode)
    out = Path(cfg.out)
    write_csv(out / "trace.csv", trace_fields(result.n_anchors), result.trace)
    summary = calibration_summary(cfg, result, data)
    write_json(out / "summary.json", summary)
    m = result.metrics
    print(f"mode {m.mode}, seed {m.seed}: {m.status}")
    if m.status == "singular":
        print(f"initialization failed: {m.message}")
        print(f"degenerate: {summary.get('degenerate', 'unknown')}")
        return EXIT_SINGULAR
    if m.status != "ok":
        print(f"run failed: {m.message}")
        return EXIT_FAIL
    print(f"  position RMSE {m.prmse:.4f} m, attitude RMSE {m.ormse:.4f} deg, "
          f"{m.uwb_updates} range updates")
    for a in summary["anchors"]:
        print(f"  anchor {a['anchor_id']}: |p_a error| {a['pos_err']:.4f} m, "
              f"beta {a['beta']:.4f}, gamma {a['gamma']:.4f}")
    print(f"wrote {out / 'trace.csv'} and {out / 'summary.json'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# fim


def fim_window(cfg: RunConfig, anchor_index, sigma_r, poses=None):
    """Noise-free window on the truth trajectory with isotropic pose variance
    ``init_position^2 + sigma_r^2`` per axis."""
    sc = cfg.scenario
    t, R, p = poses if poses is not None else init_window_poses(cfg, spacing=False)
    a = sc.anchors[anchor_index]
    ext = TagExtrinsics(np.asarray(sc.tag_offset, dtype=float))
    P = np.zeros((IMU_DIM, IMU_DIM))
    P[0:3, 0:3] = sc.noise.init_attitude ** 2 * np.eye(3)
    P[12:15, 12:15] = (sc.noise.init_position ** 2 + sigma_r ** 2) * np.eye(3)
    entries = []
    for k in range(len(t)):
        robot = RobotState(Rotation3.from_matrix(R[k]), np.zeros(3), np.zeros(3), np.zeros(3),
                           p[k], float(t[k]))
        tag = p[k] + R[k] @ ext.p_T
        d = a.beta * float(np.linalg.norm(tag - np.asarray(a.position))) + a.gamma
        entries.append(InitEntry(robot, P, RangingMeasurement(anchor_index, d, float(t[k]))))
    return InitWindow(anchor_index, entries, 1), ext


def fim_report(cfg: RunConfig):
    sc = cfg.scenario
    poses = init_window_poses(cfg, spacing=False)
    anchors = []
    for i, a in enumerate(sc.anchors):
        w, ext = fim_window(cfg, i, sc.sigma_r, poses)
        x_U = [*a.position, a.beta, a.gamma]
        rep = general_gaussian_fim(w, x_U, sc.noise.range_std, ext)
        anchors.append({"anchor_id": i, **rep.to_dict()})
    levels = sorted({c.sigma_r for c in cfg.montecarlo.grid if c.sigma_r is not None})
    sweep = []
    for s in levels:
        dets = []
        for i, a in enumerate(sc.anchors):
            w, ext = fim_window(cfg, i, s, poses)
            rep = general_gaussian_fim(w, [*a.position, a.beta, a.gamma],
                                       sc.noise.range_std, ext)
            dets.append(rep.det)
        sweep.append({"sigma_r": s, "det_f": dets})
    return {"sigma_r": sc.sigma_r, "window_size": int(len(poses[0])), "anchors": anchors,
            "sweep": sweep}


def cmd_fim(cfg: RunConfig, args):
    report = fim_report(cfg)
    out = Path(cfg.out)
    write_json(out / "fim.json", report)
    print(f"FIM over a {report['window_size']}-range window, sigma_r {report['sigma_r']:g}")
    for a in report["anchors"]:
        flags = ", ".join(a["flags"]) or "none"
        print(f"  anchor {a['anchor_id']}: det {a['det_f']:.6g}, rank {a['rank']}, "
              f"position rank {a['position_rank']}, geometry flags: {flags}")
    for s in report["sweep"]:
        print(f"  sigma_r {s['sigma_r']:g}: det " + " ".join(f"{d:.6g}" for d in s["det_f"]))
    print(f"wrote {out / 'fim.json'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# montecarlo / config-dump


def cmd_montecarlo(cfg: RunConfig, args):
    report = run_montecarlo(cfg, cfg.montecarlo.trials, args.workers)
    out = Path(cfg.out)
    write_json(out / "montecarlo.json", report)
    write_csv(out / "montecarlo_cells.csv", cell_fields(report), cell_rows(report))
    print(f"{report['experiment']} experiment, {report['trials']} trials per cell, "
          f"base seed {report['seed']}")
    print(win_table(report))
    print(f"wrote {out / 'montecarlo.json'} and {out / 'montecarlo_cells.csv'}")
    return EXIT_OK


def cmd_config_dump(cfg: RunConfig, args):
    out = Path(cfg.out)
    write_json(out / "config.json", config_to_dict(cfg))
    write_json(out / "config.schema.json", config_schema())
    sys.stdout.write(dumps_json(config_to_dict(cfg)))
    print(f"wrote {out / 'config.json'} and {out / 'config.schema.json'}")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "calibrate": cmd_calibrate, "fim": cmd_fim,
            "montecarlo": cmd_montecarlo, "config-dump": cmd_config_dump}


def build_parser():
    ap = argparse.ArgumentParser(prog="uwbcalib",
                                 description="UWB anchor calibration on simulated VIO data.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("simulate", "generate a scenario and write its streams"),
                        ("calibrate", "run one calibration trial"),
                        ("fim", "Fisher information of the initialization window"),
                        ("montecarlo", "Monte Carlo experiment over the config grid"),
                        ("config-dump", "write the fully resolved config and its schema")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON config file or bundled preset name")
        p.add_argument("--seed", type=int, help="scenario seed")
        p.add_argument("--out", help="output directory")
        if name in ("calibrate", "montecarlo", "config-dump"):
            p.add_argument("--mode", choices=MODES, help="initializer+refiner combination")
        if name == "montecarlo":
            p.add_argument("--trials", type=int, help="trials per grid cell")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve(args)
        workers = worker_count()
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "montecarlo":
        args.workers = workers
    return COMMANDS[args.command](cfg, args)


if __name__ == "__main__":
    sys.exit(main())
