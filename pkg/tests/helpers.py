"""Shared builders for the test suite."""
from __future__ import annotations

import numpy as np

from uwbcalib.config import RunConfig
from uwbcalib.initializer import InitEntry, InitWindow
from uwbcalib.state import (ANCHOR_DIM, CLONE_DIM, IMU_DIM, BlockCovariance, CalibState,
                            PoseClone, RobotState, Rotation3)
from uwbcalib.uwb import RangingMeasurement, TagExtrinsics, UwbState, predict_range


def random_rotation(rng, scale=1.0):
    return Rotation3.from_rotvec(rng.normal(0.0, scale, 3))


def random_robot(rng, n_clones=0):
    r = RobotState(random_rotation(rng), rng.normal(0, 0.01, 3), rng.normal(0, 1, 3),
                   rng.normal(0, 0.1, 3), rng.normal(0, 3, 3), t=float(n_clones))
    r.clones = [PoseClone(float(i), random_rotation(rng), rng.normal(0, 3, 3))
                for i in range(n_clones)]
    return r


def random_anchor(rng, anchor_id=0):
    return UwbState(anchor_id, rng.uniform(-10, 10, 3) + np.array([0, 0, 12.0]),
                    float(rng.uniform(0.8, 1.2)), float(rng.normal(0, 0.5)))


def random_spd(rng, n, scale=1.0):
    A = rng.normal(0, 1, (n, n))
    return scale * (A @ A.T / n + 0.1 * np.eye(n))


def random_calib(rng, n_clones=2, n_anchors=1):
    robot = random_robot(rng, n_clones)
    anchors = [random_anchor(rng, j) for j in range(n_anchors)]
    dim = IMU_DIM + CLONE_DIM * n_clones + ANCHOR_DIM * n_anchors
    cov = BlockCovariance(random_spd(rng, dim, 0.01), n_clones, n_anchors)
    return CalibState(robot, anchors), cov


def lissajous_positions(n, center=(0.0, 0.0, 1.5), amp=(4.0, 4.0, 1.5),
                        period=(14.0, 10.0, 8.0), duration=20.0):
    t = np.linspace(0.0, duration, n)
    w = 2 * np.pi / np.asarray(period)
    p = np.asarray(center) + np.asarray(amp) * np.sin(np.outer(t, w) + [0, np.pi / 2, 0])
    return t, p


def make_window(positions, anchor: UwbState, ext=TagExtrinsics(), noise=0.0, rng=None,
                P_II=None, rotations=None, times=None, min_size=4):
    """Window of ranges from the given positions (identity attitude by default)."""
    entries = []
    n = len(positions)
    times = np.arange(n, dtype=float) if times is None else times
    for k, p in enumerate(positions):
        rot = Rotation3.identity() if rotations is None else rotations[k]
        robot = RobotState(rot, np.zeros(3), np.zeros(3), np.zeros(3), np.asarray(p, float),
                           float(times[k]))
        d = predict_range(robot, anchor, ext)
        if noise > 0:
            d += anchor.beta * rng.normal(0.0, noise)
        P = np.zeros((IMU_DIM, IMU_DIM)) if P_II is None else (
            P_II[k] if np.ndim(P_II) == 3 else P_II)
        entries.append(InitEntry(robot, P, RangingMeasurement(anchor.anchor_id, d,
                                                              float(times[k]))))
    return InitWindow(anchor.anchor_id, entries, min_size)


def position_cov(var, att_var=0.0):
    P = np.zeros((IMU_DIM, IMU_DIM))
    P[12:15, 12:15] = var * np.eye(3)
    P[0:3, 0:3] = att_var * np.eye(3)
    return P


def fast_config(**scenario):
    """Nominal configuration shortened for unit tests."""
    cfg = RunConfig()
    cfg.scenario.duration = 20.0
    cfg.scenario.imu_rate = 50.0
    for k, v in scenario.items():
        setattr(cfg.scenario, k, v)
    return cfg


def range_jacobian_fd_error(rng, step=1e-6):
    """Relative error between analytic range Jacobians and central finite
    differences of the range model, for one random configuration."""
    from uwbcalib.state import boxplus
    from uwbcalib.uwb import range_jacobians

    robot = random_robot(rng)
    uwb = random_anchor(rng)
    ext = TagExtrinsics(rng.normal(0, 0.3, 3))
    state = CalibState(robot, [uwb])
    H_I, H_U = range_jacobians(robot, uwb, ext)
    analytic = np.concatenate([H_I, H_U])
    fd = np.empty(state.error_dim)
    for i in range(state.error_dim):
        e = np.zeros(state.error_dim)
        e[i] = step
        hi, lo = boxplus(state, e), boxplus(state, -e)
        fd[i] = (predict_range(hi.robot, hi.anchors[0], ext)
                 - predict_range(lo.robot, lo.anchors[0], ext)) / (2 * step)
    return float(np.max(np.abs(analytic - fd)) / np.max(np.abs(analytic)))
